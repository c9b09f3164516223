//! Penalized weights plus an implicit constraint correction.
//!
//! The consensus point is formed under J + lambda1 g^2. Each particle then
//! takes the explicit predictor v = x - tau (x - m) + sigma Noise and solves
//!     (I + 2 tau lambda2 g(x) grad-structure) x_new = v
//! with g frozen at the pre-move position, which has a closed form for each
//! supported set: a normal shift for hyperplanes, a scalar division for the
//! sphere, and a dense solve for general quadrics. All three share the same
//! scalar coefficients, so zero weights collapse to the plain dynamic value
//! for value and the identity quadric reproduces the sphere division.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::dynamics::{
    begin_step, drift_noise_update, for_each_particle, post_step, step_draw, OptimizerParams,
    OptimizerState,
};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::variants::PenaltyObjective;

pub(super) fn step(
    set: &ConstraintSet,
    lambda1: f64,
    lambda2: f64,
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let weighted = PenaltyObjective::new(objective, set, 2, lambda1)?;
    let point = begin_step(state, &weighted, params)?;
    let (d, tau, sigma) = (state.primal.dim(), params.tau, params.sigma);
    let (seed, run, iter, noise) = (state.seed, state.run, state.iter, params.noise);
    let unit_normal = match set {
        ConstraintSet::Hyperplane { n, .. } => Some(n / n.norm()),
        _ => None,
    };

    for_each_particle(&mut state.primal, |i, x| {
        let g = set.g(&DVector::from_column_slice(x))?;
        let m = point.for_particle(i);
        let r = DVector::from_fn(d, |j, _| x[j] - m[j]);
        let draw = step_draw(sigma, d, seed, run, i, iter);
        let scaled = noise.sample(&r, tau, &draw);
        drift_noise_update(x, &r, &scaled, tau, sigma);

        let c2 = 2.0 * tau * lambda2 * g;
        let c4 = 2.0 * c2;
        match set {
            ConstraintSet::Hyperplane { .. } => {
                let u = unit_normal.as_ref().expect("normal precomputed for hyperplanes");
                for j in 0..d {
                    x[j] -= c2 * u[j];
                }
            }
            ConstraintSet::Sphere => {
                let denom = 1.0 + c4;
                if denom == 0.0 || !denom.is_finite() {
                    return Err(Error::numerical("implicit sphere correction is singular"));
                }
                for v in x.iter_mut() {
                    *v /= denom;
                }
            }
            ConstraintSet::Quadric { q, n_q, .. } => {
                let mat = DMatrix::from_fn(d, d, |row, col| {
                    let base = if row == col { 1.0 } else { 0.0 };
                    base + c4 * q[(row, col)]
                });
                let rhs = DVector::from_fn(d, |j, _| x[j] - c2 * n_q[j]);
                let solved = mat
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::numerical("implicit quadric correction is singular"))?;
                x.copy_from_slice(solved.as_slice());
            }
            _ => return Err(Error::config("combination needs a hyperplane, sphere, or quadric")),
        }
        Ok(())
    })?;
    post_step(state, None, objective, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Ensemble;
    use crate::objective::FnObjective;
    use crate::variants::{step_once, OptimizerKind};
    use nalgebra::DVectorView;

    fn quadratic() -> impl Objective {
        FnObjective::new(|x: DVectorView<'_, f64>| 0.5 * x.dot(&x))
    }

    // Particles exactly on the sphere have g = 0, so the implicit correction
    // is the identity and one step equals the unconstrained dynamic.
    #[test]
    fn on_sphere_step_equals_plain_dynamic() {
        let objective = quadratic();
        let cols = vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0];
        let init = Ensemble::from_matrix(DMatrix::from_vec(3, 3, cols)).unwrap();
        let params = OptimizerParams::new(0.25, 0.6, 6.0);

        let mut combo = OptimizerKind::combination(ConstraintSet::Sphere, 0.7, 3.0).unwrap();
        let mut s1 =
            OptimizerState::init(&combo, init.clone(), false, &objective, &params, 9, 0).unwrap();
        step_once(&mut combo, &mut s1, &objective, &params).unwrap();

        let mut plain = OptimizerKind::Cbo;
        let mut s2 =
            OptimizerState::init(&plain, init, false, &objective, &params, 9, 0).unwrap();
        step_once(&mut plain, &mut s2, &objective, &params).unwrap();

        assert_eq!(s1.primal.data(), s2.primal.data());
    }

    // An identity quadric with offset -1 measures |x|^2 - 1; its dense solve
    // is a scalar division by 1 + 4 tau lambda2 g, digit for digit.
    #[test]
    fn identity_quadric_collapses_to_the_sphere_division() {
        let objective = quadratic();
        let set =
            ConstraintSet::quadric(DMatrix::identity(2, 2), DVector::zeros(2), -1.0).unwrap();
        let x0 = DVector::from_vec(vec![1.5, 0.5]);
        let init = Ensemble::from_matrix(DMatrix::from_vec(2, 1, vec![1.5, 0.5])).unwrap();
        let (tau, lambda2) = (0.3, 0.8);
        let params = OptimizerParams::new(tau, 0.0, 1.0);
        let mut kind = OptimizerKind::combination(set.clone(), 0.0, lambda2).unwrap();
        let mut state =
            OptimizerState::init(&kind, init, false, &objective, &params, 0, 0).unwrap();
        step_once(&mut kind, &mut state, &objective, &params).unwrap();

        // One particle: the consensus is the particle, so the predictor is
        // x0 itself and only the division acts.
        let g = set.g(&x0).unwrap();
        let c4 = 2.0 * (2.0 * tau * lambda2 * g);
        let expected = DVector::from_fn(2, |j, _| x0[j] / (1.0 + c4));
        assert_eq!(state.primal.particle_owned(0), expected);
    }

    #[test]
    fn singular_sphere_division_is_an_error() {
        let objective = quadratic();
        let init = Ensemble::from_matrix(DMatrix::from_vec(2, 1, vec![0.5, 0.0])).unwrap();
        let params = OptimizerParams::new(0.5, 0.0, 1.0);
        let mut kind = OptimizerKind::combination(ConstraintSet::Sphere, 0.0, 1.0).unwrap();
        let mut state =
            OptimizerState::init(&kind, init, false, &objective, &params, 0, 0).unwrap();
        let err = step_once(&mut kind, &mut state, &objective, &params).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "got {err}");
    }
}
