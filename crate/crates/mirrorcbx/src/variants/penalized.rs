//! Penalized consensus: the constraint enters only through the weights.
//!
//! Particles score J(x) + lambda |g(x)|^p when the consensus point is
//! formed; the move itself is the plain dynamic. The weight lambda grows
//! multiplicatively while the ensemble's mean violation |g|^p stays above a
//! tolerance, so the penalty hardens exactly as fast as the ensemble fails
//! to satisfy the constraint.

use nalgebra::DVectorView;

use crate::constraints::ConstraintSet;
use crate::dynamics::{begin_step, post_step, OptimizerParams, OptimizerState};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::objective::Objective;

// ---- Penalty-weighted objective ----

/// J(x) + lambda |g(x)|^p over a smooth constraint function g.
pub struct PenaltyObjective<'a> {
    inner: &'a dyn Objective,
    set: &'a ConstraintSet,
    power: u32,
    lambda: f64,
}

impl<'a> PenaltyObjective<'a> {
    pub fn new(
        inner: &'a dyn Objective,
        set: &'a ConstraintSet,
        power: u32,
        lambda: f64,
    ) -> Result<Self> {
        super::require_smooth_g(set)?;
        if !matches!(power, 1 | 2) {
            return Err(Error::config("penalty power must be 1 or 2"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::config("penalty weight must be nonnegative"));
        }
        Ok(PenaltyObjective { inner, set, power, lambda })
    }
}

impl Objective for PenaltyObjective<'_> {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        let base = self.inner.eval(x);
        // The set was checked for a smooth g at construction; a failure here
        // would mean the dimension changed mid-run, surfaced as non-finite.
        let g = match self.set.g(&x.into_owned()) {
            Ok(g) => g,
            Err(_) => return f64::NAN,
        };
        let pen = match self.power {
            1 => g.abs(),
            _ => g * g,
        };
        base + self.lambda * pen
    }
}

/// Convenience wrapper for callers that only need the weighted energies.
pub fn penalized_objective<'a>(
    inner: &'a dyn Objective,
    set: &'a ConstraintSet,
    power: u32,
    lambda: f64,
) -> Result<PenaltyObjective<'a>> {
    PenaltyObjective::new(inner, set, power, lambda)
}

// ---- Adaptive weight schedule ----

/// Grow lambda by eta while the ensemble's mean |g|^p exceeds the
/// tolerance; never beyond the cap.
pub fn penalized_lambda_update(
    lambda: f64,
    ensemble: &Ensemble,
    set: &ConstraintSet,
    power: u32,
    eta_pen: f64,
    violation_tol: f64,
    lambda_cap: f64,
) -> Result<f64> {
    let n = ensemble.n_particles();
    let mut total = 0.0;
    for i in 0..n {
        let g = set.g(&ensemble.particle_owned(i))?;
        total += match power {
            1 => g.abs(),
            _ => g * g,
        };
    }
    if total / n as f64 > violation_tol {
        Ok((lambda * eta_pen).min(lambda_cap))
    } else {
        Ok(lambda)
    }
}

pub(super) fn step(
    set: &ConstraintSet,
    power: u32,
    eta_pen: f64,
    violation_tol: f64,
    lambda_cap: f64,
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let weighted = PenaltyObjective::new(objective, set, power, state.penalty_lambda)?;
    let point = begin_step(state, &weighted, params)?;
    super::primal_move(state, &point, params, |_, _| Ok(()))?;
    state.penalty_lambda = penalized_lambda_update(
        state.penalty_lambda,
        &state.primal,
        set,
        power,
        eta_pen,
        violation_tol,
        lambda_cap,
    )?;
    post_step(state, None, objective, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnObjective;
    use nalgebra::{DMatrix, DVector};

    fn base() -> impl Objective {
        FnObjective::new(|x: nalgebra::DVectorView<'_, f64>| x[0] + 2.0 * x[1])
    }

    // At (2, 0) on the unit-sphere constraint, g = 1, so the quadratic
    // penalty adds exactly lambda.
    #[test]
    fn quadratic_penalty_adds_lambda_at_unit_violation() {
        let inner = base();
        let set = ConstraintSet::Sphere;
        let lambda = 3.75;
        let pen = PenaltyObjective::new(&inner, &set, 2, lambda).unwrap();
        let x = DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(pen.eval(x.as_view()) - inner.eval(x.as_view()), lambda);
    }

    #[test]
    fn zero_lambda_is_the_raw_objective() {
        let inner = base();
        let set = ConstraintSet::Sphere;
        let pen = PenaltyObjective::new(&inner, &set, 2, 0.0).unwrap();
        let x = DVector::from_vec(vec![1.3, -0.4]);
        assert_eq!(pen.eval(x.as_view()), inner.eval(x.as_view()));
    }

    #[test]
    fn on_constraint_points_pay_nothing() {
        let inner = base();
        let set = ConstraintSet::Sphere;
        let pen = PenaltyObjective::new(&inner, &set, 1, 1e6).unwrap();
        let x = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(pen.eval(x.as_view()), inner.eval(x.as_view()));
    }

    #[test]
    fn lambda_grows_only_while_violated_and_respects_cap() {
        let set = ConstraintSet::Sphere;
        let off = Ensemble::from_matrix(DMatrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0])).unwrap();
        let on = Ensemble::from_matrix(DMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();

        let grown = penalized_lambda_update(2.0, &off, &set, 2, 1.5, 1e-3, 1e8).unwrap();
        assert_eq!(grown, 3.0);

        let held = penalized_lambda_update(2.0, &on, &set, 2, 1.5, 1e-3, 1e8).unwrap();
        assert_eq!(held, 2.0);

        let capped = penalized_lambda_update(0.9e8, &off, &set, 2, 1.5, 1e-3, 1e8).unwrap();
        assert_eq!(capped, 1e8);
    }

    #[test]
    fn invalid_power_is_rejected() {
        let inner = base();
        assert!(PenaltyObjective::new(&inner, &ConstraintSet::Sphere, 0, 1.0).is_err());
        assert!(PenaltyObjective::new(&inner, &ConstraintSet::Sphere, 3, 1.0).is_err());
    }
}
