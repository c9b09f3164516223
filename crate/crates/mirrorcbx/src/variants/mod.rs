//! Competing consensus optimizers sharing one step skeleton.
//!
//! Every kind moves particles by the same expression
//! `x <- x - tau (x - m) + sigma Noise(x - m, tau)`; kinds differ in the
//! coordinates the move is applied in (primal or dual) and in how a
//! constraint enters: projection after the move, penalty weights inside the
//! consensus, a semi-implicit penalty drift, a closed-form implicit
//! correction, or intrinsic surface geometry. With the constraint machinery
//! switched off, each kind reproduces the plain dynamic bit for bit; the
//! tests at the bottom hold every kind to that.

mod cbo;
mod combination;
mod drift;
mod dualized;
mod hypersurface;
mod penalized;
mod projected;

pub use dualized::DualizedProblem;
pub use penalized::{penalized_lambda_update, penalized_objective, PenaltyObjective};

use nalgebra::DVector;

use crate::constraints::ConstraintSet;
use crate::dynamics::{
    drift_noise_update, for_each_particle, step_draw, ConsensusPoint, OptimizerParams,
    OptimizerState,
};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::mirror_maps::MirrorMap;
use crate::objective::Objective;

// ---- Kinds ----

/// Which optimizer advances the ensemble.
#[derive(Debug, Clone)]
pub enum OptimizerKind {
    /// Dual-space dynamic through a mirror map.
    Mirror { map: MirrorMap },
    /// Plain consensus dynamic in primal coordinates.
    Cbo,
    /// Primal move, then projection of every particle onto the set.
    Projected { set: ConstraintSet },
    /// Consensus weights from J + lambda |g|^p, lambda grown multiplicatively
    /// while the ensemble's mean violation stays above `violation_tol`.
    Penalized {
        set: ConstraintSet,
        power: u32,
        lambda0: f64,
        eta_pen: f64,
        violation_tol: f64,
        lambda_cap: f64,
    },
    /// Semi-implicit penalty drift with a per-particle linear solve.
    DriftConstrained { set: ConstraintSet, lambda: f64 },
    /// Penalized consensus weights (lambda1) plus a closed-form implicit
    /// constraint correction (lambda2).
    Combination { set: ConstraintSet, lambda1: f64, lambda2: f64 },
    /// Intrinsic unit-sphere dynamic: tangential drift and noise plus the
    /// Ito curvature correction, renormalized after every step.
    HypersurfaceSphere,
    /// Intrinsic Stiefel dynamic on n x p frames (columns flattened into
    /// R^{np}); isotropic noise only.
    HypersurfaceStiefel { n: usize, p: usize },
}

impl OptimizerKind {
    /// Penalized CBO with the default schedule (grow by 1.5 while the mean
    /// violation exceeds 1e-3, capped at 1e8).
    pub fn penalized(set: ConstraintSet, power: u32, lambda0: f64) -> Result<Self> {
        let kind = OptimizerKind::Penalized {
            set,
            power,
            lambda0,
            eta_pen: 1.5,
            violation_tol: 1e-3,
            lambda_cap: 1e8,
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn drift_constrained(set: ConstraintSet, lambda: f64) -> Result<Self> {
        let kind = OptimizerKind::DriftConstrained { set, lambda };
        kind.validate()?;
        Ok(kind)
    }

    pub fn combination(set: ConstraintSet, lambda1: f64, lambda2: f64) -> Result<Self> {
        let kind = OptimizerKind::Combination { set, lambda1, lambda2 };
        kind.validate()?;
        Ok(kind)
    }

    /// Structural checks; cheap enough to run on every step.
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerKind::Mirror { .. } | OptimizerKind::Cbo | OptimizerKind::Projected { .. } => {
                Ok(())
            }
            OptimizerKind::Penalized { set, power, lambda0, eta_pen, violation_tol, lambda_cap } => {
                require_smooth_g(set)?;
                if !matches!(power, 1 | 2) {
                    return Err(Error::config("penalty power must be 1 or 2"));
                }
                if !(*lambda0 >= 0.0) || !(*eta_pen >= 1.0) || !(*violation_tol >= 0.0) {
                    return Err(Error::config(
                        "penalized schedule needs lambda0 >= 0, eta_pen >= 1, violation_tol >= 0",
                    ));
                }
                if !(*lambda_cap >= *lambda0) {
                    return Err(Error::config("lambda_cap must be at least lambda0"));
                }
                Ok(())
            }
            OptimizerKind::DriftConstrained { set, lambda } => {
                require_smooth_g(set)?;
                if !(*lambda >= 0.0) {
                    return Err(Error::config("drift-constrained lambda must be nonnegative"));
                }
                Ok(())
            }
            OptimizerKind::Combination { set, lambda1, lambda2 } => {
                require_smooth_g(set)?;
                if !(*lambda1 >= 0.0) || !(*lambda2 >= 0.0) {
                    return Err(Error::config("combination weights must be nonnegative"));
                }
                Ok(())
            }
            OptimizerKind::HypersurfaceSphere => Ok(()),
            OptimizerKind::HypersurfaceStiefel { n, p } => {
                if *p == 0 || n < p {
                    return Err(Error::config("Stiefel frames need n >= p >= 1"));
                }
                Ok(())
            }
        }
    }

    pub fn mirror_map(&self) -> Option<&MirrorMap> {
        match self {
            OptimizerKind::Mirror { map } => Some(map),
            _ => None,
        }
    }

    pub fn mirror_map_mut(&mut self) -> Option<&mut MirrorMap> {
        match self {
            OptimizerKind::Mirror { map } => Some(map),
            _ => None,
        }
    }

    /// Starting value of the adaptive penalty weight tracked in the state.
    pub(crate) fn initial_penalty_lambda(&self) -> f64 {
        match self {
            OptimizerKind::Penalized { lambda0, .. } => *lambda0,
            _ => 0.0,
        }
    }

    /// Stable identifier used by configs and the CLI listing.
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Mirror { .. } => "mirror",
            OptimizerKind::Cbo => "cbo",
            OptimizerKind::Projected { .. } => "projected",
            OptimizerKind::Penalized { .. } => "penalized",
            OptimizerKind::DriftConstrained { .. } => "drift_constrained",
            OptimizerKind::Combination { .. } => "combination",
            OptimizerKind::HypersurfaceSphere => "hypersurface_sphere",
            OptimizerKind::HypersurfaceStiefel { .. } => "hypersurface_stiefel",
        }
    }
}

fn require_smooth_g(set: &ConstraintSet) -> Result<()> {
    match set {
        ConstraintSet::Hyperplane { .. } | ConstraintSet::Sphere | ConstraintSet::Quadric { .. } => {
            Ok(())
        }
        _ => Err(Error::config(
            "this constraint has no smooth g; use a projection-based optimizer",
        )),
    }
}

// ---- Step dispatch ----

/// Advance the state by one iteration of the given kind. The iteration
/// counter moves only after the whole step (including post-step routines)
/// succeeded.
pub fn step_once(
    kind: &mut OptimizerKind,
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    kind.validate()?;
    match kind {
        OptimizerKind::Mirror { map } => {
            crate::dynamics::mirrorcbo_step(state, map, objective, params)?
        }
        OptimizerKind::Cbo => cbo::step(state, objective, params)?,
        OptimizerKind::Projected { set } => projected::step(set, state, objective, params)?,
        OptimizerKind::Penalized { set, power, eta_pen, violation_tol, lambda_cap, .. } => {
            penalized::step(set, *power, *eta_pen, *violation_tol, *lambda_cap, state, objective, params)?
        }
        OptimizerKind::DriftConstrained { set, lambda } => {
            drift::step(set, *lambda, state, objective, params)?
        }
        OptimizerKind::Combination { set, lambda1, lambda2 } => {
            combination::step(set, *lambda1, *lambda2, state, objective, params)?
        }
        OptimizerKind::HypersurfaceSphere => hypersurface::sphere_step(state, objective, params)?,
        OptimizerKind::HypersurfaceStiefel { n, p } => {
            hypersurface::stiefel_step(*n, *p, state, objective, params)?
        }
    }
    state.iter += 1;
    Ok(())
}

/// Energies of `primal` as the given kind weighs them: penalty-based kinds
/// fold their constraint term into the objective, everything else scores
/// the raw objective.
pub(crate) fn eval_energies(
    kind: &OptimizerKind,
    objective: &dyn Objective,
    primal: &Ensemble,
    penalty_lambda: f64,
    energies: &mut Vec<f64>,
    iter: usize,
) -> Result<()> {
    energies.resize(primal.n_particles(), 0.0);
    match kind {
        OptimizerKind::Penalized { set, power, .. } => {
            let weighted = PenaltyObjective::new(objective, set, *power, penalty_lambda)?;
            weighted.batch_eval(primal, energies);
        }
        OptimizerKind::Combination { set, lambda1, .. } => {
            let weighted = PenaltyObjective::new(objective, set, 2, *lambda1)?;
            weighted.batch_eval(primal, energies);
        }
        _ => objective.batch_eval(primal, energies),
    }
    crate::dynamics::check_finite(energies, iter)
}

/// The shared primal move: canonical drift/noise update on every particle,
/// then `after` (projection hooks) on the moved coordinates.
pub(crate) fn primal_move<F>(
    state: &mut OptimizerState,
    point: &ConsensusPoint,
    params: &OptimizerParams,
    after: F,
) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let (d, tau, sigma) = (state.primal.dim(), params.tau, params.sigma);
    let (seed, run, iter, noise) = (state.seed, state.run, state.iter, params.noise);
    for_each_particle(&mut state.primal, |i, x| {
        let m = point.for_particle(i);
        let r = DVector::from_fn(d, |j, _| x[j] - m[j]);
        let draw = step_draw(sigma, d, seed, run, i, iter);
        let scaled = noise.sample(&r, tau, &draw);
        drift_noise_update(x, &r, &scaled, tau, sigma);
        after(i, x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{NoiseModel, ResampleConfig};
    use crate::ensemble::{make_ensemble, InitSpec};
    use crate::objective::FnObjective;
    use nalgebra::{DMatrix, DVectorView};

    fn quadratic() -> impl Objective {
        FnObjective::new(|x: DVectorView<'_, f64>| 0.5 * x.dot(&x))
    }

    fn run_kind(
        kind: OptimizerKind,
        init: &Ensemble,
        objective: &dyn Objective,
        params: &OptimizerParams,
        steps: usize,
    ) -> DMatrix<f64> {
        let mut kind = kind;
        let mut state =
            OptimizerState::init(&kind, init.clone(), false, objective, params, 42, 0).unwrap();
        for _ in 0..steps {
            step_once(&mut kind, &mut state, objective, params).unwrap();
        }
        state.primal.data().clone()
    }

    fn unit_quadric() -> ConstraintSet {
        ConstraintSet::quadric(DMatrix::identity(3, 3), DVector::zeros(3), -1.0).unwrap()
    }

    // Constraint strength zero must not change a single particle relative to
    // the plain dynamic: identical streams, identical arithmetic.
    #[test]
    fn zeroed_variants_reproduce_cbo_bitwise() {
        let objective = quadratic();
        let init = make_ensemble(&InitSpec::Normal { mean: 0.3, std: 1.0 }, 8, 3, 99, 0).unwrap();
        let plane = ConstraintSet::hyperplane(DVector::from_vec(vec![1.0, -2.0, 0.5]), 0.7).unwrap();

        for noise in [NoiseModel::Isotropic, NoiseModel::Anisotropic] {
            let mut params = OptimizerParams::new(0.25, 0.7, 5.0);
            params.noise = noise;
            let reference = run_kind(OptimizerKind::Cbo, &init, &objective, &params, 6);

            let zeroed: Vec<OptimizerKind> = vec![
                OptimizerKind::Mirror { map: MirrorMap::Quadratic },
                OptimizerKind::penalized(ConstraintSet::Sphere, 2, 0.0).unwrap(),
                OptimizerKind::penalized(plane.clone(), 1, 0.0).unwrap(),
                OptimizerKind::drift_constrained(ConstraintSet::Sphere, 0.0).unwrap(),
                OptimizerKind::drift_constrained(plane.clone(), 0.0).unwrap(),
                OptimizerKind::drift_constrained(unit_quadric(), 0.0).unwrap(),
                OptimizerKind::combination(plane.clone(), 0.0, 0.0).unwrap(),
                OptimizerKind::combination(ConstraintSet::Sphere, 0.0, 0.0).unwrap(),
                OptimizerKind::combination(unit_quadric(), 0.0, 0.0).unwrap(),
            ];
            for kind in zeroed {
                let name = kind.name();
                let got = run_kind(kind, &init, &objective, &params, 6);
                assert_eq!(got, reference, "{name} drifted from the plain dynamic");
            }
        }
    }

    // On a linear subspace the lazy (mirror) and greedy (projected)
    // projections see exactly the same arithmetic: the normal here is a
    // scaled basis vector, so every projection is exact in floating point.
    #[test]
    fn projected_subspace_matches_indicator_mirror() {
        let objective = quadratic();
        let set = ConstraintSet::hyperplane(DVector::from_vec(vec![0.0, 2.0, 0.0]), 0.0).unwrap();
        // Feasible start: second coordinate exactly zero.
        let mut cols = Vec::new();
        for v in [[1.0, 0.0, -0.5], [0.25, 0.0, 2.0], [-1.5, 0.0, 0.75], [3.0, 0.0, -2.0]] {
            cols.extend_from_slice(&v);
        }
        let init = Ensemble::from_matrix(DMatrix::from_vec(3, 4, cols)).unwrap();

        let params = OptimizerParams::new(0.3, 0.9, 10.0);
        let projected = run_kind(
            OptimizerKind::Projected { set: set.clone() },
            &init,
            &objective,
            &params,
            8,
        );
        let mirror = run_kind(
            OptimizerKind::Mirror { map: MirrorMap::IndicatorProjection { set } },
            &init,
            &objective,
            &params,
            8,
        );
        assert_eq!(projected, mirror);
    }

    // Indicator-mirror resampling kicks the duals, so the primal read-out
    // stays on the constraint even on iterations where the kick fired.
    #[test]
    fn indicator_mirror_stays_feasible_through_resampling() {
        let objective = quadratic();
        let set = ConstraintSet::Sphere;
        let mut kind =
            OptimizerKind::Mirror { map: MirrorMap::IndicatorProjection { set: set.clone() } };
        let init = {
            let raw = make_ensemble(&InitSpec::Normal { mean: 0.0, std: 1.0 }, 6, 3, 5, 0).unwrap();
            let mut feasible = raw.clone();
            for i in 0..raw.n_particles() {
                feasible.set_particle(i, &set.project(&raw.particle_owned(i)).unwrap());
            }
            feasible
        };
        let mut params = OptimizerParams::new(0.2, 0.8, 50.0);
        params.resample = Some(ResampleConfig {
            patience: 0,
            tol: f64::INFINITY,
            sigma_indep: 0.5,
            eta_indep: 1.0,
        });
        let mut state =
            OptimizerState::init(&kind, init, false, &objective, &params, 7, 0).unwrap();
        for _ in 0..20 {
            step_once(&mut kind, &mut state, &objective, &params).unwrap();
            for i in 0..state.primal.n_particles() {
                let residual = set.residual(&state.primal.particle_owned(i));
                assert!(residual <= 1e-8, "residual {residual} off the sphere");
            }
        }
    }

    // A hard penalty pushes essentially all softmax mass onto the feasible
    // particles, for any bounded objective values.
    #[test]
    fn penalized_weights_concentrate_on_feasible() {
        let objective = FnObjective::new(|x: DVectorView<'_, f64>| x[0]);
        let set = ConstraintSet::Sphere;
        // The schedule would take a while to reach 1e12; hand the weight to
        // the scorer directly.
        let kind = OptimizerKind::penalized(set, 2, 0.0).unwrap();
        let mut cols = Vec::new();
        for v in [[1.0, 0.0], [0.0, -1.0], [2.0, 0.0], [0.0, 0.5], [-3.0, 4.0]] {
            cols.extend_from_slice(&v);
        }
        let ensemble = Ensemble::from_matrix(DMatrix::from_vec(2, 5, cols)).unwrap();

        let mut energies = vec![0.0; 5];
        eval_energies(&kind, &objective, &ensemble, 1e12, &mut energies, 0).unwrap();
        let weights = crate::dynamics::consensus::consensus_weights(&energies, 1.0);
        let feasible_mass: f64 = weights[0] + weights[1];
        assert!(feasible_mass >= 1.0 - 1e-6, "feasible mass {feasible_mass}");
    }

    #[test]
    fn step_once_advances_the_iteration_counter() {
        let objective = quadratic();
        let mut kind = OptimizerKind::Cbo;
        let init = make_ensemble(&InitSpec::Normal { mean: 0.0, std: 1.0 }, 4, 2, 1, 0).unwrap();
        let params = OptimizerParams::new(0.1, 0.5, 2.0);
        let mut state =
            OptimizerState::init(&kind, init, false, &objective, &params, 3, 0).unwrap();
        assert_eq!(state.iter, 0);
        step_once(&mut kind, &mut state, &objective, &params).unwrap();
        step_once(&mut kind, &mut state, &objective, &params).unwrap();
        assert_eq!(state.iter, 2);
    }

    #[test]
    fn constructors_reject_bad_configurations() {
        assert!(OptimizerKind::penalized(ConstraintSet::Sphere, 3, 1.0).is_err());
        assert!(OptimizerKind::penalized(ConstraintSet::Ball, 2, 1.0).is_err());
        assert!(OptimizerKind::penalized(ConstraintSet::Sphere, 2, -1.0).is_err());
        assert!(OptimizerKind::drift_constrained(ConstraintSet::Sphere, -0.5).is_err());
        assert!(OptimizerKind::combination(ConstraintSet::LinfSphere, 1.0, 1.0).is_err());
        assert!(OptimizerKind::HypersurfaceStiefel { n: 2, p: 5 }.validate().is_err());
    }
}
