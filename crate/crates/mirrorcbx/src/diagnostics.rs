//! Convergence diagnostics and per-experiment aggregation.

use nalgebra::DVector;

use crate::dynamics::RunTrace;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::mirror_maps::MirrorMap;
use crate::objectives::l0_norm;

// ---- Success criteria ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessNorm {
    L2,
    Linf,
}

#[derive(Debug, Clone)]
pub struct SuccessCriterion {
    pub target: DVector<f64>,
    pub norm: SuccessNorm,
    pub tol: f64,
}

impl SuccessCriterion {
    pub fn new(target: DVector<f64>, norm: SuccessNorm, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::config("success tolerance must be positive"));
        }
        Ok(SuccessCriterion { target, norm, tol })
    }

    pub fn distance(&self, point: &DVector<f64>) -> f64 {
        let diff = point - &self.target;
        match self.norm {
            SuccessNorm::L2 => diff.norm(),
            SuccessNorm::Linf => diff.amax(),
        }
    }

    pub fn is_success(&self, point: &DVector<f64>) -> bool {
        self.distance(point) <= self.tol
    }
}

// ---- Pointwise diagnostics ----

/// Mean Bregman distance of the dual ensemble to x_hat:
/// V = (1/N) sum_n D_phi(x_hat; y_n). Infinite terms yield the +inf
/// sentinel rather than an error.
pub fn lyapunov_v(dual: &Ensemble, map: &MirrorMap, x_hat: &DVector<f64>) -> Result<f64> {
    let n = dual.n_particles();
    let mut total = 0.0;
    for i in 0..n {
        total += map.bregman(x_hat, &dual.particle_owned(i))?;
    }
    Ok(total / n as f64)
}

/// Fraction of particles satisfying the predicate.
pub fn mass_fraction(
    ensemble: &Ensemble,
    predicate: impl Fn(nalgebra::DVectorView<'_, f64>) -> bool,
) -> f64 {
    let n = ensemble.n_particles();
    let hits = (0..n).filter(|&i| predicate(ensemble.particle(i))).count();
    hits as f64 / n as f64
}

/// Fraction of final points within the criterion's tolerance of the target.
pub fn success_rate(final_points: &[DVector<f64>], criterion: &SuccessCriterion) -> f64 {
    assert!(!final_points.is_empty(), "success rate needs at least one run");
    let hits = final_points.iter().filter(|p| criterion.is_success(p)).count();
    hits as f64 / final_points.len() as f64
}

// ---- Aggregation across runs ----

#[derive(Debug, Clone)]
pub struct AggregateSummary {
    pub n_runs: usize,
    /// Fraction of runs whose final consensus meets the criterion (when given).
    pub success_rate: Option<f64>,
    /// Mean support size of the final consensus points (exact-zero count).
    pub mean_l0: f64,
    /// Iteration stamps of the recorded rows (shared across runs).
    pub iters: Vec<usize>,
    /// Pointwise mean and median of the consensus-distance curves, empty
    /// when the traces carried no distance column.
    pub mean_curve: Vec<f64>,
    pub median_curve: Vec<f64>,
}

/// Combine traces of equal length into mean/median curves plus scalar
/// summaries. Traces of differing row counts are an error.
pub fn aggregate(
    traces: &[RunTrace],
    criterion: Option<&SuccessCriterion>,
) -> Result<AggregateSummary> {
    if traces.is_empty() {
        return Err(Error::config("aggregation needs at least one run"));
    }
    let rows = traces[0].rows.len();
    if traces.iter().any(|t| t.rows.len() != rows) {
        return Err(Error::dimension(format!(
            "cannot aggregate traces of different lengths ({:?})",
            traces.iter().map(|t| t.rows.len()).collect::<Vec<_>>()
        )));
    }

    let success_rate = criterion.map(|c| {
        let hits = traces.iter().filter(|t| c.is_success(&t.final_consensus)).count();
        hits as f64 / traces.len() as f64
    });

    let mean_l0 =
        traces.iter().map(|t| l0_norm(&t.final_consensus, 0.0)).sum::<f64>() / traces.len() as f64;

    let iters: Vec<usize> = traces[0].rows.iter().map(|r| r.iter).collect();
    let has_dist = traces.iter().all(|t| t.rows.iter().all(|r| r.consensus_dist.is_some()));
    let (mut mean_curve, mut median_curve) = (Vec::new(), Vec::new());
    if has_dist {
        for k in 0..rows {
            let mut vals: Vec<f64> =
                traces.iter().map(|t| t.rows[k].consensus_dist.unwrap()).collect();
            mean_curve.push(vals.iter().sum::<f64>() / vals.len() as f64);
            vals.sort_by(|a, b| a.total_cmp(b));
            let mid = vals.len() / 2;
            let median = if vals.len() % 2 == 1 {
                vals[mid]
            } else {
                0.5 * (vals[mid - 1] + vals[mid])
            };
            median_curve.push(median);
        }
    }

    Ok(AggregateSummary {
        n_runs: traces.len(),
        success_rate,
        mean_l0,
        iters,
        mean_curve,
        median_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TraceRow;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::time::Duration;

    fn duals(cols: &[&[f64]]) -> Ensemble {
        let d = cols[0].len();
        let mut m = DMatrix::zeros(d, cols.len());
        for (i, c) in cols.iter().enumerate() {
            m.set_column(i, &DVector::from_column_slice(c));
        }
        Ensemble::from_matrix(m).unwrap()
    }

    #[test]
    fn quadratic_lyapunov_is_half_mean_square() {
        let e = duals(&[&[1.0, 0.0], &[3.0, 4.0]]);
        let x_hat = DVector::zeros(2);
        let v = lyapunov_v(&e, &MirrorMap::Quadratic, &x_hat).unwrap();
        assert_abs_diff_eq!(v, 0.5 * (1.0 + 25.0) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_zero_at_matching_subgradients() {
        // Elastic net, x_hat = 0: any y in [-lambda, lambda]^d inverts to 0
        // and is a subgradient of phi at 0, so every Bregman term vanishes.
        let map = MirrorMap::elastic_net(1.0).unwrap();
        let e = duals(&[&[0.3, -0.9], &[0.0, 1.0]]);
        let v = lyapunov_v(&e, &map, &DVector::zeros(2)).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    // Ball map at x_hat = 0: conjugate value 1/2 |y|^2 inside the ball,
    // |y| - 1/2 outside; particles (0.5, 0) and (2, 0) average to 0.8125.
    #[test]
    fn ball_lyapunov_frozen_value() {
        let map = MirrorMap::Ball;
        let e = duals(&[&[0.5, 0.0], &[2.0, 0.0]]);
        let v = lyapunov_v(&e, &map, &DVector::zeros(2)).unwrap();
        assert_abs_diff_eq!(v, 0.8125, epsilon = 1e-15);
    }

    // One zero-noise Euler step of the ball dynamic from a symmetric dual
    // ensemble contracts V by (1 - tau)^2.
    #[test]
    fn ball_lyapunov_contracts_per_step() {
        use crate::dynamics::{mirrorcbo_step, OptimizerParams, OptimizerState};
        use crate::objective::FnObjective;
        use crate::variants::OptimizerKind;

        let obj = FnObjective::new(|x: nalgebra::DVectorView<'_, f64>| 0.5 * x.dot(&x));
        // Antipodal pairs strictly inside the unit ball.
        let init = duals(&[&[0.6, 0.0], &[-0.6, 0.0], &[0.0, 0.3], &[0.0, -0.3]]);
        let map0 = MirrorMap::Ball;
        let kind = OptimizerKind::Mirror { map: map0.clone() };
        let tau = 0.25;
        let params = OptimizerParams::new(tau, 0.0, 1e6);
        let mut state = OptimizerState::init(&kind, init, true, &obj, &params, 3, 0).unwrap();
        let x_hat = DVector::zeros(2);
        let v0 = lyapunov_v(state.dual.as_ref().unwrap(), &map0, &x_hat).unwrap();
        let mut map = map0.clone();
        mirrorcbo_step(&mut state, &mut map, &obj, &params).unwrap();
        let v1 = lyapunov_v(state.dual.as_ref().unwrap(), &map0, &x_hat).unwrap();
        let ratio = v1 / v0;
        assert_abs_diff_eq!(ratio, (1.0 - tau) * (1.0 - tau), epsilon = 1e-6);
    }

    #[test]
    fn mass_fraction_counts() {
        let e = duals(&[&[0.1, 0.0], &[0.2, 0.0], &[5.0, 0.0], &[9.0, 0.0]]);
        assert_eq!(mass_fraction(&e, |y| y.norm() <= 1.0), 0.5);
        assert_eq!(mass_fraction(&e, |_| true), 1.0);
        assert_eq!(mass_fraction(&e, |_| false), 0.0);
    }

    #[test]
    fn success_rate_counting() {
        let target = DVector::from_column_slice(&[1.0, 0.0]);
        let c = SuccessCriterion::new(target.clone(), SuccessNorm::L2, 0.1).unwrap();
        let exact = vec![target.clone()];
        assert_eq!(success_rate(&exact, &c), 1.0);

        let spread = vec![
            DVector::from_column_slice(&[1.05, 0.0]),
            DVector::from_column_slice(&[1.0, 0.09]),
            DVector::from_column_slice(&[0.95, 0.0]),
            DVector::from_column_slice(&[2.0, 0.0]),
        ];
        assert_eq!(success_rate(&spread, &c), 0.75);

        // Infinite tolerance accepts everything.
        let sloppy = SuccessCriterion::new(target, SuccessNorm::L2, f64::INFINITY).unwrap();
        assert_eq!(success_rate(&spread, &sloppy), 1.0);
    }

    #[test]
    fn linf_and_l2_norms_differ() {
        let c2 = SuccessCriterion::new(DVector::zeros(2), SuccessNorm::L2, 1.0).unwrap();
        let ci = SuccessCriterion::new(DVector::zeros(2), SuccessNorm::Linf, 1.0).unwrap();
        let p = DVector::from_column_slice(&[0.9, 0.9]);
        assert!(!c2.is_success(&p)); // |p|_2 = 1.27...
        assert!(ci.is_success(&p)); // |p|_inf = 0.9
    }

    fn toy_trace(dists: &[f64], final_c: &[f64]) -> RunTrace {
        RunTrace {
            rows: dists
                .iter()
                .enumerate()
                .map(|(i, &d)| TraceRow {
                    iter: i,
                    best_energy: 0.0,
                    consensus_dist: Some(d),
                    alpha: 1.0,
                    lyapunov: None,
                    mass_fraction: None,
                })
                .collect(),
            final_consensus: DVector::from_column_slice(final_c),
            final_best_point: DVector::from_column_slice(final_c),
            final_best_energy: 0.0,
            success: None,
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn aggregate_curves_and_l0() {
        let traces = vec![
            toy_trace(&[4.0, 2.0, 1.0], &[0.5, 0.0]),
            toy_trace(&[2.0, 1.0, 0.0], &[0.0, 0.0]),
            toy_trace(&[6.0, 3.0, 2.0], &[0.5, 0.25]),
        ];
        let target = DVector::from_column_slice(&[0.5, 0.0]);
        let c = SuccessCriterion::new(target, SuccessNorm::L2, 0.1).unwrap();
        let s = aggregate(&traces, Some(&c)).unwrap();
        assert_eq!(s.n_runs, 3);
        assert_eq!(s.iters, vec![0, 1, 2]);
        assert_eq!(s.mean_curve, vec![4.0, 2.0, 1.0]);
        assert_eq!(s.median_curve, vec![4.0, 2.0, 1.0]);
        // Runs 1 and 2 within tol of (0.5, 0)? Run 2 is at distance 0.5: no.
        // Run 3 at distance 0.25: no. Only run 1 hits exactly.
        assert_abs_diff_eq!(s.success_rate.unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean_l0, (1.0 + 0.0 + 2.0) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_rejects_ragged_traces() {
        let traces = vec![toy_trace(&[1.0, 0.5], &[0.0]), toy_trace(&[1.0], &[0.0])];
        assert!(aggregate(&traces, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // V is non-negative for quadratic and elastic maps at any x_hat.
        #[test]
        fn lyapunov_nonnegative(
            ys in proptest::collection::vec(-5.0f64..5.0, 4),
            x in -2.0f64..2.0,
            lambda in 0.0f64..2.0,
        ) {
            let e = duals(&[&ys[0..2], &ys[2..4]]);
            let x_hat = DVector::from_column_slice(&[x, -x]);
            for map in [MirrorMap::Quadratic, MirrorMap::elastic_net(lambda).unwrap()] {
                let v = lyapunov_v(&e, &map, &x_hat).unwrap();
                prop_assert!(v >= -1e-12, "V = {v}");
            }
        }
    }
}
