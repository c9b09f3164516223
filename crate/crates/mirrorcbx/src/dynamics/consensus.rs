//! Consensus points: full-ensemble, mini-batched, and polarized.
//!
//! All weighted means are computed through LogSumExp so arbitrarily large
//! alpha cannot overflow, and all reductions run left to right in particle
//! order so results do not depend on the thread schedule.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Band};
use rand::Rng;

/// log(sum exp(v_i)) with max subtraction.
pub fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax weights c_i = exp(-alpha J_i - LSE(-alpha J)); they sum to 1.
pub fn consensus_weights(energies: &[f64], alpha: f64) -> Vec<f64> {
    let lse = log_sum_exp(energies.iter().map(|&e| -alpha * e));
    energies.iter().map(|&e| (-alpha * e - lse).exp()).collect()
}

/// Weighted mean of the ensemble under the softmax weights.
pub fn compute_consensus(primal: &Ensemble, energies: &[f64], alpha: f64) -> DVector<f64> {
    assert_eq!(energies.len(), primal.n_particles());
    let weights = consensus_weights(energies, alpha);
    let mut m = DVector::zeros(primal.dim());
    for (i, w) in weights.iter().enumerate() {
        m.axpy(*w, &primal.particle(i), 1.0);
    }
    m
}

/// Consensus over an index subset (weights renormalized over the subset).
pub fn compute_consensus_subset(
    primal: &Ensemble,
    energies: &[f64],
    alpha: f64,
    indices: &[usize],
) -> DVector<f64> {
    let lse = log_sum_exp(indices.iter().map(|&i| -alpha * energies[i]));
    let mut m = DVector::zeros(primal.dim());
    for &i in indices {
        let w = (-alpha * energies[i] - lse).exp();
        m.axpy(w, &primal.particle(i), 1.0);
    }
    m
}

// ---- Mini-batching ----

/// Walks a random permutation of particle indices, handing out disjoint
/// batches and reshuffling once fewer than a full batch remains.
#[derive(Debug, Clone)]
pub struct BatchState {
    perm: Vec<usize>,
    cursor: usize,
    reshuffles: u64,
    size: usize,
}

impl BatchState {
    pub fn new(n_particles: usize, size: usize) -> Result<Self> {
        if size == 0 || size > n_particles {
            return Err(Error::config("batch size must satisfy 1 <= b <= N"));
        }
        // cursor at the end forces a shuffle on first use.
        Ok(BatchState { perm: (0..n_particles).collect(), cursor: n_particles, reshuffles: 0, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// The next batch of indices; reshuffles when the permutation is spent.
    pub fn next_indices(&mut self, seed: u64, run: u64) -> &[usize] {
        let n = self.perm.len();
        if n - self.cursor < self.size {
            let mut rng = stream_rng(seed, Band::Batch, run, 0, self.reshuffles);
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                self.perm.swap(i, j);
            }
            self.cursor = 0;
            self.reshuffles += 1;
        }
        let out = &self.perm[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        out
    }
}

/// Batched consensus: computed over the next batch, applied to all particles.
pub fn compute_consensus_partial(
    primal: &Ensemble,
    energies: &[f64],
    alpha: f64,
    batch: &mut BatchState,
    seed: u64,
    run: u64,
) -> DVector<f64> {
    let indices: Vec<usize> = batch.next_indices(seed, run).to_vec();
    compute_consensus_subset(primal, energies, alpha, &indices)
}

// ---- Polarized consensus ----

/// Per-particle consensus points weighted by a Gaussian kernel
/// kappa(a,b) = exp(-|a-b|^2 / (2 w^2)) jointly with the energy weights;
/// the LogSumExp runs over log-kernel plus (-alpha J). Column j of the
/// output is the consensus seen by particle j.
pub fn compute_polarized_consensus(
    primal: &Ensemble,
    energies: &[f64],
    alpha: f64,
    kernel_width: f64,
) -> DMatrix<f64> {
    assert!(kernel_width > 0.0, "kernel width must be positive");
    let n = primal.n_particles();
    let d = primal.dim();
    let inv_two_w2 = 1.0 / (2.0 * kernel_width * kernel_width);
    let mut out = DMatrix::zeros(d, n);
    let mut log_w = vec![0.0; n];
    for j in 0..n {
        let xj = primal.particle(j);
        for i in 0..n {
            let dist_sq = (primal.particle(i) - xj).norm_squared();
            log_w[i] = -dist_sq * inv_two_w2 - alpha * energies[i];
        }
        let lse = log_sum_exp(log_w.iter().copied());
        let mut m = DVector::zeros(d);
        for i in 0..n {
            m.axpy((log_w[i] - lse).exp(), &primal.particle(i), 1.0);
        }
        out.column_mut(j).copy_from(&m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Ensemble;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ensemble_1d(xs: &[f64]) -> Ensemble {
        Ensemble::from_matrix(DMatrix::from_row_slice(1, xs.len(), xs)).unwrap()
    }

    #[test]
    fn single_particle_is_its_own_consensus() {
        let e = ensemble_1d(&[3.7]);
        let m = compute_consensus(&e, &[42.0], 5.0);
        assert_eq!(m[0], 3.7);
    }

    #[test]
    fn tiny_alpha_gives_arithmetic_mean() {
        let e = ensemble_1d(&[0.0, 1.0, 5.0]);
        let m = compute_consensus(&e, &[9.0, 1.0, 4.0], 1e-12);
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-9);
    }

    // Two particles {0, 1} with J(x) = x^2, alpha = 1: weights are
    // proportional to (1, e^{-1}), so m = e^{-1} / (1 + e^{-1}).
    #[test]
    fn two_particle_softmax_value() {
        let e = ensemble_1d(&[0.0, 1.0]);
        let m = compute_consensus(&e, &[0.0, 1.0], 1.0);
        let expected = (-1.0f64).exp() / (1.0 + (-1.0f64).exp());
        assert_abs_diff_eq!(m[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(m[0], 0.268_941_421_369_995_1, epsilon = 1e-15);
    }

    #[test]
    fn huge_alpha_selects_argmin() {
        let e = ensemble_1d(&[-2.0, 0.5, 3.0]);
        let m = compute_consensus(&e, &[7.0, 0.1, 2.0], 1e15);
        assert_abs_diff_eq!(m[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn weights_sum_to_one_under_extreme_alpha() {
        for alpha in [1e-12, 1.0, 1e6, 1e18] {
            let w = consensus_weights(&[0.0, 10.0, 1e8, 3.0], alpha);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn batch_consensus_degenerate_cases() {
        let e = ensemble_1d(&[0.0, 1.0, 2.0, 3.0]);
        let energies = [5.0, 0.0, 1.0, 2.0];
        // b = N: identical to the full consensus.
        let mut full = BatchState::new(4, 4).unwrap();
        let m_batch = compute_consensus_partial(&e, &energies, 2.0, &mut full, 1, 0);
        let m_full = compute_consensus(&e, &energies, 2.0);
        assert_abs_diff_eq!(m_batch[0], m_full[0], epsilon = 1e-15);
        // b = 1: consensus equals the selected particle.
        let mut single = BatchState::new(4, 1).unwrap();
        let m1 = compute_consensus_partial(&e, &energies, 2.0, &mut single, 1, 0);
        assert!(e.data().row(0).iter().any(|&x| x == m1[0]));
        assert!(BatchState::new(4, 5).is_err());
        assert!(BatchState::new(4, 0).is_err());
    }

    #[test]
    fn batches_partition_before_reshuffle() {
        let mut batch = BatchState::new(10, 3).unwrap();
        let mut seen = Vec::new();
        // floor(10/3) = 3 disjoint batches fit in one permutation pass.
        for _ in 0..3 {
            seen.extend_from_slice(batch.next_indices(7, 0));
        }
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 9, "indices must not repeat before a reshuffle");
        // Next call reshuffles (only one index left): counter advances.
        batch.next_indices(7, 0);
        assert_eq!(batch.reshuffles, 2);
    }

    #[test]
    fn polarized_wide_kernel_matches_global() {
        let e = ensemble_1d(&[0.0, 1.0, 4.0]);
        let energies = [3.0, 0.0, 1.0];
        let rows = compute_polarized_consensus(&e, &energies, 2.0, 1e12);
        let global = compute_consensus(&e, &energies, 2.0);
        for j in 0..3 {
            assert_abs_diff_eq!(rows[(0, j)], global[0], epsilon = 1e-6);
        }
        let single = compute_polarized_consensus(&ensemble_1d(&[2.5]), &[1.0], 1.0, 0.3);
        assert_eq!(single[(0, 0)], 2.5);
    }

    // Two clusters at +-10 with a kernel width of 0.1: each particle's
    // consensus stays inside its own cluster's hull.
    #[test]
    fn polarized_separated_clusters_stay_local() {
        let xs = [-10.2, -10.0, -9.8, 9.8, 10.0, 10.2];
        let e = ensemble_1d(&xs);
        let energies = [0.5, 0.2, 0.4, 0.3, 0.1, 0.6];
        let rows = compute_polarized_consensus(&e, &energies, 1.0, 0.1);
        for j in 0..6 {
            let m = rows[(0, j)];
            if xs[j] < 0.0 {
                assert!((-10.2..=-9.8).contains(&m), "particle {j}: {m}");
            } else {
                assert!((9.8..=10.2).contains(&m), "particle {j}: {m}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Convexity: each consensus coordinate lies between the particle
        // minimum and maximum of that coordinate.
        #[test]
        fn consensus_in_convex_hull(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..12),
            es in proptest::collection::vec(-5.0f64..5.0, 12),
            alpha in 1e-6f64..1e6,
        ) {
            let e = ensemble_1d(&xs);
            let energies = &es[..xs.len()];
            let m = compute_consensus(&e, energies, alpha);
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m[0] >= lo - 1e-9 && m[0] <= hi + 1e-9);
        }

        #[test]
        fn weights_always_normalized(
            es in proptest::collection::vec(-1e3f64..1e3, 1..20),
            alpha in 1e-9f64..1e12,
        ) {
            let w = consensus_weights(&es, alpha);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&wi| wi >= 0.0));
        }
    }
}
