//! Deterministic counter-based random streams.
//!
//! Every stochastic draw in the crate is a pure function of the coordinates
//! `(seed, band, run, particle, iter)`: the coordinates are hashed into a
//! ChaCha8 key and a fresh generator is built per draw site. No generator
//! state is shared between particles or iterations, so results are
//! independent of evaluation order and thread count. The band separates
//! draw sites that share the other four coordinates (step noise vs.
//! resampling noise vs. initialization vs. problem synthesis).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---- Stream coordinates ----

/// Disjoint sub-stream labels for draw sites that share (seed, run, particle, iter).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// Per-particle step noise inside an optimizer iteration.
    Step = 0,
    /// Independent-noise resampling kicks.
    Resample = 1,
    /// Initial ensemble draws.
    Init = 2,
    /// Problem synthesis (ground truths, noise vectors, frames, kernels).
    Problem = 3,
    /// Batch-index permutation shuffles.
    Batch = 4,
}

/// Coordinates identifying one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub run: u64,
    pub particle: u64,
    pub iter: u64,
}

impl RngStream {
    pub fn new(seed: u64, run: u64, particle: u64, iter: u64) -> Self {
        Self { seed, run, particle, iter }
    }

    /// Fresh generator for this stream's coordinates and the given band.
    pub fn rng(&self, band: Band) -> ChaCha8Rng {
        stream_rng(self.seed, band, self.run, self.particle, self.iter)
    }
}

// ---- Key derivation ----

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

// SplitMix64 finalizer; bijective on u64.
fn finalize(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    z
}

fn mix(state: u64, v: u64) -> u64 {
    finalize(state.wrapping_add(GAMMA) ^ v.wrapping_mul(0xff51_afd7_ed55_8ccd))
}

/// Build the ChaCha8 generator keyed by the five stream coordinates.
pub fn stream_rng(seed: u64, band: Band, run: u64, particle: u64, iter: u64) -> ChaCha8Rng {
    let mut h = finalize(seed.wrapping_add(GAMMA));
    for v in [band as u64, run, particle, iter] {
        h = mix(h, v);
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_exact_mut(8) {
        s = s.wrapping_add(GAMMA);
        chunk.copy_from_slice(&finalize(s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

// ---- Draw helpers ----

/// `d` i.i.d. standard normal values from an existing generator.
pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// The Gaussian vector attached to a stream coordinate: bit-identical for
/// identical coordinates, independent across particles and iterations.
pub fn gaussian_draw(stream: &RngStream, band: Band, d: usize) -> DVector<f64> {
    let mut rng = stream.rng(band);
    standard_normal_vector(&mut rng, d)
}
