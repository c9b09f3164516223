//! Consensus-based global optimization through mirror maps.
//!
//! The central dynamic evolves an ensemble of particles in a dual space: each
//! step pulls the dual states toward a softmax-weighted consensus point,
//! perturbs them with scaled noise, and reads the primal positions back
//! through the gradient of a convex conjugate. Choosing that mirror map is
//! what specializes the method: an elastic-net map yields sparse iterates, a
//! entropy map confines them to the simplex, projection maps handle hard
//! constraint sets, and the plain quadratic map recovers standard
//! consensus-based optimization exactly.
//!
//! The crate also ships the competing constrained variants (projection,
//! penalty, constraint-drift, regularized combinations, intrinsic
//! hypersurface dynamics, and a dualized formulation), deterministic
//! gradient baselines to compare against, the benchmark objectives used in
//! the experiments, and ensemble diagnostics.
//!
//! # Features
//!
//! * `parallel` (default): per-particle work inside a step and independent
//!   runs in the harness fan out through rayon. Disabling the feature gives
//!   a fully sequential build with bit-identical results; reductions are
//!   always performed in a fixed order regardless of thread count.
//!
//! # Determinism
//!
//! All randomness flows through counter-based streams keyed by
//! `(seed, band, run, particle, iter)`, so a draw never depends on thread
//! scheduling or on how many other draws happened before it.

pub mod baselines;
pub mod constraints;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod mirror_maps;
pub mod objective;
pub mod objectives;
pub mod rng;
pub mod variants;

pub use constraints::ConstraintSet;
pub use dynamics::{run, OptimizerParams, OptimizerState, RunTrace};
pub use ensemble::{make_ensemble, Ensemble, InitSpec};
pub use error::{Error, Result};
pub use mirror_maps::MirrorMap;
pub use objective::Objective;
pub use variants::OptimizerKind;
