//! Experiment harness for mirrorcbx.
//!
//! The library half parses strict JSON experiment configs, fans runs out
//! over independent RNG streams, and writes per-iteration CSV traces plus a
//! JSON summary. The `mirrorcbx` binary wraps it in a small CLI. Errors
//! split into two kinds so the binary can map them to exit codes: anything
//! wrong with the config (exit 2) versus a failure while running (exit 3).

use std::fmt;

pub mod config;
pub mod experiment;

pub use config::{load_config, BuiltProblem, ExperimentConfig};
pub use experiment::{run_experiment, sweep, ExperimentOutcome, RunRecord, Summary};

// ---- Errors ----

#[derive(Debug)]
pub enum HarnessError {
    /// The config file is malformed or inconsistent.
    Config(String),
    /// The config was fine but the experiment failed while running.
    Runtime(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(msg) => write!(f, "config error: {msg}"),
            HarnessError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

pub type Result<T> = std::result::Result<T, HarnessError>;
