//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("projection failed after {iters} iterations (best residual {residual:.3e})")]
    ProjectionFailure { residual: f64, iters: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("objective returned a non-finite value for particle {particle} at iteration {iter}")]
    NonFiniteEnergy { particle: usize, iter: usize },
    #[error("step failed at iteration {iter}: {source}")]
    Step {
        iter: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Tag a step-level failure with the iteration it occurred in.
    pub fn at_iter(self, iter: usize) -> Self {
        Error::Step { iter, source: Box::new(self) }
    }
}
