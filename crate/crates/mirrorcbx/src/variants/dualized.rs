//! Dual reformulation of l1-regularized linear programs.
//!
//! Instead of minimizing |x|_1 subject to Ax = b, optimize the smooth dual
//!     v  ->  -<b, v> + (lambda/2) |shrink(A^T v, 1)|^2
//! over the dual variable v and read the primal candidate off the optimum
//! as x = lambda shrink(A^T v, 1). The dual is unconstrained, so any of the
//! optimizers here (or plain gradient descent) applies directly.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::mirror_maps::shrink;
use crate::objective::Objective;

#[derive(Debug, Clone)]
pub struct DualizedProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lambda: f64,
}

impl DualizedProblem {
    /// `a` has one row per dual coordinate (one per equality constraint);
    /// `b` is the constraint right-hand side.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dimension(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if !(lambda > 0.0) {
            return Err(Error::config("dualized problems need lambda > 0"));
        }
        Ok(DualizedProblem { a, b, lambda })
    }

    pub fn dual_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Primal candidate associated with a dual point.
    pub fn recover(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = shrink(&self.a.tr_mul(v), 1.0).expect("threshold 1 is valid");
        self.lambda * w
    }

    pub fn dual_gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = shrink(&self.a.tr_mul(v), 1.0).expect("threshold 1 is valid");
        -&self.b + &self.a * (self.lambda * w)
    }
}

impl Objective for DualizedProblem {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        let w = shrink(&self.a.tr_mul(&x), 1.0).expect("threshold 1 is valid");
        -self.b.dot(&x) + 0.5 * self.lambda * w.norm_squared()
    }

    fn gradient(&self, x: DVectorView<'_, f64>) -> Option<DVector<f64>> {
        Some(self.dual_gradient(&x.into_owned()))
    }
}
