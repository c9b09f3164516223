//! Semi-implicit penalty drift.
//!
//! With G = g^2, each particle solves
//!     (I + tau lambda Hess G) (x_new - x) = -(tau r + tau lambda grad G) + sigma Noise
//! where grad G = 2 g grad g and Hess G = 2 grad g grad g^T + 2 g Hess g.
//! The solve is split into the deterministic and the noise right-hand side
//! so that with lambda = 0 (system matrix = identity) the update is the
//! plain dynamic value for value.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::dynamics::{
    begin_step, drift_noise_update, for_each_particle, post_step, step_draw, OptimizerParams,
    OptimizerState,
};
use crate::error::{Error, Result};
use crate::objective::Objective;

const CONDITION_LIMIT: f64 = 1e14;

pub(super) fn step(
    set: &ConstraintSet,
    lambda: f64,
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let point = begin_step(state, objective, params)?;
    let (d, tau, sigma) = (state.primal.dim(), params.tau, params.sigma);
    let (seed, run, iter, noise) = (state.seed, state.run, state.iter, params.noise);
    let tl = tau * lambda;

    for_each_particle(&mut state.primal, |i, x| {
        let m = point.for_particle(i);
        let xv = DVector::from_column_slice(x);
        let r = DVector::from_fn(d, |j, _| x[j] - m[j]);
        let g = set.g(&xv)?;
        let dg = set.grad_g(&xv)?;
        let hg = set.hess_g(&xv)?;

        let mat = DMatrix::from_fn(d, d, |row, col| {
            let base = if row == col { 1.0 } else { 0.0 };
            base + tl * (2.0 * dg[row] * dg[col] + 2.0 * g * hg[(row, col)])
        });
        let cond = condition_number(&mat);
        if !cond.is_finite() || cond > CONDITION_LIMIT {
            return Err(Error::numerical(format!(
                "drift-constrained solve is singular (condition {cond:.3e})"
            )));
        }

        let a = DVector::from_fn(d, |j, _| tau * r[j] + tl * (2.0 * g * dg[j]));
        let draw = step_draw(sigma, d, seed, run, i, iter);
        let scaled = noise.sample(&r, tau, &draw);

        let lu = mat.lu();
        let s1 = lu
            .solve(&a)
            .ok_or_else(|| Error::numerical("drift-constrained solve failed"))?;
        let s2 = lu
            .solve(&scaled)
            .ok_or_else(|| Error::numerical("drift-constrained solve failed"))?;
        drift_noise_update(x, &s1, &s2, 1.0, sigma);
        Ok(())
    })?;
    post_step(state, None, objective, params)
}

fn condition_number(mat: &DMatrix<f64>) -> f64 {
    let eigen = mat.clone().symmetric_eigen();
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for &ev in eigen.eigenvalues.iter() {
        max = max.max(ev.abs());
        min = min.min(ev.abs());
    }
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
