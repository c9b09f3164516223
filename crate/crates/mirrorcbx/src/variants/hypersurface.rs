//! Intrinsic dynamics on hypersurfaces: drift and noise live in the tangent
//! space, a curvature (Ito) correction keeps the continuous-time limit on
//! the surface, and a cheap retraction removes the leftover discretization
//! error after every step.

use nalgebra::{DMatrix, DVector};

use crate::constraints::project_stiefel;
use crate::dynamics::{
    begin_step, post_step, step_draw, for_each_particle, NoiseModel, OptimizerParams,
    OptimizerState,
};
use crate::error::{Error, Result};
use crate::objective::Objective;

const ORIGIN_TOL: f64 = 1e-12;

/// v minus its component along the unit vector `grad`.
fn tangent(grad: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let along = grad.dot(v);
    DVector::from_fn(v.len(), |j, _| v[j] - grad[j] * along)
}

// ---- Unit sphere ----

pub(super) fn sphere_step(
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let point = begin_step(state, objective, params)?;
    let (d, tau, sigma) = (state.primal.dim(), params.tau, params.sigma);
    let (seed, run, iter, noise) = (state.seed, state.run, state.iter, params.noise);
    let curvature = d as f64 - 1.0;

    for_each_particle(&mut state.primal, |i, x| {
        let xv = DVector::from_column_slice(x);
        let nx = xv.norm();
        if nx < ORIGIN_TOL {
            return Err(Error::numerical("hypersurface particle collapsed to the origin"));
        }
        let grad = xv / nx;
        let m = point.for_particle(i);
        let r = DVector::from_fn(d, |j, _| x[j] - m[j]);
        let drift = tangent(&grad, &r);
        let draw = step_draw(sigma, d, seed, run, i, iter);
        let scaled = match noise {
            NoiseModel::Isotropic => tangent(&grad, &draw) * (r.norm() * tau.sqrt()),
            // Experimental: componentwise drift scaling before the
            // tangential projection.
            NoiseModel::Anisotropic => {
                let mixed = DVector::from_fn(d, |j, _| r[j] * draw[j]);
                tangent(&grad, &mixed) * tau.sqrt()
            }
        };
        let ito = (sigma * sigma / 2.0) * r.norm_squared() * (curvature / nx) * tau;
        for j in 0..d {
            x[j] = (x[j] - tau * drift[j]) + sigma * scaled[j] - ito * grad[j];
        }

        let new_norm = DVector::from_column_slice(x).norm();
        if new_norm < ORIGIN_TOL {
            return Err(Error::numerical("hypersurface particle collapsed to the origin"));
        }
        for v in x.iter_mut() {
            *v /= new_norm;
        }
        Ok(())
    })?;
    post_step(state, None, objective, params)
}

// ---- Stiefel manifold ----

/// Tangential projection on St(n, p): Z - (X Z^T X + X X^T Z) / 2.
fn stiefel_tangent(x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    z - 0.5 * (x * z.transpose() * x + x * (x.transpose() * z))
}

pub(super) fn stiefel_step(
    n: usize,
    p: usize,
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    if state.primal.dim() != n * p {
        return Err(Error::dimension(format!(
            "Stiefel frames of {n}x{p} flatten to {} but the ensemble dimension is {}",
            n * p,
            state.primal.dim()
        )));
    }
    if params.noise == NoiseModel::Anisotropic {
        return Err(Error::config("the Stiefel dynamic supports isotropic noise only"));
    }
    let point = begin_step(state, objective, params)?;
    let (d, tau, sigma) = (n * p, params.tau, params.sigma);
    let (seed, run, iter) = (state.seed, state.run, state.iter);
    let curvature = (2 * n - p - 1) as f64 / 2.0;

    for_each_particle(&mut state.primal, |i, x| {
        let xmat = DMatrix::from_column_slice(n, p, x);
        let m = point.for_particle(i);
        let r = DVector::from_fn(d, |j, _| x[j] - m[j]);
        let r_norm = r.norm();
        let rmat = DMatrix::from_column_slice(n, p, r.as_slice());
        let draw = step_draw(sigma, d, seed, run, i, iter);
        let dmat = DMatrix::from_column_slice(n, p, draw.as_slice());

        let drift = stiefel_tangent(&xmat, &rmat);
        let scaled = stiefel_tangent(&xmat, &dmat) * (r_norm * tau.sqrt());
        let ito = (sigma * sigma / 2.0) * (r_norm * r_norm) * curvature * tau;
        let moved = DMatrix::from_fn(n, p, |row, col| {
            (xmat[(row, col)] - tau * drift[(row, col)]) + sigma * scaled[(row, col)]
                - ito * xmat[(row, col)]
        });
        let retracted = project_stiefel(&moved)?;
        x.copy_from_slice(retracted.as_slice());
        Ok(())
    })?;
    post_step(state, None, objective, params)
}
