//! Constraint sets and their projections.
//!
//! Houses the feasible sets used by the indicator mirror maps and by the
//! projected / penalized / drift-constrained / combination variants. The
//! smooth sets (hyperplane, sphere, quadric) additionally expose a signed
//! constraint function g with its first two derivatives, in the exact form
//! the constrained drift terms expect.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{flatten_column_major, unflatten_column_major};
use crate::error::{Error, Result};

// ---- Constraint sets ----

#[derive(Debug, Clone)]
pub enum ConstraintSet {
    /// {x : <n, x> = d_h}
    Hyperplane { n: DVector<f64>, d_h: f64 },
    /// Unit sphere {x : |x| = 1}
    Sphere,
    /// {x : <x, Qx> + <n_q, x> + c_q = 0}; Q is symmetrized on construction.
    Quadric { q: DMatrix<f64>, n_q: DVector<f64>, c_q: f64 },
    /// {x : ||x||_inf = 1}
    LinfSphere,
    /// St(n, p) = {X in R^{n x p} : X^T X = I_p}, flattened column-major.
    Stiefel { n: usize, p: usize },
    /// Closed unit ball {x : |x| <= 1}
    Ball,
}

impl ConstraintSet {
    pub fn hyperplane(n: DVector<f64>, d_h: f64) -> Result<Self> {
        if n.norm() == 0.0 {
            return Err(Error::domain("hyperplane normal must be nonzero"));
        }
        Ok(ConstraintSet::Hyperplane { n, d_h })
    }

    pub fn quadric(q: DMatrix<f64>, n_q: DVector<f64>, c_q: f64) -> Result<Self> {
        if !q.is_square() || q.nrows() != n_q.len() {
            return Err(Error::dimension("quadric Q must be square and match n_q"));
        }
        // Symmetrize; reject inputs that are not symmetric to 1e-12.
        let sym = (&q + q.transpose()) * 0.5;
        if (&sym - &q).norm() > 1e-12 * (1.0 + q.norm()) {
            return Err(Error::domain("quadric Q must be symmetric"));
        }
        Ok(ConstraintSet::Quadric { q: sym, n_q, c_q })
    }

    /// Project a point onto the set.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ConstraintSet::Hyperplane { n, d_h } => project_hyperplane(z, n, *d_h),
            ConstraintSet::Sphere => Ok(project_sphere(z)),
            ConstraintSet::Quadric { q, n_q, c_q } => {
                project_quadric(z, q, n_q, *c_q, QUADRIC_TOL, QUADRIC_MAX_ITER)
            }
            ConstraintSet::LinfSphere => Ok(project_linf_sphere(z)),
            ConstraintSet::Stiefel { n, p } => {
                let m = unflatten_column_major(&z.as_view(), *n, *p);
                Ok(flatten_column_major(&project_stiefel(&m)?))
            }
            ConstraintSet::Ball => Ok(project_ball(z)),
        }
    }

    /// Residual of the defining equation at z (0 on the set).
    pub fn residual(&self, z: &DVector<f64>) -> f64 {
        match self {
            ConstraintSet::Hyperplane { n, d_h } => (n.dot(z) - d_h).abs() / n.norm(),
            ConstraintSet::Sphere => (z.norm() - 1.0).abs(),
            ConstraintSet::Quadric { q, n_q, c_q } => quadric_g(z, q, n_q, *c_q).abs(),
            ConstraintSet::LinfSphere => (z.amax() - 1.0).abs(),
            ConstraintSet::Stiefel { n, p } => {
                let m = unflatten_column_major(&z.as_view(), *n, *p);
                (m.transpose() * &m - DMatrix::identity(*p, *p)).norm()
            }
            ConstraintSet::Ball => (z.norm() - 1.0).max(0.0),
        }
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.residual(z) <= tol
    }

    // ---- Signed constraint function for the drift-based variants ----
    //
    // Conventions match the constrained-drift update formulas: the sphere
    // uses g = |x| - 1 with grad 2x and Hessian 2I (the gradients of
    // |x|^2 - 1), which is exactly what the closed-form implicit solves
    // of the combination variant assume.

    pub fn g(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            ConstraintSet::Hyperplane { n, d_h } => Ok((n.dot(x) - d_h) / n.norm()),
            ConstraintSet::Sphere => Ok(x.norm() - 1.0),
            ConstraintSet::Quadric { q, n_q, c_q } => Ok(quadric_g(x, q, n_q, *c_q)),
            _ => Err(Error::config("this constraint has no smooth g; use a projection variant")),
        }
    }

    pub fn grad_g(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ConstraintSet::Hyperplane { n, .. } => Ok(n / n.norm()),
            ConstraintSet::Sphere => Ok(2.0 * x),
            ConstraintSet::Quadric { q, n_q, .. } => Ok(2.0 * (q * x) + n_q),
            _ => Err(Error::config("this constraint has no smooth g; use a projection variant")),
        }
    }

    pub fn hess_g(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = x.len();
        match self {
            ConstraintSet::Hyperplane { .. } => Ok(DMatrix::zeros(d, d)),
            ConstraintSet::Sphere => Ok(DMatrix::identity(d, d) * 2.0),
            ConstraintSet::Quadric { q, .. } => Ok(2.0 * q),
            _ => Err(Error::config("this constraint has no smooth g; use a projection variant")),
        }
    }
}

// ---- Hyperplane ----

pub fn project_hyperplane(z: &DVector<f64>, n: &DVector<f64>, d_h: f64) -> Result<DVector<f64>> {
    let nn = n.norm_squared();
    if nn == 0.0 {
        return Err(Error::domain("hyperplane normal must be nonzero"));
    }
    Ok(z - ((n.dot(z) - d_h) / nn) * n)
}

// ---- Sphere ----

/// z/|z|; the origin maps to e_1 (documented deterministic tie-break).
pub fn project_sphere(z: &DVector<f64>) -> DVector<f64> {
    let norm = z.norm();
    if norm == 0.0 {
        let mut e = DVector::zeros(z.len());
        e[0] = 1.0;
        return e;
    }
    z / norm
}

// ---- Ball ----

pub fn project_ball(z: &DVector<f64>) -> DVector<f64> {
    let norm = z.norm();
    if norm <= 1.0 {
        z.clone()
    } else {
        z / norm
    }
}

// ---- L-infinity sphere ----

/// K(CLIP(z)): clamp to the unit cube, then push every component attaining
/// the maximal absolute value to its sign. z = 0 returns the all-ones corner.
pub fn project_linf_sphere(z: &DVector<f64>) -> DVector<f64> {
    let mut out = z.map(|v| v.signum() * v.abs().min(1.0));
    let max_abs = out.amax();
    if max_abs == 0.0 {
        return DVector::from_element(z.len(), 1.0);
    }
    for v in out.iter_mut() {
        if v.abs() == max_abs {
            *v = if *v >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    out
}

// ---- Stiefel ----

/// Nearest Stiefel point in Frobenius norm: UV^T from the thin SVD (Procrustes).
pub fn project_stiefel(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < x.ncols() || x.ncols() == 0 {
        return Err(Error::dimension("project_stiefel needs n >= p >= 1"));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin < 1e-12 * smax || smax == 0.0 {
        return Err(Error::ProjectionFailure { residual: smin, iters: 0 });
    }
    let u = svd.u.as_ref().expect("svd with u requested");
    let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
    Ok(u * v_t)
}

// ---- Quadric ----

pub const QUADRIC_TOL: f64 = 1e-8;
pub const QUADRIC_MAX_ITER: usize = 50;

fn quadric_g(x: &DVector<f64>, q: &DMatrix<f64>, n_q: &DVector<f64>, c_q: f64) -> f64 {
    x.dot(&(q * x)) + n_q.dot(x) + c_q
}

fn quadric_grad(x: &DVector<f64>, q: &DMatrix<f64>, n_q: &DVector<f64>) -> DVector<f64> {
    2.0 * (q * x) + n_q
}

/// Nearest-point projection onto {g = 0} with g(x) = <x,Qx> + <n_q,x> + c_q.
///
/// Newton on the Lagrange-multiplier scalar t in p(t) = (I + 2tQ)^(-1)(z - t n_q),
/// run from t = 0 and from seeds near the parametrization's poles -1/(2 lambda_i);
/// deterministic symmetry-breaking perturbations of z (polished by a full Newton
/// on the KKT system) and a gradient fallback p <- p - g grad g / |grad g|^2 cover
/// inputs where the scalar parametrization is singular at the solution. All
/// candidates with |g| <= tol compete; the one nearest z wins.
pub fn project_quadric(
    z: &DVector<f64>,
    q: &DMatrix<f64>,
    n_q: &DVector<f64>,
    c_q: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    if tol <= 0.0 {
        return Err(Error::config("projection tolerance must be positive"));
    }
    let d = z.len();
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut best_residual = f64::INFINITY;
    let consider = |p: Option<DVector<f64>>, best_residual: &mut f64, cands: &mut Vec<DVector<f64>>| {
        if let Some(p) = p {
            let r = quadric_g(&p, q, n_q, c_q).abs();
            if r < *best_residual {
                *best_residual = r;
            }
            if r <= tol && p.iter().all(|v| v.is_finite()) {
                cands.push(p);
            }
        }
    };

    // Scalar-Newton seeds: t = 0 plus values bracketing each pole -1/(2 lambda).
    let mut seeds = vec![0.0];
    let eig = q.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.amax().max(1.0);
    let mut poles: Vec<f64> = Vec::new();
    for &lam in eig.eigenvalues.iter() {
        if lam.abs() > 1e-12 * lam_max {
            let pole = -1.0 / (2.0 * lam);
            if !poles.iter().any(|p| (p - pole).abs() <= 1e-9 * (1.0 + pole.abs())) {
                poles.push(pole);
            }
        }
    }
    for pole in &poles {
        let off = 0.05 * (1.0 + pole.abs());
        seeds.push(pole + off);
        seeds.push(pole - off);
    }
    for &t0 in &seeds {
        let p = scalar_newton(z, q, n_q, c_q, t0, tol, max_iter);
        consider(p, &mut best_residual, &mut candidates);
    }

    // Symmetry-breaking starts: march to the surface from offset copies of z
    // in several directions, then polish the KKT system against the true z.
    // These reach nearest points the scalar parametrization cannot represent
    // (solutions sitting at a pole of I + 2tQ, which happens on symmetry axes).
    for dir in surface_start_directions(d) {
        for radius in [0.5, 1.0, 2.0] {
            let start = z + radius * (1.0 + z.norm()) * &dir;
            if let Some(p0) = gradient_fallback(&start, q, n_q, c_q, tol.max(1e-6), max_iter) {
                let grad = quadric_grad(&p0, q, n_q);
                let gn = grad.norm_squared();
                let t0 = if gn > 1e-300 { (z - &p0).dot(&grad) / gn } else { 0.0 };
                let polished = kkt_newton(z, q, n_q, c_q, &p0, t0, tol, max_iter)
                    .or_else(|| gradient_fallback(&p0, q, n_q, c_q, tol, max_iter));
                consider(polished, &mut best_residual, &mut candidates);
            }
        }
    }

    // Plain gradient fallback from z itself.
    let p = gradient_fallback(z, q, n_q, c_q, tol, max_iter);
    consider(p, &mut best_residual, &mut candidates);

    candidates
        .into_iter()
        .min_by(|a, b| {
            let da = (a - z).norm_squared();
            let db = (b - z).norm_squared();
            da.partial_cmp(&db).expect("finite distances")
        })
        .ok_or(Error::ProjectionFailure { residual: best_residual, iters: max_iter })
}

/// Solve (I + 2tQ) p = rhs; None when the matrix is numerically singular.
fn quadric_solve(t: f64, q: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let d = rhs.len();
    let m = DMatrix::identity(d, d) + 2.0 * t * q;
    let lu = m.lu();
    let sol = lu.solve(rhs)?;
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol)
    } else {
        None
    }
}

fn scalar_newton(
    z: &DVector<f64>,
    q: &DMatrix<f64>,
    n_q: &DVector<f64>,
    c_q: f64,
    t0: f64,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let mut t = t0;
    let mut p = quadric_solve(t, q, &(z - t * n_q))?;
    for _ in 0..max_iter {
        let h = quadric_g(&p, q, n_q, c_q);
        if h.abs() <= tol {
            return Some(p);
        }
        // dp/dt = -(I + 2tQ)^(-1) (n_q + 2Qp); h'(t) = <grad g(p), dp/dt>.
        let grad = quadric_grad(&p, q, n_q);
        let dp = quadric_solve(t, q, &-(n_q + 2.0 * (q * &p)))?;
        let hp = grad.dot(&dp);
        if hp.abs() < 1e-300 || !hp.is_finite() {
            return None;
        }
        let mut dt = -h / hp;
        // Keep the iterate on a solvable branch; halve the step if the
        // shifted system turns singular or h fails to improve.
        let mut accepted = false;
        for _ in 0..30 {
            let t_new = t + dt;
            if let Some(p_new) = quadric_solve(t_new, q, &(z - t_new * n_q)) {
                let h_new = quadric_g(&p_new, q, n_q, c_q);
                if h_new.is_finite() && h_new.abs() < h.abs() {
                    t = t_new;
                    p = p_new;
                    accepted = true;
                    break;
                }
            }
            dt *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    if quadric_g(&p, q, n_q, c_q).abs() <= tol {
        Some(p)
    } else {
        None
    }
}

/// Damped Newton on the stationarity system [p - z + t grad g(p); g(p)] = 0.
fn kkt_newton(
    z: &DVector<f64>,
    q: &DMatrix<f64>,
    n_q: &DVector<f64>,
    c_q: f64,
    p0: &DVector<f64>,
    t0: f64,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let d = z.len();
    let mut p = p0.clone();
    let mut t = t0;
    let f_norm = |p: &DVector<f64>, t: f64| -> f64 {
        let grad = quadric_grad(p, q, n_q);
        let stat = p - z + t * grad;
        (stat.norm_squared() + quadric_g(p, q, n_q, c_q).powi(2)).sqrt()
    };
    for _ in 0..max_iter {
        let g_val = quadric_g(&p, q, n_q, c_q);
        let grad = quadric_grad(&p, q, n_q);
        let stat = &p - z + t * &grad;
        if g_val.abs() <= tol && stat.norm() <= tol.sqrt() * (1.0 + z.norm()) {
            return Some(p);
        }
        // Jacobian [[I + 2tQ, grad g]; [grad g^T, 0]]
        let mut jac = DMatrix::zeros(d + 1, d + 1);
        jac.view_mut((0, 0), (d, d))
            .copy_from(&(DMatrix::identity(d, d) + 2.0 * t * q));
        for i in 0..d {
            jac[(i, d)] = grad[i];
            jac[(d, i)] = grad[i];
        }
        let mut rhs = DVector::zeros(d + 1);
        for i in 0..d {
            rhs[i] = -stat[i];
        }
        rhs[d] = -g_val;
        let step = jac.lu().solve(&rhs)?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        let base = f_norm(&p, t);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let p_new = &p + scale * step.rows(0, d);
            let t_new = t + scale * step[d];
            if f_norm(&p_new, t_new) < base {
                p = p_new;
                t = t_new;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if quadric_g(&p, q, n_q, c_q).abs() <= tol {
        Some(p)
    } else {
        None
    }
}

/// p <- p - g(p) grad g(p) / |grad g(p)|^2 until |g| <= tol.
fn gradient_fallback(
    start: &DVector<f64>,
    q: &DMatrix<f64>,
    n_q: &DVector<f64>,
    c_q: f64,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let mut p = start.clone();
    for _ in 0..max_iter {
        let g_val = quadric_g(&p, q, n_q, c_q);
        if g_val.abs() <= tol {
            return Some(p);
        }
        let grad = quadric_grad(&p, q, n_q);
        let gn = grad.norm_squared();
        if gn < 1e-30 || !gn.is_finite() {
            return None;
        }
        p -= (g_val / gn) * grad;
    }
    if quadric_g(&p, q, n_q, c_q).abs() <= tol {
        Some(p)
    } else {
        None
    }
}

fn surface_start_directions(d: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for i in 0..d.min(8) {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        dirs.push(e.clone());
        dirs.push(-e);
    }
    let ones = DVector::from_element(d, 1.0) / (d as f64).sqrt();
    dirs.push(ones);
    if d >= 2 {
        let alt =
            DVector::from_fn(d, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }) / (d as f64).sqrt();
        dirs.push(alt);
    }
    dirs
}
