//! Benchmark objectives and inverse-problem builders.
//!
//! Everything here is a deterministic pure function; the stochastic builders
//! (`make_deconvolution`, `make_phase_retrieval`, ...) take an explicit rng so
//! the harness controls the draw order.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::objective::Objective;

// ---- Ackley ----

/// The shifted Ackley function; global minimum 0 at x = shift.
#[derive(Debug, Clone)]
pub struct Ackley {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub shift: DVector<f64>,
}

impl Ackley {
    pub fn new(a: f64, b: f64, c: f64, shift: DVector<f64>) -> Self {
        Ackley { a, b, c, shift }
    }

    /// The low-frequency flavor used in the constrained experiments:
    /// a = 20, b = 0.1, c = 1, shift = 0.4 in every coordinate.
    pub fn variant_a(d: usize) -> Self {
        Ackley::new(20.0, 0.1, 1.0, DVector::from_element(d, 0.4))
    }

    /// Same parameters but an arbitrary shift (for manifold experiments where
    /// the shift doubles as the constrained minimizer).
    pub fn variant_a_with_shift(shift: DVector<f64>) -> Self {
        Ackley::new(20.0, 0.1, 1.0, shift)
    }
}

impl Objective for Ackley {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        let d = x.len() as f64;
        let mut norm_sq = 0.0;
        let mut cos_sum = 0.0;
        for i in 0..x.len() {
            let z = x[i] - self.shift[i];
            norm_sq += z * z;
            cos_sum += (2.0 * std::f64::consts::PI * self.c * z).cos();
        }
        -self.a * (-(self.b / d.sqrt()) * norm_sq.sqrt()).exp() - (cos_sum / d).exp()
            + std::f64::consts::E
            + self.a
    }

    fn known_minimizer(&self) -> Option<DVector<f64>> {
        Some(self.shift.clone())
    }
}

// ---- Hölder table ----

/// Two-dimensional table function, nonpositive everywhere, with deep wells
/// near |z| = 1 along the axes (z = x - shift).
#[derive(Debug, Clone)]
pub struct HolderTable {
    pub shift: DVector<f64>,
}

impl HolderTable {
    pub fn new(shift: DVector<f64>) -> Result<Self> {
        if shift.len() != 2 {
            return Err(Error::dimension("holder table is two-dimensional"));
        }
        Ok(HolderTable { shift })
    }
}

impl Objective for HolderTable {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        assert_eq!(x.len(), 2, "holder table is two-dimensional");
        let z0 = x[0] - self.shift[0];
        let z1 = x[1] - self.shift[1];
        let r = (z0 * z0 + z1 * z1).sqrt();
        -(1.0 / std::f64::consts::PI) * (z0.sin() * z1.cos()).abs() * (1.0 - r).exp()
    }
}

// ---- Linear inverse problems ----

/// A linear forward operator with (possibly noisy) data and the truth that
/// generated it.
#[derive(Debug, Clone)]
pub struct LinearInverseProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub noise_level: f64,
    pub ground_truth: Option<DVector<f64>>,
}

impl LinearInverseProblem {
    pub fn quadratic_objective(&self) -> QuadraticFidelity {
        quadratic_fidelity(self.a.clone(), self.b.clone()).expect("stored problem is consistent")
    }

    pub fn l1_objective(&self) -> L1Residual {
        l1_residual(self.a.clone(), self.b.clone()).expect("stored problem is consistent")
    }
}

/// J(x) = |Ax - b|^2 / 2, with exact gradient A^T(Ax - b).
#[derive(Debug, Clone)]
pub struct QuadraticFidelity {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

pub fn quadratic_fidelity(a: DMatrix<f64>, b: DVector<f64>) -> Result<QuadraticFidelity> {
    if a.nrows() != b.len() {
        return Err(Error::dimension("fidelity: A rows must match b length"));
    }
    Ok(QuadraticFidelity { a, b })
}

impl QuadraticFidelity {
    fn residual(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        let mut r = -self.b.clone();
        r.gemv(1.0, &self.a, &x, 1.0);
        r
    }
}

impl Objective for QuadraticFidelity {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        0.5 * self.residual(x).norm_squared()
    }

    fn gradient(&self, x: DVectorView<'_, f64>) -> Option<DVector<f64>> {
        let r = self.residual(x);
        let mut g = DVector::zeros(self.a.ncols());
        g.gemv_tr(1.0, &self.a, &r, 0.0);
        Some(g)
    }
}

/// J(x) = |Ax - b|_1.
#[derive(Debug, Clone)]
pub struct L1Residual {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

pub fn l1_residual(a: DMatrix<f64>, b: DVector<f64>) -> Result<L1Residual> {
    if a.nrows() != b.len() {
        return Err(Error::dimension("residual: A rows must match b length"));
    }
    Ok(L1Residual { a, b })
}

impl Objective for L1Residual {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        let mut r = -self.b.clone();
        r.gemv(1.0, &self.a, &x, 1.0);
        r.iter().map(|v| v.abs()).sum()
    }
}

// ---- Deconvolution ----

/// Builds a 1-d deconvolution problem: a lower-triangular banded convolution
/// with the Gaussian-shaped kernel kappa_j = exp(-j^2 / (2 sigma_kappa)),
/// j = 0..K-1, zero boundary, and a sparse nonnegative spike train as truth.
/// Noise is scaled so |eps| = noise_factor * d.
pub fn make_deconvolution<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    sigma_kappa: f64,
    n_peaks: usize,
    noise_factor: f64,
    rng: &mut R,
) -> Result<LinearInverseProblem> {
    if k == 0 || k > d {
        return Err(Error::config("kernel size must satisfy 1 <= K <= d"));
    }
    if n_peaks > d {
        return Err(Error::config("more peaks than signal entries"));
    }
    if sigma_kappa <= 0.0 {
        return Err(Error::config("kernel variance must be positive"));
    }
    let kappa: Vec<f64> = (0..k).map(|j| (-((j * j) as f64) / (2.0 * sigma_kappa)).exp()).collect();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let lag = i as isize - j as isize;
            if (0..k as isize).contains(&lag) {
                a[(i, j)] = kappa[lag as usize];
            }
        }
    }

    // Distinct peak positions via a partial shuffle, then uniform heights.
    let mut positions: Vec<usize> = (0..d).collect();
    for i in 0..n_peaks {
        let j = rng.gen_range(i..d);
        positions.swap(i, j);
    }
    let mut x_true = DVector::zeros(d);
    for &pos in &positions[..n_peaks] {
        x_true[pos] = rng.gen::<f64>();
    }

    let delta = noise_factor * d as f64;
    let mut b = &a * &x_true;
    if delta > 0.0 {
        b += scaled_noise(d, delta, rng);
    }
    Ok(LinearInverseProblem { a, b, noise_level: delta, ground_truth: Some(x_true) })
}

/// Robust regression on the simplex: A has standard normal entries, the truth
/// is uniform on the simplex, and |eps| = noise_factor * sqrt(d_tilde).
pub fn make_simplex_regression<R: Rng + ?Sized>(
    d: usize,
    d_tilde: usize,
    noise_factor: f64,
    rng: &mut R,
) -> Result<LinearInverseProblem> {
    if d == 0 || d_tilde == 0 {
        return Err(Error::config("regression dimensions must be positive"));
    }
    let a = DMatrix::from_fn(d_tilde, d, |_, _| -> f64 { StandardNormal.sample(rng) });
    let mut z = DVector::from_fn(d, |_, _| -> f64 { Exp1.sample(rng) });
    z /= z.sum();
    let delta = noise_factor * (d_tilde as f64).sqrt();
    let mut b = &a * &z;
    if delta > 0.0 {
        b += scaled_noise(d_tilde, delta, rng);
    }
    Ok(LinearInverseProblem { a, b, noise_level: delta, ground_truth: Some(z) })
}

fn scaled_noise<R: Rng + ?Sized>(len: usize, norm: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let eps = DVector::from_fn(len, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = eps.norm();
        if n > 1e-12 {
            return eps * (norm / n);
        }
    }
}

// ---- Phase retrieval ----

/// Intensity measurements y_m = <f_m, x>^2 (+ noise) for unit-norm frames,
/// together with the lifting radius that turns recovery into a sphere-
/// constrained problem in d+1 dimensions.
#[derive(Debug, Clone)]
pub struct PhaseRetrievalProblem {
    pub frames: Vec<DVector<f64>>,
    pub y: DVector<f64>,
    /// Smallest eigenvalue of the frame operator sum f_m f_m^T.
    pub frame_bound: f64,
    /// Lifting radius R = sqrt(|y|_1 / frame_bound).
    pub radius: f64,
    pub ground_truth: DVector<f64>,
    pub noise_level: f64,
}

/// Frames and ground truth are drawn uniformly on the unit sphere of R^d;
/// noise satisfies |eps| = noise_factor * sqrt(d).
pub fn make_phase_retrieval<R: Rng + ?Sized>(
    d: usize,
    m: usize,
    noise_factor: f64,
    rng: &mut R,
) -> Result<PhaseRetrievalProblem> {
    if m < d {
        return Err(Error::config("phase retrieval needs M >= d frames"));
    }
    let ground_truth = unit_sphere_sample(d, rng);
    let frames: Vec<DVector<f64>> = (0..m).map(|_| unit_sphere_sample(d, rng)).collect();
    let mut y = DVector::from_fn(m, |i, _| {
        let ip = frames[i].dot(&ground_truth);
        ip * ip
    });
    let delta = noise_factor * (d as f64).sqrt();
    if delta > 0.0 {
        y += scaled_noise(m, delta, rng);
    }

    let mut op = DMatrix::zeros(d, d);
    for f in &frames {
        op.syger(1.0, f, f, 1.0);
    }
    op.fill_upper_triangle_with_lower_triangle();
    let frame_bound = op
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if frame_bound <= 0.0 {
        return Err(Error::numerical("frames do not span the space"));
    }
    let radius = (y.iter().map(|v| v.abs()).sum::<f64>() / frame_bound).sqrt();
    Ok(PhaseRetrievalProblem { frames, y, frame_bound, radius, ground_truth, noise_level: delta })
}

fn unit_sphere_sample<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

impl PhaseRetrievalProblem {
    pub fn dim(&self) -> usize {
        self.ground_truth.len()
    }

    /// Embed x in the upper hemisphere of the unit sphere of R^{d+1}:
    /// (x | sqrt(R^2 - |x|^2)) / R.
    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.radius;
        let norm_sq = x.norm_squared();
        if norm_sq > r * r * (1.0 + 1e-12) {
            return Err(Error::domain("cannot lift a point outside the ball of radius R"));
        }
        let mut out = DVector::zeros(x.len() + 1);
        out.rows_mut(0, x.len()).copy_from(x);
        out[x.len()] = (r * r - norm_sq).max(0.0).sqrt();
        out /= r;
        Ok(out)
    }

    /// Pull a lifted point back to R^d.
    pub fn unlift(&self, lifted: &DVector<f64>) -> DVector<f64> {
        let d = self.dim();
        assert_eq!(lifted.len(), d + 1, "unlift expects a d+1 vector");
        lifted.rows(0, d).clone_owned() * self.radius
    }

    /// The sum-of-squares objective over lifted vectors in R^{d+1}.
    pub fn lifted_objective(&self) -> LiftedPhaseObjective {
        let m = self.frames.len();
        let d = self.dim();
        let mut f = DMatrix::zeros(m, d + 1);
        for (i, frame) in self.frames.iter().enumerate() {
            f.row_mut(i).columns_mut(0, d).tr_copy_from(frame);
        }
        let r2 = self.radius * self.radius;
        let y_scaled = self.y.map(|v| v / r2);
        let minimizer = self.lift(&self.ground_truth).ok();
        LiftedPhaseObjective { f, y_scaled, minimizer }
    }

    /// Success up to the global sign: accepts either a lifted (d+1) or a
    /// plain (d) approximation, aligns the sign, and compares to the truth.
    pub fn phase_success(&self, approx: &DVector<f64>, tol: f64) -> bool {
        let d = self.dim();
        let x = if approx.len() == d + 1 {
            self.unlift(approx)
        } else {
            assert_eq!(approx.len(), d, "phase_success expects a d or d+1 vector");
            approx.clone()
        };
        let plus = (&x - &self.ground_truth).norm();
        let minus = (-&x - &self.ground_truth).norm();
        plus.min(minus) <= tol
    }
}

/// J(v) = sum_m ( <f_m^lift, v>^2 - y_m / R^2 )^2 for v on the unit sphere
/// of R^{d+1}; the frames are lifted with a zero last coordinate.
#[derive(Debug, Clone)]
pub struct LiftedPhaseObjective {
    f: DMatrix<f64>,
    y_scaled: DVector<f64>,
    minimizer: Option<DVector<f64>>,
}

impl Objective for LiftedPhaseObjective {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        let mut v = DVector::zeros(self.f.nrows());
        v.gemv(1.0, &self.f, &x, 0.0);
        v.iter()
            .zip(self.y_scaled.iter())
            .map(|(&vi, &yi)| {
                let r = vi * vi - yi;
                r * r
            })
            .sum()
    }

    fn known_minimizer(&self) -> Option<DVector<f64>> {
        self.minimizer.clone()
    }
}

// ---- Stiefel sampling ----

/// Uniform (Haar) draw on the Stiefel manifold of n x p orthonormal-column
/// matrices: Z (Z^T Z)^{-1/2} with Z standard normal.
pub fn sample_stiefel_uniform<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n < p || p == 0 {
        return Err(Error::dimension("stiefel sampling needs n >= p >= 1"));
    }
    for attempt in 0..2 {
        let z = DMatrix::from_fn(n, p, |_, _| -> f64 { StandardNormal.sample(rng) });
        let gram = z.transpose() * &z;
        let eig = gram.symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        if eig.eigenvalues.iter().any(|&ev| ev <= 1e-12 * max_ev.max(1.0)) {
            if attempt == 0 {
                continue;
            }
            return Err(Error::numerical("degenerate gaussian draw in stiefel sampling"));
        }
        let mut inv_sqrt = DMatrix::zeros(p, p);
        for i in 0..p {
            let vi = eig.eigenvectors.column(i);
            inv_sqrt.syger(1.0 / eig.eigenvalues[i].sqrt(), &vi, &vi, 1.0);
        }
        inv_sqrt.fill_upper_triangle_with_lower_triangle();
        return Ok(z * inv_sqrt);
    }
    unreachable!("loop returns on every path");
}

// ---- Sparsity ----

/// Number of components with |x_i| > zero_tol.
pub fn l0_norm(x: &DVector<f64>, zero_tol: f64) -> f64 {
    x.iter().filter(|v| v.abs() > zero_tol).count() as f64
}

/// S(x) = 1 - |x|_0 / d.
pub fn sparsity(x: &DVector<f64>, zero_tol: f64) -> f64 {
    1.0 - l0_norm(x, zero_tol) / x.len() as f64
}

/// J(x) + weight * |x|_0. Only meaningful for dynamics that produce exact
/// zeros (shrink does; plain drift does not), hence zero_tol defaults to 0.
#[derive(Debug, Clone)]
pub struct L0Penalized<O> {
    pub inner: O,
    pub weight: f64,
    pub zero_tol: f64,
}

pub fn l0_penalized<O: Objective>(inner: O, weight: f64) -> L0Penalized<O> {
    L0Penalized { inner, weight, zero_tol: 0.0 }
}

impl<O: Objective> Objective for L0Penalized<O> {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        let count = x.iter().filter(|v| v.abs() > self.zero_tol).count() as f64;
        self.inner.eval(x) + self.weight * count
    }

    fn known_minimizer(&self) -> Option<DVector<f64>> {
        self.inner.known_minimizer()
    }
}
