//! Particle ensembles and their initializers.
//!
//! An ensemble is a set of N particles in R^d, stored as a d x N matrix so
//! each particle occupies one contiguous column. Initializers draw each
//! particle from its own random stream (see [`crate::rng`]), which keeps the
//! layout independent of evaluation order.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::rng::{standard_normal_vector, Band, RngStream};

// ---- Ensemble ----

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    // d x N; column i is particle i.
    data: DMatrix<f64>,
}

impl Ensemble {
    /// Wrap a d x N matrix whose columns are particles.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::dimension("ensemble needs N >= 1 and d >= 1"));
        }
        Ok(Self { data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { data: DMatrix::zeros(d, n) }
    }

    pub fn n_particles(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn particle(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    pub fn particle_owned(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    pub fn set_particle(&mut self, i: usize, v: &DVector<f64>) {
        self.data.set_column(i, v);
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Arithmetic mean of the particles (fixed left-to-right accumulation).
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for i in 0..self.n_particles() {
            m += self.particle(i);
        }
        m / self.n_particles() as f64
    }
}

// ---- Initializers ----

/// How the initial ensemble is drawn.
#[derive(Debug, Clone)]
pub enum InitSpec {
    /// Componentwise N(mean, std^2).
    Normal { mean: f64, std: f64 },
    /// Componentwise U(lo, hi).
    Uniform { lo: f64, hi: f64 },
    /// Uniform on the unit simplex (exponential draws, normalized).
    Simplex,
    /// Uniform direction at the given radius around a center (default 0).
    Sphere { center: Option<DVector<f64>>, radius: f64 },
    /// Uniform on the Stiefel manifold St(n, p), flattened column-major; d must equal n*p.
    Stiefel { n: usize, p: usize },
    /// Antipodal pairs with uniform direction and radius U(r_min, r_max):
    /// particle 2j+1 = -particle 2j, so the empirical mean cancels exactly.
    AnnulusSymmetric { r_min: f64, r_max: f64 },
    /// Fixed d x N matrix, used verbatim.
    Explicit(DMatrix<f64>),
}

impl InitSpec {
    fn validate(&self, n: usize, d: usize) -> Result<()> {
        match self {
            InitSpec::Normal { std, .. } if *std <= 0.0 => {
                Err(Error::config("normal init needs std > 0"))
            }
            InitSpec::Uniform { lo, hi } if lo >= hi => {
                Err(Error::config("uniform init needs lo < hi"))
            }
            InitSpec::Sphere { center, radius } => {
                if *radius <= 0.0 {
                    return Err(Error::config("sphere init needs radius > 0"));
                }
                if let Some(c) = center {
                    if c.len() != d {
                        return Err(Error::dimension(format!(
                            "sphere center has length {}, ensemble dim is {d}",
                            c.len()
                        )));
                    }
                }
                Ok(())
            }
            InitSpec::Stiefel { n: rows, p } => {
                if rows * p != d {
                    return Err(Error::dimension(format!(
                        "stiefel init St({rows},{p}) flattens to {} but ensemble dim is {d}",
                        rows * p
                    )));
                }
                if rows < p || *p == 0 {
                    return Err(Error::config("stiefel init needs n >= p >= 1"));
                }
                Ok(())
            }
            InitSpec::AnnulusSymmetric { r_min, r_max } => {
                if !(0.0 <= *r_min && r_min <= r_max) {
                    return Err(Error::config("annulus init needs 0 <= r_min <= r_max"));
                }
                if n % 2 != 0 {
                    return Err(Error::config("annulus_symmetric init needs an even particle count"));
                }
                Ok(())
            }
            InitSpec::Explicit(m) => {
                if m.nrows() != d || m.ncols() != n {
                    return Err(Error::dimension(format!(
                        "explicit init is {}x{}, expected {d}x{n}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Draw an N-particle ensemble in R^d. Particle i uses the stream
/// (seed, Init, run, i, 0), so draws are i.i.d. across particles and
/// reproducible independently of order.
pub fn make_ensemble(spec: &InitSpec, n: usize, d: usize, seed: u64, run: u64) -> Result<Ensemble> {
    if n == 0 || d == 0 {
        return Err(Error::dimension("ensemble needs N >= 1 and d >= 1"));
    }
    spec.validate(n, d)?;
    let mut data = DMatrix::zeros(d, n);
    match spec {
        InitSpec::Explicit(m) => data.copy_from(m),
        InitSpec::AnnulusSymmetric { r_min, r_max } => {
            for j in 0..n / 2 {
                let mut rng = RngStream::new(seed, run, 2 * j as u64, 0).rng(Band::Init);
                let x = sample_annulus(&mut rng, d, *r_min, *r_max);
                data.set_column(2 * j, &x);
                data.set_column(2 * j + 1, &(-x));
            }
        }
        _ => {
            for i in 0..n {
                let mut rng = RngStream::new(seed, run, i as u64, 0).rng(Band::Init);
                let x = sample_particle(spec, d, &mut rng)?;
                data.set_column(i, &x);
            }
        }
    }
    Ensemble::from_matrix(data)
}

fn sample_particle<R: Rng>(spec: &InitSpec, d: usize, rng: &mut R) -> Result<DVector<f64>> {
    Ok(match spec {
        InitSpec::Normal { mean, std } => {
            standard_normal_vector(rng, d).map(|g| mean + std * g)
        }
        InitSpec::Uniform { lo, hi } => {
            DVector::from_fn(d, |_, _| rng.gen_range(*lo..*hi))
        }
        InitSpec::Simplex => {
            // Exponential draws normalized to sum 1: uniform on the simplex.
            let e = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(Exp1));
            let s = e.sum();
            e / s
        }
        InitSpec::Sphere { center, radius } => {
            let u = sample_unit_direction(rng, d);
            match center {
                Some(c) => c + *radius * u,
                None => *radius * u,
            }
        }
        InitSpec::Stiefel { n, p } => {
            let m = crate::objectives::sample_stiefel_uniform(*n, *p, rng)?;
            flatten_column_major(&m)
        }
        InitSpec::Explicit(_) | InitSpec::AnnulusSymmetric { .. } => unreachable!(),
    })
}

fn sample_annulus<R: Rng>(rng: &mut R, d: usize, r_min: f64, r_max: f64) -> DVector<f64> {
    let u = sample_unit_direction(rng, d);
    let r = if r_min == r_max { r_min } else { rng.gen_range(r_min..r_max) };
    r * u
}

/// Uniform direction on the unit sphere (normalized Gaussian; redraw guards |g| ~ 0).
pub fn sample_unit_direction<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let g = standard_normal_vector(rng, d);
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

/// Stack matrix columns into one vector (column-major flattening).
pub fn flatten_column_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`flatten_column_major`].
pub fn unflatten_column_major(v: &DVectorView<'_, f64>, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, p, v.as_slice())
}
