//! Exploration noise scaled by the consensus drift r = x - m.

use nalgebra::DVector;

/// How step noise couples to the drift vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    /// One shared scale sqrt(tau) |r| multiplying an isotropic Gaussian.
    Isotropic,
    /// Componentwise scales sqrt(tau) r_j (noise dies per coordinate).
    Anisotropic,
}

impl NoiseModel {
    pub fn sample(&self, r: &DVector<f64>, tau: f64, draw: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseModel::Isotropic => isotropic_noise(r, tau, draw),
            NoiseModel::Anisotropic => anisotropic_noise(r, tau, draw),
        }
    }
}

/// sqrt(tau) |r| g with g the supplied Gaussian vector.
pub fn isotropic_noise(r: &DVector<f64>, tau: f64, draw: &DVector<f64>) -> DVector<f64> {
    let scale = tau.sqrt() * r.norm();
    DVector::from_fn(r.len(), |j, _| scale * draw[j])
}

/// sqrt(tau) (r ⊙ g): each coordinate scaled by its own drift component.
pub fn anisotropic_noise(r: &DVector<f64>, tau: f64, draw: &DVector<f64>) -> DVector<f64> {
    let s = tau.sqrt();
    DVector::from_fn(r.len(), |j, _| s * (r[j] * draw[j]))
}
