//! The objective-function abstraction shared by all optimizers.

use nalgebra::{DVector, DVectorView};

use crate::ensemble::Ensemble;

// ---- Objective trait ----

/// A cost function J: R^d -> R. `batch_eval` must agree with `eval`
/// entry-for-entry (the default implementation shares the code path).
pub trait Objective: Sync {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64;

    /// Energies of every particle, written into `out` (length N).
    fn batch_eval(&self, ensemble: &Ensemble, out: &mut [f64]) {
        assert_eq!(out.len(), ensemble.n_particles());
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.eval(ensemble.particle(i));
        }
    }

    /// Analytic gradient, when one exists (baselines only).
    fn gradient(&self, _x: DVectorView<'_, f64>) -> Option<DVector<f64>> {
        None
    }

    /// The known global minimizer, when the benchmark has one.
    fn known_minimizer(&self) -> Option<DVector<f64>> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        (**self).eval(x)
    }
    fn batch_eval(&self, ensemble: &Ensemble, out: &mut [f64]) {
        (**self).batch_eval(ensemble, out)
    }
    fn gradient(&self, x: DVectorView<'_, f64>) -> Option<DVector<f64>> {
        (**self).gradient(x)
    }
    fn known_minimizer(&self) -> Option<DVector<f64>> {
        (**self).known_minimizer()
    }
}

impl Objective for Box<dyn Objective + '_> {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        (**self).eval(x)
    }
    fn batch_eval(&self, ensemble: &Ensemble, out: &mut [f64]) {
        (**self).batch_eval(ensemble, out)
    }
    fn gradient(&self, x: DVectorView<'_, f64>) -> Option<DVector<f64>> {
        (**self).gradient(x)
    }
    fn known_minimizer(&self) -> Option<DVector<f64>> {
        (**self).known_minimizer()
    }
}

// ---- Adapters ----

/// Wrap a closure as an objective (tests and small experiments).
pub struct FnObjective<F: Fn(DVectorView<'_, f64>) -> f64 + Sync> {
    f: F,
}

impl<F: Fn(DVectorView<'_, f64>) -> f64 + Sync> FnObjective<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(DVectorView<'_, f64>) -> f64 + Sync> Objective for FnObjective<F> {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        (self.f)(x)
    }
}

/// J scaled by a constant factor (e.g. |Ax-b|^2 from the stored half-residual form).
pub struct Scaled<T> {
    pub inner: T,
    pub factor: f64,
}

impl<T: Objective> Objective for Scaled<T> {
    fn eval(&self, x: DVectorView<'_, f64>) -> f64 {
        self.factor * self.inner.eval(x)
    }
    fn gradient(&self, x: DVectorView<'_, f64>) -> Option<DVector<f64>> {
        self.inner.gradient(x).map(|g| self.factor * g)
    }
    fn known_minimizer(&self) -> Option<DVector<f64>> {
        self.inner.known_minimizer()
    }
}
