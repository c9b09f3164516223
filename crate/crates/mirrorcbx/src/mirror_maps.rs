//! Distance-generating functions and their machinery.
//!
//! Each mirror map carries three things: a subgradient selection `forward`
//! (one element of the subdifferential at a feasible point), the conjugate
//! gradient `inverse` (the map dual -> primal actually used in the dynamics),
//! and the function value `phi` on its domain. `inverse(forward(x)) == x`
//! holds on the domain for every kind.
//!
//! The indicator kinds use phi(x) = |x|^2/2 + indicator(set): their inverse
//! is the nearest-point projection and their forward is the identity
//! restricted to the set.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{project_ball, ConstraintSet};
use crate::error::{Error, Result};

// ---- Elementwise operators ----

/// Componentwise soft threshold: y_i - lambda above, y_i + lambda below, 0 inside.
pub fn shrink(y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::domain("shrink needs lambda >= 0"));
    }
    Ok(shrink_unchecked(y, lambda))
}

fn shrink_unchecked(y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    y.map(|v| {
        if v > lambda {
            v - lambda
        } else if v < -lambda {
            v + lambda
        } else {
            0.0
        }
    })
}

/// Softmax with max-subtraction; lands on the open simplex for any finite y.
pub fn simplex_inverse(y: &DVector<f64>) -> DVector<f64> {
    let m = y.max();
    let e = y.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

// ---- Mirror maps ----

#[derive(Debug, Clone)]
pub enum MirrorMap {
    /// phi = |x|^2/2; identity both ways.
    Quadratic,
    /// phi = <x, Hx>/2 for symmetric positive definite H.
    Preconditioned { h: DMatrix<f64>, h_inv: DMatrix<f64> },
    /// phi = |x|^2/2 + lambda |x|_1; inverse is the shrinkage operator.
    ElasticNet { lambda: f64 },
    /// phi = sum x_i log x_i on the simplex; inverse is softmax.
    NegLogEntropySimplex,
    /// phi = |x|^2/2 + indicator(set); inverse is the set projection.
    IndicatorProjection { set: ConstraintSet },
    /// phi = |x|^2/2 + indicator(unit ball).
    Ball,
}

/// Feasibility slack for the indicator domains.
const DOMAIN_TOL: f64 = 1e-8;

impl MirrorMap {
    pub fn preconditioned(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::dimension("preconditioner must be square"));
        }
        if (&h - h.transpose()).norm() > 1e-12 * (1.0 + h.norm()) {
            return Err(Error::domain("preconditioner must be symmetric"));
        }
        let h_inv = h
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical("preconditioner is singular"))?;
        Ok(MirrorMap::Preconditioned { h, h_inv })
    }

    pub fn elastic_net(lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::domain("elastic net needs lambda >= 0"));
        }
        Ok(MirrorMap::ElasticNet { lambda })
    }

    /// The shrinkage strength, for maps that have one (discrepancy updates).
    pub fn elastic_lambda(&self) -> Option<f64> {
        match self {
            MirrorMap::ElasticNet { lambda } => Some(*lambda),
            _ => None,
        }
    }

    pub fn set_elastic_lambda(&mut self, new_lambda: f64) -> Result<()> {
        match self {
            MirrorMap::ElasticNet { lambda } => {
                if new_lambda < 0.0 {
                    return Err(Error::domain("elastic net needs lambda >= 0"));
                }
                *lambda = new_lambda;
                Ok(())
            }
            _ => Err(Error::config("only the elastic-net map has an adjustable lambda")),
        }
    }

    // ---- The conjugate gradient: dual -> primal ----

    pub fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            MirrorMap::Quadratic => Ok(y.clone()),
            MirrorMap::Preconditioned { h_inv, .. } => Ok(h_inv * y),
            MirrorMap::ElasticNet { lambda } => Ok(shrink_unchecked(y, *lambda)),
            MirrorMap::NegLogEntropySimplex => Ok(simplex_inverse(y)),
            MirrorMap::IndicatorProjection { set } => set.project(y),
            MirrorMap::Ball => Ok(project_ball(y)),
        }
    }

    // ---- A subgradient selection: primal -> dual ----

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            MirrorMap::Quadratic => Ok(x.clone()),
            MirrorMap::Preconditioned { h, .. } => Ok(h * x),
            MirrorMap::ElasticNet { lambda } => {
                // Minimal-norm subgradient: sign(0) selected as 0.
                Ok(x.map(|v| v + lambda * sign0(v)))
            }
            MirrorMap::NegLogEntropySimplex => {
                if x.iter().any(|&v| v <= 0.0) {
                    return Err(Error::domain(
                        "negative log-entropy forward needs strictly positive entries",
                    ));
                }
                Ok(x.map(|v| v.ln() + 1.0))
            }
            MirrorMap::IndicatorProjection { set } => {
                if !set.contains(x, DOMAIN_TOL) {
                    return Err(Error::domain("forward called off the constraint set"));
                }
                Ok(x.clone())
            }
            MirrorMap::Ball => {
                if x.norm() > 1.0 + DOMAIN_TOL {
                    return Err(Error::domain("forward called outside the unit ball"));
                }
                Ok(x.clone())
            }
        }
    }

    // ---- Function value ----

    /// phi(x); +infinity off the domain.
    pub fn phi(&self, x: &DVector<f64>) -> f64 {
        match self {
            MirrorMap::Quadratic => 0.5 * x.norm_squared(),
            MirrorMap::Preconditioned { h, .. } => 0.5 * x.dot(&(h * x)),
            MirrorMap::ElasticNet { lambda } => {
                0.5 * x.norm_squared() + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
            }
            MirrorMap::NegLogEntropySimplex => {
                if x.iter().any(|&v| v < 0.0) {
                    return f64::INFINITY;
                }
                x.iter().map(|&v| if v == 0.0 { 0.0 } else { v * v.ln() }).sum()
            }
            MirrorMap::IndicatorProjection { set } => {
                if set.contains(x, DOMAIN_TOL) {
                    0.5 * x.norm_squared()
                } else {
                    f64::INFINITY
                }
            }
            MirrorMap::Ball => {
                if x.norm() <= 1.0 + DOMAIN_TOL {
                    0.5 * x.norm_squared()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    // ---- Bregman distance ----

    /// D_phi^y(x_hat, inverse(y)) = phi(x_hat) - phi(inverse(y)) - <y, x_hat - inverse(y)>.
    /// Returns +infinity when x_hat is outside the domain. Closed forms are
    /// used for the quadratic map and for the ball map at x_hat = 0.
    pub fn bregman(&self, x_hat: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        match self {
            MirrorMap::Quadratic => Ok(0.5 * (y - x_hat).norm_squared()),
            MirrorMap::Ball if x_hat.iter().all(|&v| v == 0.0) => {
                // phi*(y): |y|^2/2 inside the ball, |y| - 1/2 outside.
                let n = y.norm();
                Ok(if n <= 1.0 { 0.5 * n * n } else { n - 0.5 })
            }
            _ => {
                let phi_hat = self.phi(x_hat);
                if !phi_hat.is_finite() {
                    return Ok(f64::INFINITY);
                }
                let x = self.inverse(y)?;
                Ok(phi_hat - self.phi(&x) - y.dot(&(x_hat - &x)))
            }
        }
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vector, stream_rng, Band};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn shrink_values() {
        let out = shrink(&dvec(&[2.0, -0.5, 0.3]), 1.0).unwrap();
        assert_eq!(out, dvec(&[1.0, 0.0, 0.0]));
        let y = dvec(&[0.7, -3.1]);
        assert_eq!(shrink(&y, 0.0).unwrap(), y);
        assert!(shrink(&y, -0.1).is_err());
    }

    // shrink(y, lambda) is the prox of lambda|.|: per component it must match
    // brute-force minimization of (x - y_i)^2/2 + lambda|x| over a fine grid.
    #[test]
    fn shrink_matches_grid_prox_oracle() {
        let ys = [-4.2, -1.0, -0.3, 0.0, 0.2, 0.9, 3.7];
        for &lambda in &[0.1, 1.0, 10.0] {
            for &yi in &ys {
                let shrunk = shrink(&dvec(&[yi]), lambda).unwrap()[0];
                let mut best = (f64::INFINITY, 0.0);
                let mut x = -5.0;
                while x <= 5.0 {
                    let val = 0.5 * (x - yi).powi(2) + lambda * x.abs();
                    if val < best.0 {
                        best = (val, x);
                    }
                    x += 1e-4;
                }
                assert!(
                    (shrunk - best.1).abs() <= 1e-4,
                    "lambda={lambda} y={yi}: shrink {shrunk} vs grid {}",
                    best.1
                );
            }
        }
    }

    #[test]
    fn simplex_inverse_values() {
        let out = simplex_inverse(&dvec(&[0.0, 0.0]));
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.5, epsilon = 1e-15);
        // Softmax inverts log(x) + c for any shift c.
        let x = dvec(&[0.2, 0.5, 0.3]);
        for c in [0.0, 1.0, -7.5] {
            let y = x.map(|v| v.ln() + c);
            assert!((simplex_inverse(&y) - &x).norm() < 1e-12);
        }
    }

    #[test]
    fn map_inverse_dispatch() {
        let quad = MirrorMap::Quadratic;
        let y = dvec(&[1.5, -2.0]);
        assert_eq!(quad.inverse(&y).unwrap(), y);

        let pre = MirrorMap::preconditioned(DMatrix::from_diagonal(&dvec(&[4.0, 2.0]))).unwrap();
        assert_eq!(pre.inverse(&dvec(&[4.0, 2.0])).unwrap(), dvec(&[1.0, 1.0]));

        let en = MirrorMap::elastic_net(1.0).unwrap();
        let x = dvec(&[0.5, -2.0]);
        assert_eq!(en.inverse(&en.forward(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn forward_inverse_roundtrip_on_domain() {
        let cases: Vec<(MirrorMap, DVector<f64>)> = vec![
            (MirrorMap::Quadratic, dvec(&[0.3, -1.2, 4.0])),
            (
                MirrorMap::preconditioned(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]))
                    .unwrap(),
                dvec(&[0.7, -0.4]),
            ),
            (MirrorMap::elastic_net(0.8).unwrap(), dvec(&[1.5, 0.0, -0.2])),
            (MirrorMap::NegLogEntropySimplex, dvec(&[0.2, 0.5, 0.3])),
            (
                MirrorMap::IndicatorProjection { set: ConstraintSet::Sphere },
                dvec(&[0.6, 0.8]),
            ),
            (MirrorMap::Ball, dvec(&[0.3, -0.4])),
        ];
        for (map, x) in cases {
            let y = map.forward(&x).unwrap();
            let back = map.inverse(&y).unwrap();
            assert!((&back - &x).norm() < 1e-10, "{map:?}");
        }
    }

    #[test]
    fn forward_rejects_off_domain() {
        let ball = MirrorMap::Ball;
        assert!(ball.forward(&dvec(&[2.0, 0.0])).is_err());
        let ind = MirrorMap::IndicatorProjection { set: ConstraintSet::Sphere };
        assert!(ind.forward(&dvec(&[0.5, 0.0])).is_err());
        assert!(MirrorMap::NegLogEntropySimplex.forward(&dvec(&[0.5, -0.1])).is_err());
    }

    #[test]
    fn bregman_quadratic_example() {
        let d = MirrorMap::Quadratic.bregman(&dvec(&[1.0, 0.0]), &dvec(&[3.0, 0.0])).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn bregman_ball_closed_form() {
        let ball = MirrorMap::Ball;
        let zero = dvec(&[0.0, 0.0]);
        assert_abs_diff_eq!(ball.bregman(&zero, &dvec(&[0.5, 0.0])).unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(ball.bregman(&zero, &dvec(&[2.0, 0.0])).unwrap(), 1.5, epsilon = 1e-15);
    }

    // Linear-subspace indicator: D equals the half squared distance from proj(y) to x_hat.
    #[test]
    fn bregman_subspace_orthogonality() {
        let set = ConstraintSet::hyperplane(dvec(&[1.0, 1.0, -2.0]), 0.0).unwrap();
        let map = MirrorMap::IndicatorProjection { set: set.clone() };
        let mut rng = stream_rng(21, Band::Problem, 0, 0, 0);
        for _ in 0..50 {
            let y = standard_normal_vector(&mut rng, 3) * 3.0;
            let raw = standard_normal_vector(&mut rng, 3);
            let x_hat = set.project(&raw).unwrap();
            let d = map.bregman(&x_hat, &y).unwrap();
            let expected = 0.5 * (set.project(&y).unwrap() - &x_hat).norm_squared();
            assert_abs_diff_eq!(d, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn bregman_infinite_off_domain() {
        let ball = MirrorMap::Ball;
        assert!(ball.bregman(&dvec(&[3.0, 0.0]), &dvec(&[0.5, 0.0])).unwrap().is_infinite());
    }

    #[test]
    fn elastic_lambda_adjustment() {
        let mut map = MirrorMap::elastic_net(1.0).unwrap();
        map.set_elastic_lambda(2.5).unwrap();
        assert_eq!(map.elastic_lambda(), Some(2.5));
        assert!(MirrorMap::Quadratic.set_elastic_lambda(1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        // Bregman sandwich with m = M = 1/2 for the quadratic map.
        #[test]
        fn bregman_sandwich_quadratic(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let x_hat = dvec(&a);
            let y = dvec(&b);
            let map = MirrorMap::Quadratic;
            let d = map.bregman(&x_hat, &y).unwrap();
            let gap = 0.5 * (map.inverse(&y).unwrap() - &x_hat).norm_squared();
            prop_assert!((d - gap).abs() <= 1e-10 * (1.0 + gap));
        }

        // inverse is 1-Lipschitz for the elastic net and the entropy map.
        #[test]
        fn inverse_nonexpansive(
            a in proptest::collection::vec(-8.0f64..8.0, 4),
            b in proptest::collection::vec(-8.0f64..8.0, 4),
        ) {
            let y = dvec(&a);
            let y2 = dvec(&b);
            for map in [MirrorMap::elastic_net(1.3).unwrap(), MirrorMap::NegLogEntropySimplex] {
                let lhs = (map.inverse(&y).unwrap() - map.inverse(&y2).unwrap()).norm();
                prop_assert!(lhs <= (1.0 + 1e-9) * (&y - &y2).norm(), "{map:?}");
            }
        }

        // Bregman distances are nonnegative wherever finite.
        #[test]
        fn bregman_nonnegative(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            b in proptest::collection::vec(-6.0f64..6.0, 3),
        ) {
            let y = dvec(&b);
            for (map, x_hat) in [
                (MirrorMap::elastic_net(0.7).unwrap(), dvec(&a)),
                (MirrorMap::Quadratic, dvec(&a)),
                (MirrorMap::Ball, dvec(&[0.0, 0.0, 0.0])),
            ] {
                let d = map.bregman(&x_hat, &y).unwrap();
                prop_assert!(d >= -1e-12, "{map:?}: D = {d}");
            }
        }
    }
}
