//! Parameter schedules run after each step: the sharpness alpha and the
//! elastic-net weight lambda (discrepancy principle).

use super::consensus::log_sum_exp;

/// How alpha evolves across iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSchedule {
    Constant,
    /// alpha <- min(alpha * factor, alpha_max).
    Multiply { factor: f64, alpha_max: f64 },
    /// Re-solve alpha each step so the normalized effective sample size of
    /// the consensus weights hits eta.
    EffectiveSampleSize { eta: f64, alpha_max: f64 },
}

impl AlphaSchedule {
    pub fn next_alpha(&self, alpha: f64, energies: &[f64]) -> f64 {
        match self {
            AlphaSchedule::Constant => alpha,
            AlphaSchedule::Multiply { factor, alpha_max } => {
                multiply_alpha(alpha, *factor, *alpha_max)
            }
            AlphaSchedule::EffectiveSampleSize { eta, alpha_max } => {
                ess_alpha(energies, *eta, *alpha_max, 1e-10, 100)
            }
        }
    }
}

pub fn multiply_alpha(alpha: f64, eta_alpha: f64, alpha_max: f64) -> f64 {
    (alpha * eta_alpha).min(alpha_max)
}

/// Sign of e(alpha) = (sum e^{-aJ})^2 - eta N sum e^{-2aJ}, evaluated in log
/// space: s(alpha) = 2 LSE(-aJ) - LSE(-2aJ) - ln(eta N). e and s share roots
/// and signs because e = e^{LSE(-2aJ)} (e^s - ... ) up to a positive factor.
fn ess_excess(energies: &[f64], alpha: f64, eta: f64) -> f64 {
    let n = energies.len() as f64;
    let lse1 = log_sum_exp(energies.iter().map(|&e| -alpha * e));
    let lse2 = log_sum_exp(energies.iter().map(|&e| -2.0 * alpha * e));
    2.0 * lse1 - lse2 - (eta * n).ln()
}

/// Bisection (in log alpha) for the root of the effective-sample-size excess
/// on [1e-8, alpha_max]. No sign change: e > 0 on the whole bracket returns
/// alpha_max, e < 0 returns the lower end.
pub fn ess_alpha(
    energies: &[f64],
    eta: f64,
    alpha_max: f64,
    bisection_tol: f64,
    max_iter: usize,
) -> f64 {
    assert!(eta > 0.0 && eta < 1.0, "ess schedule needs 0 < eta < 1");
    let lo = 1e-8f64;
    let hi = alpha_max.max(lo);
    if ess_excess(energies, hi, eta) >= 0.0 {
        return hi;
    }
    if ess_excess(energies, lo, eta) <= 0.0 {
        return lo;
    }
    let mut log_lo = lo.ln();
    let mut log_hi = hi.ln();
    for _ in 0..max_iter {
        let mid = 0.5 * (log_lo + log_hi);
        if ess_excess(energies, mid.exp(), eta) > 0.0 {
            log_lo = mid;
        } else {
            log_hi = mid;
        }
        if log_hi - log_lo < bisection_tol {
            break;
        }
    }
    (0.5 * (log_lo + log_hi)).exp()
}

// ---- Discrepancy principle ----

/// Adaptation of the elastic-net weight from the residual at the consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyConfig {
    /// Known noise level delta; the rule compares 2 J(m) against delta^2.
    pub delta: f64,
    /// Factor (<= 1) applied while the residual is below the noise level.
    pub eta_incr: f64,
    /// Factor (>= 1) applied while the residual exceeds the noise level.
    pub eta_decr: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

pub fn discrepancy_update(lambda: f64, j_at_consensus: f64, cfg: &DiscrepancyConfig) -> f64 {
    let factor = if 2.0 * j_at_consensus < cfg.delta * cfg.delta { cfg.eta_incr } else { cfg.eta_decr };
    (lambda * factor).clamp(cfg.lambda_min, cfg.lambda_max)
}
