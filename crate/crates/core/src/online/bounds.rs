//! Contraction modulus and asymptotic tracking bound for restarted HSDM.

use crate::error::{GneError, Result};

/// τ(β) = 1 − √(1 − β(2σ − βL_φ²)), defined for β ∈ (0, 2σ/L_φ²).
pub fn tau_beta(beta: f64, sigma: f64, l_phi: f64) -> Result<f64> {
    let upper = beta_upper(sigma, l_phi);
    if !(beta > 0.0 && beta < upper) {
        return Err(GneError::BetaOutOfRange { beta, upper });
    }
    let q = beta * (2.0 * sigma - beta * l_phi * l_phi);
    // 1 − √(1 − q) written as q / (1 + √(1 − q)) to keep digits for small β
    Ok(q / (1.0 + (1.0 - q).max(0.0).sqrt()))
}

/// 2σ/L_φ², the upper end of the admissible β range.
pub fn beta_upper(sigma: f64, l_phi: f64) -> f64 {
    2.0 * sigma / (l_phi * l_phi)
}

/// α = (1 − τ)^K
pub fn alpha(tau: f64, k: usize) -> f64 {
    (1.0 - tau).powi(k.min(i32::MAX as usize) as i32)
}

/// Smallest β with (1 − τ(β))^K = α, capped at σ/L_φ² where τ peaks.
pub fn beta_for_alpha(alpha: f64, k: usize, sigma: f64, l_phi: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || k == 0 {
        return Err(GneError::AlphaTooLarge(alpha));
    }
    let one_minus_tau = alpha.powf(1.0 / k as f64);
    // (1 − τ)² = 1 − 2βσ + β²L_φ², solved for the smaller root
    let q = 1.0 - one_minus_tau * one_minus_tau;
    let l2 = l_phi * l_phi;
    let disc = sigma * sigma - l2 * q;
    if disc <= 0.0 {
        return Ok(sigma / l2);
    }
    Ok(q / (sigma + disc.sqrt()))
}

/// (γ + δ₁²)/(1/2 − α)
pub fn tracking_bound(gamma: f64, delta1: f64, alpha: f64) -> Result<f64> {
    if !(alpha < 0.5) {
        return Err(GneError::AlphaTooLarge(alpha));
    }
    Ok((gamma + delta1 * delta1) / (0.5 - alpha))
}

/// γ = (β/τ)·U·(6ξ + 11βU)
pub fn gamma(beta: f64, tau: f64, u: f64, xi: f64) -> f64 {
    beta / tau * u * (6.0 * xi + 11.0 * beta * u)
}

/// γ with the default ξ = γσ/(12U) substituted, solved for γ: 11β²U²/(τ − βσ/2).
/// None when τ ≤ βσ/2, where the substitution has no positive solution.
pub fn gamma_default_xi(beta: f64, tau: f64, sigma: f64, u: f64) -> Option<f64> {
    let den = tau - 0.5 * beta * sigma;
    (den > 0.0).then(|| 11.0 * beta * beta * u * u / den)
}
