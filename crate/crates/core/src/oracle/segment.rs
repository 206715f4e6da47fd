use crate::error::Result;
use crate::game::{kkt_residual, GameSpec, JointState, SelectionFunction};

use super::{OracleMethod, OracleSolution};

/// Minimizer of a unimodal f on [lo, hi], bracketed down to `width`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, width: f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > width {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    // compare the bracket against its ends so linear objectives return the endpoint exactly
    let mid = 0.5 * (lo + hi);
    [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
        .unwrap_or(mid)
}

/// Minimize φ over a known segment [a, b] of equilibria.
pub fn oracle_selection_on_segment(
    spec: &GameSpec,
    a: &JointState,
    b: &JointState,
    phi: &SelectionFunction,
) -> Result<OracleSolution> {
    let point = |t: f64| -> Vec<f64> {
        a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p + t * (q - p)).collect()
    };
    let slope = |t: f64| -> f64 {
        let w = point(t);
        let mut g = vec![0.0; w.len()];
        phi.gradient(&w, &mut g);
        g.iter()
            .zip(a.as_slice().iter().zip(b.as_slice()))
            .map(|(gk, (p, q))| gk * (q - p))
            .sum()
    };
    let t = golden_section(|t| phi.value(&point(t)), 0.0, 1.0, 1e-12);
    // function values are flat to sqrt(eps) near the minimizer; polish on the sign of the slope
    let t = polish(&slope, t);
    let state = JointState::from_vec(a.layout().clone(), point(t))?;
    let lam: Vec<f64> = state.lambda_mean().into_iter().map(|v| v.max(0.0)).collect();
    let kkt = kkt_residual(spec, state.x(), &lam)?;
    // first-order condition along the segment: the directional derivative is zero inside, signed at the ends
    let dir = slope(t);
    let vi = if t <= 0.0 {
        (-dir).max(0.0)
    } else if t >= 1.0 {
        dir.max(0.0)
    } else {
        dir.abs()
    };
    Ok(OracleSolution { state, method: OracleMethod::GoldenSection, kkt, vi_residual: vi })
}

fn polish(slope: &dyn Fn(f64) -> f64, t: f64) -> f64 {
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = ((t - 1e-4).max(0.0), (t + 1e-4).min(1.0));
    if slope(lo) > 0.0 {
        lo = 0.0;
    }
    if slope(hi) < 0.0 {
        hi = 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
