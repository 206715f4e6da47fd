//! Local feasible sets and the per-agent proximal step prox_{ℓ_i + ι_{X_i}}.

use std::fmt;
use std::sync::Arc;

use crate::error::{GneError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(GneError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(GneError::validation(
                    "compact local set",
                    format!("box bound {} is not finite", k + 1),
                ));
            }
            if l > h {
                return Err(GneError::validation(
                    "nonempty local set",
                    format!("lo[{}] = {} > hi[{}] = {}", k + 1, l, k + 1, h),
                ));
            }
        }
        Ok(BoxSet { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn clip(&self, k: usize, v: f64) -> f64 {
        v.max(self.lo[k]).min(self.hi[k])
    }

    pub fn project(&self, v: &[f64], out: &mut [f64]) {
        for k in 0..v.len() {
            out[k] = self.clip(k, v[k]);
        }
    }

    pub fn intersect(&self, other: &BoxSet) -> Result<BoxSet> {
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        BoxSet::new(lo, hi)
    }
}

/// Σ_{k ∈ idx} x_k = rhs, with disjoint index groups inside one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceRow {
    pub idx: Vec<usize>,
    pub rhs: f64,
}

pub trait ProjectionOracle: Send + Sync {
    fn project(&self, v: &[f64], out: &mut [f64]);
}

pub trait ProxOracle: Send + Sync {
    /// argmin_z ℓ(z) + ι_X(z) + ‖z − v‖²/(2ρ)
    fn prox(&self, v: &[f64], rho: f64, out: &mut [f64]) -> std::result::Result<(), String>;
}

#[derive(Clone)]
pub enum SetForm {
    Box(BoxSet),
    /// Box intersected with disjoint balance rows (used for per-hour demand balance).
    BoxBalance { bounds: BoxSet, rows: Vec<BalanceRow> },
    /// Arbitrary closed convex set via a projection callback, contained in `bounds`.
    Custom {
        project: Arc<dyn ProjectionOracle>,
        bounds: BoxSet,
    },
}

impl fmt::Debug for SetForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetForm::Box(b) => f.debug_tuple("Box").field(b).finish(),
            SetForm::BoxBalance { bounds, rows } => f
                .debug_struct("BoxBalance")
                .field("bounds", bounds)
                .field("rows", rows)
                .finish(),
            SetForm::Custom { bounds, .. } => f.debug_struct("Custom").field("bounds", bounds).finish(),
        }
    }
}

#[derive(Clone)]
pub enum ProxForm {
    Zero,
    L1 { weights: Vec<f64> },
    IndicatorBox(BoxSet),
    Custom(Arc<dyn ProxOracle>),
}

impl fmt::Debug for ProxForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxForm::Zero => write!(f, "Zero"),
            ProxForm::L1 { weights } => f.debug_struct("L1").field("weights", weights).finish(),
            ProxForm::IndicatorBox(b) => f.debug_tuple("IndicatorBox").field(b).finish(),
            ProxForm::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl SetForm {
    pub fn bounds(&self) -> &BoxSet {
        match self {
            SetForm::Box(b) => b,
            SetForm::BoxBalance { bounds, .. } => bounds,
            SetForm::Custom { bounds, .. } => bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().dim()
    }

    pub fn project(&self, v: &[f64], out: &mut [f64]) {
        match self {
            SetForm::Box(b) => b.project(v, out),
            SetForm::BoxBalance { bounds, rows } => project_box_balance(bounds, rows, v, out),
            SetForm::Custom { project, .. } => project.project(v, out),
        }
    }

    pub fn distance(&self, v: &[f64]) -> f64 {
        let mut p = vec![0.0; v.len()];
        self.project(v, &mut p);
        crate::linalg::dist(v, &p)
    }

    /// A point of the set used for default initialisation.
    pub fn anchor(&self) -> Vec<f64> {
        let c = self.bounds().center();
        match self {
            SetForm::Box(_) => c,
            _ => {
                let mut out = vec![0.0; c.len()];
                self.project(&c, &mut out);
                out
            }
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// prox of ℓ + ι_X with weight ρ.
pub fn prox(agent: usize, set: &SetForm, ell: &ProxForm, v: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
    match ell {
        ProxForm::Custom(p) => p
            .prox(v, rho, out)
            .map_err(|reason| GneError::ProxFailure { agent, reason }),
        ProxForm::Zero => {
            set.project(v, out);
            Ok(())
        }
        ProxForm::IndicatorBox(extra) => match set {
            SetForm::Box(b) => {
                // emptiness of the intersection is rejected at load
                let both = b.intersect(extra)?;
                both.project(v, out);
                Ok(())
            }
            SetForm::BoxBalance { bounds, rows } => {
                let both = bounds.intersect(extra)?;
                project_box_balance(&both, rows, v, out);
                Ok(())
            }
            SetForm::Custom { .. } => Err(GneError::ProxFailure {
                agent,
                reason: "indicator-box term on a custom set needs a custom prox".into(),
            }),
        },
        ProxForm::L1 { weights } => match set {
            // one-dimensional convex terms: prox of ℓ + ι_[a,b] is the clipped prox of ℓ
            SetForm::Box(b) => {
                for k in 0..v.len() {
                    out[k] = b.clip(k, soft_threshold(v[k], rho * weights[k]));
                }
                Ok(())
            }
            _ => Err(GneError::ProxFailure {
                agent,
                reason: "l1 term is only supported on plain boxes".into(),
            }),
        },
    }
}

/// Euclidean projection onto {lo ≤ x ≤ hi, Σ_{k∈G} x_k = rhs for each group G}.
pub fn project_box_balance(bounds: &BoxSet, rows: &[BalanceRow], v: &[f64], out: &mut [f64]) {
    bounds.project(v, out);
    for row in rows {
        // g(μ) = Σ clip(v_k − μ) is non-increasing and piecewise linear in μ
        let g = |mu: f64| -> f64 { row.idx.iter().map(|&k| bounds.clip(k, v[k] - mu)).sum() };
        let mut bps: Vec<f64> = Vec::with_capacity(2 * row.idx.len());
        for &k in &row.idx {
            bps.push(v[k] - bounds.hi[k]);
            bps.push(v[k] - bounds.lo[k]);
        }
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bps.dedup();
        // g is constant outside [bps[0], bps[last]]: equal to Σhi on the left, Σlo on the right
        let mut lo_mu = bps[0];
        let mut hi_mu = *bps.last().unwrap();
        let g_lo = g(lo_mu);
        let g_hi = g(hi_mu);
        let mu = if row.rhs >= g_lo {
            lo_mu
        } else if row.rhs <= g_hi {
            hi_mu
        } else {
            // bracket between consecutive breakpoints, then g is affine
            let mut a = 0;
            let mut b = bps.len() - 1;
            while b - a > 1 {
                let c = (a + b) / 2;
                if g(bps[c]) > row.rhs {
                    a = c;
                } else {
                    b = c;
                }
            }
            lo_mu = bps[a];
            hi_mu = bps[b];
            let ga = g(lo_mu);
            let gb = g(hi_mu);
            if ga == gb {
                lo_mu
            } else {
                lo_mu + (ga - row.rhs) * (hi_mu - lo_mu) / (ga - gb)
            }
        };
        for &k in &row.idx {
            out[k] = bounds.clip(k, v[k] - mu);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize, lo: f64, hi: f64) -> BoxSet {
        BoxSet::new(vec![lo; n], vec![hi; n]).unwrap()
    }

    #[test]
    fn soft_threshold_then_clip() {
        // ℓ = w|·|, box [−10, 10], v = 3, ρw = 1 → 2
        let set = SetForm::Box(unit_box(1, -10.0, 10.0));
        let ell = ProxForm::L1 { weights: vec![0.5] };
        let mut out = [0.0];
        prox(0, &set, &ell, &[3.0], 2.0, &mut out).unwrap();
        assert_eq!(out[0], 2.0);

        // independent check: brute-force minimisation on a refining grid
        let obj = |z: f64| 0.5 * z.abs() + (z - 3.0) * (z - 3.0) / 4.0;
        let (mut a, mut b) = (-10.0, 10.0);
        for _ in 0..8 {
            let h = (b - a) / 1000.0;
            let best = (0..=1000)
                .map(|k| a + h * k as f64)
                .min_by(|x, y| obj(*x).partial_cmp(&obj(*y)).unwrap())
                .unwrap();
            a = best - h;
            b = best + h;
        }
        // the objective is flat to ~1e-16 within ~1e-8 of its minimiser
        assert!((0.5 * (a + b) - out[0]).abs() < 1e-7);
    }

    #[test]
    fn interior_point_is_fixed() {
        let set = SetForm::Box(unit_box(3, -1.0, 1.0));
        let mut out = [0.0; 3];
        prox(0, &set, &ProxForm::Zero, &[0.1, -0.2, 0.3], 1.0, &mut out).unwrap();
        assert_eq!(out, [0.1, -0.2, 0.3]);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxSet::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn box_balance_projection_satisfies_kkt() {
        let bounds = BoxSet::new(vec![0.0, -1.0, 0.0, -5.0], vec![2.0, 1.0, 3.0, 5.0]).unwrap();
        let rows = vec![BalanceRow { idx: vec![0, 1, 2], rhs: 2.5 }];
        let v = [3.0, 0.4, -1.0, 7.0];
        let mut out = [0.0; 4];
        project_box_balance(&bounds, &rows, &v, &mut out);
        assert!((out[0] + out[1] + out[2] - 2.5).abs() < 1e-12);
        assert_eq!(out[3], 5.0);
        // clipping alone gives 2.4, so the shift μ = v_k − x_k is −0.1 on the free coordinate
        assert_eq!(out[0], 2.0);
        assert!((out[1] - 0.5).abs() < 1e-12);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn box_balance_projection_is_a_projection() {
        // compare against a brute-force search over the feasible segment in 2-D
        let bounds = BoxSet::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let rows = vec![BalanceRow { idx: vec![0, 1], rhs: 1.5 }];
        let v = [2.0, -1.0];
        let mut out = [0.0; 2];
        project_box_balance(&bounds, &rows, &v, &mut out);
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=100_000 {
            let a = k as f64 / 100_000.0;
            let b = 1.5 - a;
            if !(0.0..=2.0).contains(&b) {
                continue;
            }
            let d = (a - v[0]).powi(2) + (b - v[1]).powi(2);
            if d < best.0 {
                best = (d, a);
            }
        }
        assert!((out[0] - best.1).abs() < 1e-4);
        assert!((out[0] + out[1] - 1.5).abs() < 1e-12);
    }
}
