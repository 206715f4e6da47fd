//! Selection functions φ over the joint state.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::Layout;
use crate::error::{GneError, Result};

/// One squared term w (qᵀω − r)² with sparse q.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub idx: Vec<usize>,
    pub coef: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

impl SelectionRow {
    pub fn unit(idx: usize, target: f64, weight: f64) -> Self {
        SelectionRow {
            idx: vec![idx],
            coef: vec![1.0],
            target,
            weight,
        }
    }
}

pub trait SelectionOracle: Send + Sync {
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64], out: &mut [f64]);
}

#[derive(Clone)]
pub enum SelectionKind {
    /// φ(ω) = Σ_k w_k (q_kᵀω − r_k)², i.e. ‖Qω − ω_ref‖²_W
    Quadratic(Vec<SelectionRow>),
    Blackbox(Arc<dyn SelectionOracle>),
}

impl fmt::Debug for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionKind::Quadratic(r) => write!(f, "Quadratic({} rows)", r.len()),
            SelectionKind::Blackbox(_) => write!(f, "Blackbox"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelectionFunction {
    kind: SelectionKind,
    sigma: f64,
    lipschitz: f64,
    /// For separable quadratics: rows grouped by owning agent.
    agent_rows: Option<Vec<Vec<usize>>>,
    /// The quadratic rows flattened for evaluation.
    flat: Option<Arc<FlatRows>>,
}

#[derive(Debug)]
struct FlatRows {
    offs: Vec<usize>,
    idx: Vec<usize>,
    coef: Vec<f64>,
}

impl FlatRows {
    fn new(rows: &[SelectionRow]) -> Self {
        let mut offs = Vec::with_capacity(rows.len() + 1);
        let (mut idx, mut coef) = (Vec::new(), Vec::new());
        offs.push(0);
        for r in rows {
            idx.extend_from_slice(&r.idx);
            coef.extend_from_slice(&r.coef);
            offs.push(idx.len());
        }
        FlatRows { offs, idx, coef }
    }

    /// qᵀω − r for row `r`, reading coordinate k through `at`.
    #[inline]
    fn residual(&self, r: usize, target: f64, at: impl Fn(usize) -> f64) -> f64 {
        let mut e = 0.0;
        for k in self.offs[r]..self.offs[r + 1] {
            e += self.coef[k] * at(self.idx[k]);
        }
        e - target
    }
}

impl SelectionFunction {
    /// Weighted quadratic. Missing σ / L_φ are computed (dense eigen up to 2000 dims, Gershgorin beyond).
    pub fn quadratic(
        rows: Vec<SelectionRow>,
        layout: &Layout,
        sigma: Option<f64>,
        lipschitz: Option<f64>,
    ) -> Result<Self> {
        let len = layout.len();
        for (r, row) in rows.iter().enumerate() {
            if row.idx.len() != row.coef.len() {
                return Err(GneError::Parse(format!("selection row {}: idx/coef length differ", r + 1)));
            }
            if let Some(&k) = row.idx.iter().find(|&&k| k >= len) {
                return Err(GneError::DimensionMismatch { expected: len, got: k + 1 });
            }
            if row.weight < 0.0 || !row.weight.is_finite() {
                return Err(GneError::validation(
                    "convex selection",
                    format!("selection row {} has weight {}", r + 1, row.weight),
                ));
            }
        }
        let (s_auto, l_auto) = hessian_bounds(&rows, len);
        let sigma = sigma.unwrap_or(s_auto);
        let lipschitz = lipschitz.unwrap_or(l_auto);
        if !(lipschitz > 0.0) || sigma < 0.0 {
            return Err(GneError::validation(
                "selection metadata",
                format!("need L_phi > 0 and sigma >= 0, got L_phi = {lipschitz}, sigma = {sigma}"),
            ));
        }
        let mut agent_rows = vec![Vec::new(); layout.n_agents()];
        let mut separable = true;
        for (r, row) in rows.iter().enumerate() {
            let owners: Vec<_> = row.idx.iter().map(|&k| layout.owner(k)).collect();
            match owners.first().copied().flatten() {
                Some(o) if owners.iter().all(|w| *w == Some(o)) => agent_rows[o].push(r),
                None if row.idx.is_empty() => {}
                _ => separable = false,
            }
        }
        Ok(SelectionFunction {
            flat: Some(Arc::new(FlatRows::new(&rows))),
            kind: SelectionKind::Quadratic(rows),
            sigma,
            lipschitz,
            agent_rows: separable.then_some(agent_rows),
        })
    }

    /// w‖x − x_ref‖² (+ w_d(‖λ‖² + ‖ν‖²) when `dual_weight > 0`).
    pub fn projection(layout: &Layout, x_ref: &[f64], weight: f64, dual_weight: f64) -> Result<Self> {
        if x_ref.len() != layout.n() {
            return Err(GneError::DimensionMismatch {
                expected: layout.n(),
                got: x_ref.len(),
            });
        }
        let mut rows: Vec<_> = x_ref
            .iter()
            .enumerate()
            .map(|(k, &r)| SelectionRow::unit(k, r, weight))
            .collect();
        if dual_weight > 0.0 {
            for k in layout.n()..layout.len() {
                rows.push(SelectionRow::unit(k, 0.0, dual_weight));
            }
        }
        let full = dual_weight > 0.0 || layout.len() == layout.n();
        let lo = if dual_weight > 0.0 { weight.min(dual_weight) } else { weight };
        let hi = weight.max(dual_weight);
        Self::quadratic(rows, layout, Some(if full { 2.0 * lo } else { 0.0 }), Some(2.0 * hi))
    }

    pub fn blackbox(oracle: Arc<dyn SelectionOracle>, sigma: f64, lipschitz: f64) -> Self {
        SelectionFunction {
            kind: SelectionKind::Blackbox(oracle),
            sigma,
            lipschitz,
            agent_rows: None,
            flat: None,
        }
    }

    pub fn kind(&self) -> &SelectionKind {
        &self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_separable(&self) -> bool {
        self.agent_rows.is_some()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match (&self.kind, &self.flat) {
            (SelectionKind::Quadratic(rows), Some(f)) => rows
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    let e = f.residual(r, row.target, |k| w[k]);
                    row.weight * e * e
                })
                .sum(),
            (SelectionKind::Blackbox(o), _) => o.value(w),
            _ => unreachable!("quadratic selection without flattened rows"),
        }
    }

    pub fn gradient(&self, w: &[f64], out: &mut [f64]) {
        match (&self.kind, &self.flat) {
            (SelectionKind::Quadratic(rows), Some(f)) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (r, row) in rows.iter().enumerate() {
                    let s = 2.0 * row.weight * f.residual(r, row.target, |k| w[k]);
                    for k in f.offs[r]..f.offs[r + 1] {
                        out[f.idx[k]] += s * f.coef[k];
                    }
                }
            }
            (SelectionKind::Blackbox(o), _) => o.gradient(w, out),
            _ => unreachable!("quadratic selection without flattened rows"),
        }
    }

    /// ∇_{ω_i}φ for a separable φ, from agent i's own (x_i, λ_i, ν_i) only.
    /// `out` is laid out as x_i ‖ λ_i ‖ ν_i. Returns false when φ is not separable.
    pub fn agent_gradient(&self, layout: &Layout, i: usize, xi: &[f64], li: &[f64], ni: &[f64], out: &mut [f64]) -> bool {
        let (Some(groups), SelectionKind::Quadratic(rows)) = (&self.agent_rows, &self.kind) else {
            return false;
        };
        let (xr, lr, nr) = (layout.x_range(i), layout.lambda_range(i), layout.nu_range(i));
        let local = |k: usize| -> (usize, f64) {
            if xr.contains(&k) {
                (k - xr.start, xi[k - xr.start])
            } else if lr.contains(&k) {
                (xi.len() + k - lr.start, li[k - lr.start])
            } else {
                (xi.len() + li.len() + k - nr.start, ni[k - nr.start])
            }
        };
        let f = self.flat.as_ref().expect("quadratic selection is flattened");
        out.iter_mut().for_each(|v| *v = 0.0);
        for &r in &groups[i] {
            let row = &rows[r];
            let s = 2.0 * row.weight * f.residual(r, row.target, |k| local(k).1);
            for k in f.offs[r]..f.offs[r + 1] {
                out[local(f.idx[k]).0] += s * f.coef[k];
            }
        }
        true
    }
}

/// Strong-convexity and smoothness moduli of Σ w (qᵀω − r)²: eigenvalues of 2QᵀWQ.
fn hessian_bounds(rows: &[SelectionRow], len: usize) -> (f64, f64) {
    if len <= 2000 {
        let mut h = DMatrix::<f64>::zeros(len, len);
        for r in rows {
            for (a, ca) in r.idx.iter().zip(&r.coef) {
                for (b, cb) in r.idx.iter().zip(&r.coef) {
                    h[(*a, *b)] += 2.0 * r.weight * ca * cb;
                }
            }
        }
        let ev = h.symmetric_eigen().eigenvalues;
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
        let hi = ev.iter().copied().fold(0.0, f64::max);
        (if lo < 1e-12 * hi { 0.0 } else { lo }, hi)
    } else {
        // Gershgorin: diag_a − Σ_{b≠a}|H_ab| ≤ λ ≤ diag_a + Σ_{b≠a}|H_ab|
        let mut diag = vec![0.0; len];
        let mut off = vec![0.0; len];
        for r in rows {
            let l1: f64 = r.coef.iter().map(|c| c.abs()).sum();
            for (a, ca) in r.idx.iter().zip(&r.coef) {
                diag[*a] += 2.0 * r.weight * ca * ca;
                off[*a] += 2.0 * r.weight * ca.abs() * (l1 - ca.abs());
            }
        }
        let lo = (0..len).map(|a| diag[a] - off[a]).fold(f64::INFINITY, f64::min).max(0.0);
        let hi = (0..len).map(|a| diag[a] + off[a]).fold(0.0, f64::max);
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_metadata() {
        let l = Layout::new(vec![1, 1], 1);
        let f = SelectionFunction::projection(&l, &[1.0, 2.0], 1.0, 0.0).unwrap();
        assert_eq!(f.lipschitz(), 2.0);
        assert_eq!(f.sigma(), 0.0);
        assert!(f.is_separable());
        let g = SelectionFunction::projection(&l, &[1.0, 2.0], 1.0, 0.5).unwrap();
        assert_eq!(g.sigma(), 1.0);
        assert_eq!(g.lipschitz(), 2.0);
    }

    #[test]
    fn auto_moduli_match_eigenvalues() {
        let l = Layout::new(vec![2], 0);
        // φ = (x0 + x1)² + 3 x1²  →  H = 2 [[1,1],[1,4]]
        let rows = vec![
            SelectionRow { idx: vec![0, 1], coef: vec![1.0, 1.0], target: 0.0, weight: 1.0 },
            SelectionRow::unit(1, 0.0, 3.0),
        ];
        let f = SelectionFunction::quadratic(rows, &l, None, None).unwrap();
        let disc = (9.0f64 + 4.0).sqrt();
        assert!((f.lipschitz() - (5.0 + disc)).abs() < 1e-10);
        assert!((f.sigma() - (5.0 - disc)).abs() < 1e-10);
    }

    #[test]
    fn coupled_row_is_not_separable() {
        let l = Layout::new(vec![1, 1], 0);
        let rows = vec![SelectionRow { idx: vec![0, 1], coef: vec![1.0, -1.0], target: 0.0, weight: 1.0 }];
        let f = SelectionFunction::quadratic(rows, &l, None, None).unwrap();
        assert!(!f.is_separable());
        let mut out = [0.0; 2];
        assert!(!f.agent_gradient(&l, 0, &[1.0], &[], &[], &mut out));
    }

    #[test]
    fn agent_gradient_matches_full_gradient() {
        let l = Layout::new(vec![2, 1], 1);
        let rows = vec![
            SelectionRow { idx: vec![0, 1], coef: vec![2.0, -1.0], target: 0.5, weight: 1.5 },
            SelectionRow::unit(3, 1.0, 0.7),
            SelectionRow::unit(6, -1.0, 0.2),
            SelectionRow::unit(2, 0.0, 1.0),
        ];
        let f = SelectionFunction::quadratic(rows, &l, None, None).unwrap();
        let w = [0.3, -0.2, 0.9, 0.4, 0.1, -0.6, 0.8];
        let mut full = [0.0; 7];
        f.gradient(&w, &mut full);
        let mut a0 = [0.0; 4];
        assert!(f.agent_gradient(&l, 0, &w[0..2], &w[3..4], &w[5..6], &mut a0));
        assert_eq!(a0, [full[0], full[1], full[3], full[5]]);
        let mut a1 = [0.0; 3];
        assert!(f.agent_gradient(&l, 1, &w[2..3], &w[4..5], &w[6..7], &mut a1));
        assert_eq!(a1, [full[2], full[4], full[6]]);
    }
}
