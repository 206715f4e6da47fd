use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;

use crate::linalg;

/// Read access to the primal blocks x_j an agent is allowed to see.
pub trait BlockSource {
    fn block(&self, j: usize) -> &[f64];
}

/// Monolithic view over a full primal vector.
pub struct StackedBlocks<'a> {
    pub x: &'a [f64],
    pub layout: &'a super::Layout,
}

impl BlockSource for StackedBlocks<'_> {
    fn block(&self, j: usize) -> &[f64] {
        &self.x[self.layout.x_range(j)]
    }
}

/// User-supplied cost oracle for one agent.
pub trait CostOracle: Send + Sync {
    /// Other agents whose decisions enter ∇_{x_i} f_i.
    fn dependencies(&self) -> Vec<usize>;
    /// Writes ∇_{x_i} f_i(x) into `out`.
    fn gradient(&self, x: &dyn BlockSource, out: &mut [f64]);
    /// Cost value, when available (used by gradient checks).
    fn value(&self, _x: &dyn BlockSource) -> Option<f64> {
        None
    }
}

/// Agent i's row-block of an affine pseudogradient: ∇_{x_i} f_i = Σ_j M_ij x_j + c_i.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub blocks: Vec<(usize, CsrMatrix<f64>)>,
    pub c: Vec<f64>,
}

#[derive(Clone)]
pub enum CostForm {
    Quadratic(QuadraticCost),
    Blackbox(Arc<dyn CostOracle>),
}

impl fmt::Debug for CostForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostForm::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            CostForm::Blackbox(_) => write!(f, "Blackbox"),
        }
    }
}

impl QuadraticCost {
    /// Split a dense row-block (n_i × n) into per-agent sparse blocks, dropping all-zero ones.
    pub fn from_dense_rows(rows: &DMatrix<f64>, c: Vec<f64>, layout: &super::Layout) -> Self {
        let mut blocks = Vec::new();
        for j in 0..layout.n_agents() {
            let r = layout.x_range(j);
            let sub = rows.columns(r.start, r.len()).into_owned();
            if sub.iter().any(|v| *v != 0.0) {
                blocks.push((j, linalg::csr_from_dense(&sub)));
            }
        }
        QuadraticCost { blocks, c }
    }

    pub fn block(&self, j: usize) -> Option<&CsrMatrix<f64>> {
        self.blocks.iter().find(|(k, _)| *k == j).map(|(_, m)| m)
    }
}

impl CostForm {
    pub fn dependencies(&self, own: usize) -> Vec<usize> {
        let mut d: Vec<usize> = match self {
            CostForm::Quadratic(q) => q.blocks.iter().map(|(j, _)| *j).collect(),
            CostForm::Blackbox(o) => o.dependencies(),
        };
        d.retain(|&j| j != own);
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn gradient(&self, x: &dyn BlockSource, out: &mut [f64]) {
        match self {
            CostForm::Quadratic(q) => {
                out.copy_from_slice(&q.c);
                for (j, m) in &q.blocks {
                    linalg::csr_mul_add(m, x.block(*j), out);
                }
            }
            CostForm::Blackbox(o) => o.gradient(x, out),
        }
    }

    /// f_i = ½ x_iᵀ M_ii x_i + Σ_{j≠i} x_iᵀ M_ij x_j + cᵀ x_i for the quadratic form.
    pub fn value(&self, own: usize, x: &dyn BlockSource) -> Option<f64> {
        match self {
            CostForm::Quadratic(q) => {
                let xi = x.block(own);
                let mut v = linalg::dot(&q.c, xi);
                for (j, m) in &q.blocks {
                    let mut t = vec![0.0; xi.len()];
                    linalg::csr_mul_add(m, x.block(*j), &mut t);
                    let s = linalg::dot(xi, &t);
                    v += if *j == own { 0.5 * s } else { s };
                }
                Some(v)
            }
            CostForm::Blackbox(o) => o.value(x),
        }
    }
}
