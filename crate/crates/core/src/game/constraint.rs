use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;

use crate::linalg;

/// g_i : ℝ^{n_i} → ℝ^m.
#[derive(Clone, Debug)]
pub enum ConstraintForm {
    /// g(x) = A x − b
    Affine { a: CsrMatrix<f64>, b: Vec<f64> },
    /// g_k(x) = ½ Σ_j D_kj x_j² + (A x)_k − b_k, D ≥ 0 entrywise
    Quad {
        d: DMatrix<f64>,
        a: CsrMatrix<f64>,
        b: Vec<f64>,
    },
}

impl ConstraintForm {
    pub fn empty(n_i: usize) -> Self {
        ConstraintForm::Affine {
            a: CsrMatrix::zeros(0, n_i),
            b: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            ConstraintForm::Affine { b, .. } | ConstraintForm::Quad { b, .. } => b.len(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ConstraintForm::Affine { .. })
    }

    pub fn linear_part(&self) -> &CsrMatrix<f64> {
        match self {
            ConstraintForm::Affine { a, .. } | ConstraintForm::Quad { a, .. } => a,
        }
    }

    pub fn offset(&self) -> &[f64] {
        match self {
            ConstraintForm::Affine { b, .. } | ConstraintForm::Quad { b, .. } => b,
        }
    }

    /// out = g(x)
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ConstraintForm::Affine { a, b } => {
                for (o, bk) in out.iter_mut().zip(b) {
                    *o = -bk;
                }
                linalg::csr_mul_add(a, x, out);
            }
            ConstraintForm::Quad { d, a, b } => {
                for k in 0..b.len() {
                    let mut s = -b[k];
                    for j in 0..x.len() {
                        s += 0.5 * d[(k, j)] * x[j] * x[j];
                    }
                    out[k] = s;
                }
                linalg::csr_mul_add(a, x, out);
            }
        }
    }

    /// out += ∇g(x)ᵀ λ
    pub fn jac_t_mul_add(&self, x: &[f64], lambda: &[f64], out: &mut [f64]) {
        match self {
            ConstraintForm::Affine { a, .. } => linalg::csr_tmul_add(a, lambda, out),
            ConstraintForm::Quad { d, a, .. } => {
                linalg::csr_tmul_add(a, lambda, out);
                for k in 0..lambda.len() {
                    if lambda[k] == 0.0 {
                        continue;
                    }
                    for j in 0..x.len() {
                        out[j] += lambda[k] * d[(k, j)] * x[j];
                    }
                }
            }
        }
    }

    /// Dense Jacobian at x (m × n_i).
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = linalg::csr_to_dense(self.linear_part());
        if let ConstraintForm::Quad { d, .. } = self {
            for k in 0..d.nrows() {
                for c in 0..x.len() {
                    j[(k, c)] += d[(k, c)] * x[c];
                }
            }
        }
        j
    }
}
