//! Small dense/sparse helpers shared by the game model and the operators.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn csr_from_dense(m: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 {
                coo.push(r, c, v);
            }
        }
    }
    CsrMatrix::from(&coo)
}

pub fn csr_from_triplets(rows: usize, cols: usize, t: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(rows, cols);
    for &(r, c, v) in t {
        coo.push(r, c, v);
    }
    // duplicates are summed by the conversion
    CsrMatrix::from(&coo)
}

pub fn csr_to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, row) in a.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            m[(r, c)] += v;
        }
    }
    m
}

/// y += A x
pub fn csr_mul_add(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let (offs, cols, vals) = (a.row_offsets(), a.col_indices(), a.values());
    for (r, yr) in y.iter_mut().enumerate().take(a.nrows()) {
        let (lo, hi) = (offs[r], offs[r + 1]);
        if lo == hi {
            continue;
        }
        let mut s = 0.0;
        for k in lo..hi {
            s += vals[k] * x[cols[k]];
        }
        *yr += s;
    }
}

/// y += Aᵀ v
pub fn csr_tmul_add(a: &CsrMatrix<f64>, v: &[f64], y: &mut [f64]) {
    let (offs, cols, vals) = (a.row_offsets(), a.col_indices(), a.values());
    for r in 0..a.nrows() {
        let vr = v[r];
        if vr == 0.0 {
            continue;
        }
        for k in offs[r]..offs[r + 1] {
            y[cols[k]] += vals[k] * vr;
        }
    }
}

/// max over rows of Σ_c |A_rc|
pub fn max_abs_row_sum(a: &CsrMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// max over columns of Σ_r |A_rc|
pub fn max_abs_col_sum(a: &CsrMatrix<f64>) -> f64 {
    let mut s = vec![0.0; a.ncols()];
    for row in a.row_iter() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            s[c] += v.abs();
        }
    }
    s.into_iter().fold(0.0, f64::max)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Extreme eigenvalues of the symmetric part of `m`, with the eigenvector of the smallest one.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64, Vec<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (0.0, 0.0, Vec::new());
    }
    let s = (m + m.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let mut imin = 0;
    let mut imax = 0;
    for i in 0..n {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let v = eig.eigenvectors.column(imin).iter().copied().collect();
    (eig.eigenvalues[imin], eig.eigenvalues[imax], v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_products_match_dense() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -2.0, 0.5, 3.0, 0.0]);
        let a = csr_from_dense(&d);
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 2];
        csr_mul_add(&a, &x, &mut y);
        assert_eq!(y, [-5.0, 6.5]);
        let mut z = [0.0; 3];
        csr_tmul_add(&a, &[1.0, -1.0], &mut z);
        assert_eq!(z, [0.5, -3.0, -2.0]);
        assert_eq!(max_abs_row_sum(&a), 3.5);
        assert_eq!(max_abs_col_sum(&a), 3.0);
        assert_eq!(csr_to_dense(&a), d);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -4.0, 2.0]));
        assert!((spectral_norm(&d) - 4.0).abs() < 1e-12);
        let (lo, hi, _) = sym_eig_extremes(&d);
        assert!((lo + 4.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }
}
