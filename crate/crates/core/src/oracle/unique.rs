//! Unique v-GNE of a strongly monotone affine game by extragradient on the KKT operator.

use nalgebra::{DMatrix, DVector};

use super::{aggregate_coupling, build_solution, plain_boxes, OracleMethod, OracleSolution};
use crate::error::{GneError, Result};
use crate::game::GameSpec;

const MAX_ITER: usize = 1_000_000;

/// z = (x, λ) ↦ (Mx + c + Aᵀλ, b − Ax), projected onto X × ℝ^m_+.
pub fn oracle_unique_vgne(spec: &GameSpec) -> Result<OracleSolution> {
    let (mat, c) = spec
        .dense_pseudogradient()
        .ok_or_else(|| GneError::OracleUnavailable("needs a quadratic pseudogradient".into()))?;
    let sym = (&mat + mat.transpose()) * 0.5;
    let mu = sym.symmetric_eigen().eigenvalues.min();
    if !(mu > 1e-12) {
        return Err(GneError::NotStronglyMonotone(mu));
    }
    let (lo, hi) = plain_boxes(spec)?;
    let (a, b) = aggregate_coupling(spec)?;
    let n = mat.nrows();
    let m = a.nrows();
    let c = DVector::from_vec(c);

    let mut kkt_op = DMatrix::zeros(n + m, n + m);
    kkt_op.view_mut((0, 0), (n, n)).copy_from(&mat);
    kkt_op.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    kkt_op.view_mut((n, 0), (m, n)).copy_from(&(-&a));
    let l_kkt = kkt_op.singular_values().max();
    let step = 0.5 / l_kkt;
    let mut offset = DVector::zeros(n + m);
    offset.rows_mut(0, n).copy_from(&c);
    offset.rows_mut(n, m).copy_from(&b);

    let project = |z: &mut DVector<f64>| {
        for k in 0..n {
            z[k] = z[k].clamp(lo[k], hi[k]);
        }
        for k in n..n + m {
            z[k] = z[k].max(0.0);
        }
    };
    let mut z = DVector::zeros(n + m);
    for k in 0..n {
        z[k] = 0.5 * (lo[k] + hi[k]);
    }
    for _ in 0..MAX_ITER {
        let mut half = &z - (&kkt_op * &z + &offset) * step;
        project(&mut half);
        let mut next = &z - (&kkt_op * &half + &offset) * step;
        project(&mut next);
        let moved = (&next - &z).amax();
        z = next;
        if moved <= 1e-15 {
            break;
        }
    }
    let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
    let lambda = refine_dual(&mat, &c, &a, &b, &lo, &hi, &x, z.rows(n, m).iter().copied().collect());

    // VI residual: natural map ‖z − Π(z − G(z))‖ with the refined multiplier
    let mut zr = DVector::zeros(n + m);
    zr.rows_mut(0, n).copy_from_slice(&x);
    zr.rows_mut(n, m).copy_from_slice(&lambda);
    let mut p = &zr - (&kkt_op * &zr + &offset);
    project(&mut p);
    let vi = (&zr - p).amax();
    build_solution(spec, &x, &lambda, OracleMethod::LongRunExtragradient, vi)
}

/// Least-squares multiplier on the active coupling rows, using coordinates strictly inside the box.
#[allow(clippy::too_many_arguments)]
fn refine_dual(
    mat: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    x: &[f64],
    lambda0: Vec<f64>,
) -> Vec<f64> {
    let n = x.len();
    let m = a.nrows();
    if m == 0 {
        return lambda0;
    }
    let xv = DVector::from_column_slice(x);
    let slack = b - a * &xv;
    let active: Vec<usize> = (0..m).filter(|&k| slack[k].abs() <= 1e-9).collect();
    let interior: Vec<usize> = (0..n)
        .filter(|&k| x[k] > lo[k] + 1e-9 && x[k] < hi[k] - 1e-9)
        .collect();
    let mut lambda = vec![0.0; m];
    if active.is_empty() {
        return lambda;
    }
    if interior.is_empty() {
        return lambda0.iter().map(|v| v.max(0.0)).collect();
    }
    let grad = mat * &xv + c;
    // −(Mx + c)_I = A_{S,I}ᵀ λ_S
    let sys = DMatrix::from_fn(interior.len(), active.len(), |p, q| a[(active[q], interior[p])]);
    let rhs = DVector::from_fn(interior.len(), |p, _| -grad[interior[p]]);
    let svd = sys.svd(true, true);
    match svd.solve(&rhs, 1e-12) {
        Ok(sol) => {
            for (q, &k) in active.iter().enumerate() {
                lambda[k] = sol[q].max(0.0);
            }
            lambda
        }
        Err(_) => lambda0.iter().map(|v| v.max(0.0)).collect(),
    }
}
