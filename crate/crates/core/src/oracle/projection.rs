//! min ‖x − x_ref‖² over boxes ∩ {A x ≤ b} by exhaustive active-set enumeration.

use nalgebra::{DMatrix, DVector};

use super::{aggregate_coupling, build_solution, is_zero_pseudogradient, plain_boxes, OracleMethod, OracleSolution};
use crate::error::{GneError, Result};
use crate::game::GameSpec;

pub const MAX_ENUM_DIM: usize = 8;
const FEAS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, PartialEq)]
enum Face {
    Free,
    Lo,
    Hi,
}

struct Candidate {
    x: Vec<f64>,
    obj: f64,
    /// multipliers of the active coupling rows
    mu: Vec<(usize, f64)>,
    faces: Vec<Face>,
}

fn subsets_up_to(m: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << m) {
        if (mask.count_ones() as usize) <= max {
            out.push((0..m).filter(|k| mask & (1 << k) != 0).collect());
        }
    }
    out
}

/// Projection of x_ref onto the equality face given by `faces` and active rows `rows`.
fn solve_face(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    r: &[f64],
    faces: &[Face],
    rows: &[usize],
) -> Option<Candidate> {
    let n = r.len();
    let free: Vec<usize> = (0..n).filter(|&k| faces[k] == Face::Free).collect();
    let mut x: Vec<f64> = (0..n)
        .map(|k| match faces[k] {
            Face::Free => r[k],
            Face::Lo => lo[k],
            Face::Hi => hi[k],
        })
        .collect();
    let mut mu = Vec::new();
    if !rows.is_empty() {
        if free.is_empty() {
            return None;
        }
        let asf = DMatrix::from_fn(rows.len(), free.len(), |p, q| a[(rows[p], free[q])]);
        let rhs = DVector::from_fn(rows.len(), |p, _| {
            let row = rows[p];
            b[row] - (0..n).filter(|&k| faces[k] != Face::Free).map(|k| a[(row, k)] * x[k]).sum::<f64>()
        });
        let rf = DVector::from_fn(free.len(), |q, _| r[free[q]]);
        let gram = &asf * asf.transpose();
        let mv = gram.pseudo_inverse(1e-12).ok()? * (&asf * &rf - &rhs);
        let xf = &rf - asf.transpose() * &mv;
        if (&asf * &xf - &rhs).amax() > FEAS_TOL {
            return None;
        }
        for (q, &k) in free.iter().enumerate() {
            x[k] = xf[q];
        }
        mu = rows.iter().copied().zip(mv.iter().copied()).collect();
    }
    for k in 0..n {
        if x[k] < lo[k] - FEAS_TOL || x[k] > hi[k] + FEAS_TOL {
            return None;
        }
        x[k] = x[k].clamp(lo[k], hi[k]);
    }
    let ax = a * DVector::from_column_slice(&x);
    if (0..b.len()).any(|row| ax[row] > b[row] + FEAS_TOL) {
        return None;
    }
    let obj = x.iter().zip(r).map(|(p, q)| (p - q).powi(2)).sum();
    Some(Candidate { x, obj, mu, faces: faces.to_vec() })
}

/// Largest violation of the projection KKT conditions for the winning face.
fn projection_kkt(a: &DMatrix<f64>, r: &[f64], c: &Candidate) -> f64 {
    let n = r.len();
    let mut grad: Vec<f64> = (0..n).map(|k| c.x[k] - r[k]).collect();
    let mut worst: f64 = 0.0;
    for &(row, m) in &c.mu {
        worst = worst.max(-m);
        for k in 0..n {
            grad[k] += m * a[(row, k)];
        }
    }
    for k in 0..n {
        let v = match c.faces[k] {
            Face::Free => grad[k].abs(),
            // at a lower bound the gradient must point inward (≥ 0), at an upper bound ≤ 0
            Face::Lo => (-grad[k]).max(0.0),
            Face::Hi => grad[k].max(0.0),
        };
        worst = worst.max(v);
    }
    worst
}

/// Minimum-distance v-GNE of an F ≡ 0 game: the projection of x_ref onto the feasible set.
pub fn oracle_projection_game(spec: &GameSpec, x_ref: &[f64]) -> Result<OracleSolution> {
    let n = spec.layout().n();
    if n > MAX_ENUM_DIM {
        return Err(GneError::DimensionTooLarge(n));
    }
    if x_ref.len() != n {
        return Err(GneError::DimensionMismatch { expected: n, got: x_ref.len() });
    }
    if !is_zero_pseudogradient(spec) {
        return Err(GneError::OracleUnavailable("projection oracle needs F = 0".into()));
    }
    let (lo, hi) = plain_boxes(spec)?;
    let (a, b) = aggregate_coupling(spec)?;
    let m = spec.m();
    if m > 16 {
        return Err(GneError::OracleUnavailable(format!("{m} coupling rows are too many to enumerate")));
    }
    let row_sets = subsets_up_to(m, n);
    let mut best: Option<(Candidate, f64)> = None;
    let mut faces = vec![Face::Free; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for f in faces.iter_mut() {
            *f = [Face::Free, Face::Lo, Face::Hi][c % 3];
            c /= 3;
        }
        let n_free = faces.iter().filter(|f| **f == Face::Free).count();
        for rows in &row_sets {
            if rows.len() > n_free {
                continue;
            }
            if let Some(cand) = solve_face(&a, &b, &lo, &hi, x_ref, &faces, rows) {
                // among ties (degenerate faces) keep the one with valid multiplier signs
                let kkt = projection_kkt(&a, x_ref, &cand);
                let better = match &best {
                    None => true,
                    Some((bst, bk)) => cand.obj < bst.obj - 1e-12 || (cand.obj <= bst.obj + 1e-12 && kkt < *bk),
                };
                if better {
                    best = Some((cand, kkt));
                }
            }
        }
    }
    let (best, vi) = best.ok_or_else(|| GneError::OracleUnavailable("feasible set is empty".into()))?;
    // F = 0: every feasible point is a v-GNE with zero multiplier
    build_solution(spec, &best.x, &vec![0.0; m], OracleMethod::ActiveSetEnumeration, vi)
}
