//! Lipschitz constants of F and of ℬ + 𝒞.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::blocks::{apply_bc, laplacian_lambda, laplacian_nu};
use crate::error::{GneError, Result};
use crate::game::{ConstraintForm, CostForm, GameSpec, JointState, StackedBlocks};
use crate::linalg;

/// Dense assembly of the linear part of ℬ + 𝒞 is used up to this n_ω.
pub const DENSE_LIMIT: usize = 1500;
/// Safety factor applied to power-iteration estimates (they are lower bounds).
pub const POWER_SAFETY: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzMethod {
    ExactAffine,
    PowerIteration,
    /// ‖linear part‖ plus the bilinear-term bound for nonlinear g
    Bound,
    Declared,
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzEstimate {
    pub l_f: f64,
    pub l_b: f64,
    pub method: LipschitzMethod,
    /// b_{∇g_i}: bound of ‖∇g_i‖ over X_i
    pub grad_g_bounds: Vec<f64>,
    /// b_{λ_i}: dual bound used for the bilinear term
    pub dual_bounds: Vec<f64>,
}

impl LipschitzEstimate {
    pub fn declared(l_b: f64, l_f: f64) -> Self {
        LipschitzEstimate {
            l_f,
            l_b,
            method: LipschitzMethod::Declared,
            grad_g_bounds: Vec::new(),
            dual_bounds: Vec::new(),
        }
    }
}

/// Linear map ω ↦ (ℬ+𝒞)(ω) − (ℬ+𝒞)(0) for affine g and quadratic costs. `skip_a` drops the A_i terms.
fn linear_part(spec: &GameSpec, w: &[f64], skip_a: bool) -> Vec<f64> {
    let layout = spec.layout();
    let m = layout.m();
    let mut out = vec![0.0; layout.len()];
    let state = JointState::from_vec(layout.clone(), w.to_vec()).expect("layout");
    for i in 0..spec.n_agents() {
        let a = spec.agent(i);
        let xr = layout.x_range(i);
        if let CostForm::Quadratic(q) = &a.cost {
            for (j, blk) in &q.blocks {
                linalg::csr_mul_add(blk, state.x_block(*j), &mut out[xr.clone()]);
            }
        }
        let amat = a.g.linear_part();
        if !skip_a {
            linalg::csr_tmul_add(amat, state.lambda(i), &mut out[xr.clone()]);
        }
        let mut ll = vec![0.0; m];
        laplacian_lambda(spec, i, &state, &mut ll);
        let mut ln = vec![0.0; m];
        laplacian_nu(spec, i, &state, &mut ln);
        let mut ax = vec![0.0; m];
        if !skip_a {
            linalg::csr_mul_add(amat, state.x_block(i), &mut ax);
        }
        let lr = layout.lambda_range(i);
        for k in 0..m {
            out[lr.start + k] = ll[k] - ax[k] - ln[k];
        }
        out[layout.nu_range(i)].copy_from_slice(&ll);
    }
    out
}

/// Transpose of `linear_part`.
fn linear_part_t(spec: &GameSpec, y: &[f64], skip_a: bool) -> Vec<f64> {
    let layout = spec.layout();
    let m = layout.m();
    let mut out = vec![0.0; layout.len()];
    let ys = JointState::from_vec(layout.clone(), y.to_vec()).expect("layout");
    for i in 0..spec.n_agents() {
        let a = spec.agent(i);
        if let CostForm::Quadratic(q) = &a.cost {
            for (j, blk) in &q.blocks {
                linalg::csr_tmul_add(blk, ys.x_block(i), &mut out[layout.x_range(*j)]);
            }
        }
        let amat = a.g.linear_part();
        if !skip_a {
            // x_i ← −A_iᵀ y_λi ; λ_i ← A_i y_xi
            let mut t = vec![0.0; a.dim];
            linalg::csr_tmul_add(amat, ys.lambda(i), &mut t);
            for (o, v) in out[layout.x_range(i)].iter_mut().zip(&t) {
                *o -= v;
            }
            let mut u = vec![0.0; m];
            linalg::csr_mul_add(amat, ys.x_block(i), &mut u);
            for (o, v) in out[layout.lambda_range(i)].iter_mut().zip(&u) {
                *o += v;
            }
        }
        // L is symmetric: λ_i ← (L y_λ)_i + (L y_ν)_i ; ν_i ← −(L y_λ)_i
        let mut ll = vec![0.0; m];
        laplacian_lambda(spec, i, &ys, &mut ll);
        let mut ln = vec![0.0; m];
        laplacian_nu(spec, i, &ys, &mut ln);
        let lr = layout.lambda_range(i);
        for k in 0..m {
            out[lr.start + k] += ll[k] + ln[k];
        }
        let nr = layout.nu_range(i);
        for k in 0..m {
            out[nr.start + k] -= ll[k];
        }
    }
    out
}

fn dense_linear_part(spec: &GameSpec, skip_a: bool) -> DMatrix<f64> {
    let len = spec.layout().len();
    let mut mat = DMatrix::zeros(len, len);
    let mut e = vec![0.0; len];
    for c in 0..len {
        e[c] = 1.0;
        let col = linear_part(spec, &e, skip_a);
        mat.set_column(c, &DVector::from_vec(col));
        e[c] = 0.0;
    }
    mat
}

/// Power iteration for ‖M‖ via MᵀM, returning the (unsafened) estimate.
fn power_norm(
    len: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    apply_t: impl Fn(&[f64]) -> Vec<f64>,
    seed: u64,
) -> Result<f64> {
    if len == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n0 = linalg::norm(&v);
    v.iter_mut().for_each(|t| *t /= n0);
    // the estimate creeps up slowly when the top singular values cluster; POWER_SAFETY
    // covers what is left once it gains less than 1e-6 over 50 iterations
    let mut hist: Vec<f64> = Vec::new();
    for it in 0..5_000 {
        let w = apply_t(&apply(&v));
        let nw = linalg::norm(&w);
        if !nw.is_finite() {
            return Err(GneError::EstimationDiverged(format!("non-finite norm at iteration {it}")));
        }
        if nw == 0.0 {
            return Ok(0.0);
        }
        let next = nw.sqrt();
        v = w.into_iter().map(|t| t / nw).collect();
        hist.push(next);
        if it >= 50 && (next - hist[it - 50]).abs() <= 1e-6 * next {
            return Ok(next);
        }
    }
    Ok(hist.last().copied().unwrap_or(0.0))
}

/// Lipschitz constant of F.
fn estimate_lf(spec: &GameSpec) -> Result<(f64, bool)> {
    if let Some(l) = spec.options().lipschitz_f {
        return Ok((l, true));
    }
    if !spec.is_quadratic() {
        return Err(GneError::EstimationDiverged(
            "blackbox costs need a declared lipschitz_f".into(),
        ));
    }
    let n = spec.layout().n();
    if n <= DENSE_LIMIT {
        let (mat, _) = spec.dense_pseudogradient().expect("quadratic");
        return Ok((linalg::spectral_norm(&mat), true));
    }
    let layout = spec.layout();
    let apply = |x: &[f64]| {
        let mut out = vec![0.0; n];
        let src = StackedBlocks { x, layout };
        for i in 0..spec.n_agents() {
            if let CostForm::Quadratic(q) = &spec.agent(i).cost {
                for (j, blk) in &q.blocks {
                    linalg::csr_mul_add(blk, crate::game::BlockSource::block(&src, *j), &mut out[layout.x_range(i)]);
                }
            }
        }
        out
    };
    let apply_t = |y: &[f64]| {
        let mut out = vec![0.0; n];
        for i in 0..spec.n_agents() {
            if let CostForm::Quadratic(q) = &spec.agent(i).cost {
                for (j, blk) in &q.blocks {
                    linalg::csr_tmul_add(blk, &y[layout.x_range(i)], &mut out[layout.x_range(*j)]);
                }
            }
        }
        out
    };
    Ok((POWER_SAFETY * power_norm(n, apply, apply_t, 11)?, false))
}

/// Frobenius bound of ∇g_i over the bounding box of X_i, and Lipschitz constant of ∇g_i.
fn grad_g_bounds(spec: &GameSpec, i: usize) -> (f64, f64) {
    let a = spec.agent(i);
    let bx = a.set.bounds();
    let amat = linalg::csr_to_dense(a.g.linear_part());
    let mut b2 = 0.0;
    let mut lg: f64 = 0.0;
    let d = match &a.g {
        ConstraintForm::Quad { d, .. } => Some(d),
        _ => None,
    };
    for k in 0..amat.nrows() {
        for j in 0..amat.ncols() {
            let reach = bx.lo[j].abs().max(bx.hi[j].abs());
            let dk = d.map(|d| d[(k, j)]).unwrap_or(0.0);
            let e = amat[(k, j)].abs() + dk * reach;
            b2 += e * e;
        }
    }
    if let Some(d) = d {
        for j in 0..d.ncols() {
            lg = lg.max(d.column(j).norm());
        }
    }
    (b2.sqrt(), lg)
}

/// b_λ-based bound when g is nonlinear: ‖(F, Lλ − Lν, Lλ)‖ + max_i max(2b_∇g, √(2b_λ²L_g² + b_∇g²)).
pub(crate) fn nonlinear_bound(spec: &GameSpec, l_lin: f64, dual_bounds: &[f64]) -> (f64, Vec<f64>) {
    let mut lc1: f64 = 0.0;
    let mut bg = Vec::with_capacity(spec.n_agents());
    for i in 0..spec.n_agents() {
        let (b, lg) = grad_g_bounds(spec, i);
        let bl = dual_bounds[i];
        lc1 = lc1.max((2.0 * b).max((2.0 * bl * bl * lg * lg + b * b).sqrt()));
        bg.push(b);
    }
    (l_lin + lc1, bg)
}

/// Norm of the linear part of ℬ+𝒞 (with or without the A_i terms), exact when small.
fn linear_norm(spec: &GameSpec, skip_a: bool) -> Result<(f64, bool)> {
    let len = spec.layout().len();
    if len <= DENSE_LIMIT {
        return Ok((linalg::spectral_norm(&dense_linear_part(spec, skip_a)), true));
    }
    let est = power_norm(
        len,
        |w| linear_part(spec, w, skip_a),
        |y| linear_part_t(spec, y, skip_a),
        7,
    )?;
    Ok((POWER_SAFETY * est, false))
}

/// Estimate L_F and L_B. For nonlinear g the dual bound is taken from the game options, or from `dual_bound`.
pub fn estimate_lipschitz_with(spec: &GameSpec, dual_bound: Option<f64>) -> Result<LipschitzEstimate> {
    let (l_f, _) = estimate_lf(spec)?;
    if let Some(l_b) = spec.options().lipschitz_b {
        return Ok(LipschitzEstimate::declared(l_b, l_f));
    }
    if !spec.is_quadratic() {
        // blackbox F: randomized directional differences of the full operator
        return power_blackbox(spec, l_f);
    }
    if spec.is_affine() {
        let (l_b, exact) = linear_norm(spec, false)?;
        let grad_g_bounds = (0..spec.n_agents()).map(|i| grad_g_bounds(spec, i).0).collect();
        return Ok(LipschitzEstimate {
            l_f,
            l_b,
            method: if exact {
                LipschitzMethod::ExactAffine
            } else {
                LipschitzMethod::PowerIteration
            },
            grad_g_bounds,
            dual_bounds: Vec::new(),
        });
    }
    let b = dual_bound.or(spec.options().dual_bound).unwrap_or(1.0);
    let duals = vec![b; spec.n_agents()];
    let (l_lin, _) = linear_norm(spec, true)?;
    let (l_b, grad_g_bounds) = nonlinear_bound(spec, l_lin, &duals);
    Ok(LipschitzEstimate {
        l_f,
        l_b,
        method: LipschitzMethod::Bound,
        grad_g_bounds,
        dual_bounds: duals,
    })
}

fn power_blackbox(spec: &GameSpec, l_f: f64) -> Result<LipschitzEstimate> {
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = spec.initial_state();
    let f0 = apply_bc(spec, &base)?;
    let mut best: f64 = 0.0;
    for _ in 0..200 {
        let mut w = base.clone();
        let mut d = vec![0.0; layout.len()];
        for (k, v) in d.iter_mut().enumerate() {
            *v = rng.gen_range(-1.0..1.0) * 1e-3;
            w.as_mut_slice()[k] += *v;
        }
        for i in 0..spec.n_agents() {
            for v in w.lambda_mut(i) {
                *v = v.max(0.0);
            }
        }
        let diff: Vec<f64> = w.as_slice().iter().zip(base.as_slice()).map(|(a, b)| a - b).collect();
        let f1 = apply_bc(spec, &w)?;
        let r = (&f1 - &f0).norm() / linalg::norm(&diff).max(f64::MIN_POSITIVE);
        best = best.max(r);
    }
    Ok(LipschitzEstimate {
        l_f,
        l_b: POWER_SAFETY * best.max(l_f),
        method: LipschitzMethod::PowerIteration,
        grad_g_bounds: Vec::new(),
        dual_bounds: Vec::new(),
    })
}

/// Estimate L_F and L_B; nonlinear g without a declared dual bound is bootstrapped
/// from a short Banach–Picard pre-run.
pub fn estimate_lipschitz(spec: &GameSpec) -> Result<LipschitzEstimate> {
    if spec.is_affine() || spec.options().dual_bound.is_some() || spec.options().lipschitz_b.is_some() {
        return estimate_lipschitz_with(spec, None);
    }
    let provisional = estimate_lipschitz_with(spec, Some(1.0))?;
    let steps = super::make_stepsizes(spec, &provisional, super::StepMode::Fbf, None)?;
    let mut w = spec.initial_state();
    for _ in 0..2000 {
        let (next, _) = super::t_fbf(spec, &steps, &w)?;
        let done = (next.vector() - w.vector()).norm() <= 1e-8;
        w = next;
        if done {
            break;
        }
    }
    let peak = (0..spec.n_agents())
        .map(|i| linalg::norm(w.lambda(i)))
        .fold(1.0, f64::max);
    estimate_lipschitz_with(spec, Some(10.0 * peak))
}

#[cfg(test)]
pub(crate) fn dense_linear(spec: &GameSpec) -> DMatrix<f64> {
    dense_linear_part(spec, false)
}

#[cfg(test)]
pub(crate) fn linear_apply(spec: &GameSpec, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (linear_part(spec, w, false), linear_part_t(spec, w, false))
}
