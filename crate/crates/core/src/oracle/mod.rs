//! Reference solvers for small constructed games. They share no code with the splitting
//! operators, so agreement between the two is meaningful.

mod projection;
mod segment;
mod unique;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use projection::{oracle_projection_game, MAX_ENUM_DIM};
pub use segment::{golden_section, oracle_selection_on_segment};
pub use unique::oracle_unique_vgne;

use crate::error::{GneError, Result};
use crate::game::{kkt_residual, CostForm, GameSpec, JointState, ProxForm, SelectionKind, SetForm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Analytic,
    ActiveSetEnumeration,
    LongRunExtragradient,
    GoldenSection,
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub state: JointState,
    pub method: OracleMethod,
    /// kkt_residual at (x⋆, λ⋆)
    pub kkt: f64,
    /// Residual of the optimality conditions of the problem the oracle solved.
    pub vi_residual: f64,
}

#[derive(Serialize)]
struct SolutionJson<'a> {
    method: OracleMethod,
    x: &'a [f64],
    lambda: Vec<f64>,
    nu: Vec<Vec<f64>>,
    kkt: f64,
    vi_residual: f64,
}

impl OracleSolution {
    pub fn to_json(&self) -> serde_json::Value {
        let n = self.state.layout().n_agents();
        serde_json::to_value(SolutionJson {
            method: self.method,
            x: self.state.x(),
            lambda: if n > 0 { self.state.lambda(0).to_vec() } else { Vec::new() },
            nu: (0..n).map(|i| self.state.nu(i).to_vec()).collect(),
            kkt: self.kkt,
            vi_residual: self.vi_residual,
        })
        .expect("plain data")
    }
}

/// x_ref when φ is w‖x − x_ref‖² with one weight w, plus terms on the duals only.
pub fn projection_target(spec: &GameSpec) -> Option<Vec<f64>> {
    let n = spec.layout().n();
    let SelectionKind::Quadratic(rows) = spec.selection()?.kind() else {
        return None;
    };
    let mut target = vec![None; n];
    let mut weight = None;
    for r in rows {
        if r.idx.iter().all(|&k| k >= n) {
            continue;
        }
        if r.idx.len() != 1 || r.coef[0] != 1.0 || target[r.idx[0]].is_some() {
            return None;
        }
        if *weight.get_or_insert(r.weight) != r.weight {
            return None;
        }
        target[r.idx[0]] = Some(r.target);
    }
    target.into_iter().collect()
}

/// The reference solution of whichever constructed family `spec` belongs to: the
/// projection oracle for F ≡ 0 games with a projection-type φ, otherwise the
/// strongly monotone extragradient oracle.
pub fn oracle_for(spec: &GameSpec) -> Result<OracleSolution> {
    if is_zero_pseudogradient(spec) {
        let x_ref = projection_target(spec)
            .ok_or_else(|| GneError::OracleUnavailable("F = 0 game without a projection-type selection".into()))?;
        return oracle_projection_game(spec, &x_ref);
    }
    oracle_unique_vgne(spec)
}

/// Stacked coupling (A, b) with Σ_i g_i(x_i) = A x − b; errors on nonlinear g.
pub(crate) fn aggregate_coupling(spec: &GameSpec) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let layout = spec.layout();
    let m = spec.m();
    let mut a = DMatrix::zeros(m, layout.n());
    let mut b = DVector::zeros(m);
    for i in 0..spec.n_agents() {
        let ag = spec.agent(i);
        if !ag.g.is_affine() {
            return Err(GneError::NotAffine { agent: i });
        }
        let r = layout.x_range(i);
        for (row, col, v) in ag.g.linear_part().triplet_iter() {
            a[(row, r.start + col)] += *v;
        }
        for (k, v) in ag.g.offset().iter().enumerate() {
            b[k] += v;
        }
    }
    Ok((a, b))
}

/// Boxes only, no ℓ_i.
pub(crate) fn plain_boxes(spec: &GameSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    for (i, a) in spec.agents().iter().enumerate() {
        if !matches!(a.set, SetForm::Box(_)) || !matches!(a.ell, ProxForm::Zero) {
            return Err(GneError::OracleUnavailable(format!(
                "agent {} has a non-box local set or a nonsmooth cost term",
                i + 1
            )));
        }
    }
    Ok(spec.primal_bounds())
}

pub(crate) fn is_zero_pseudogradient(spec: &GameSpec) -> bool {
    spec.agents().iter().all(|a| match &a.cost {
        CostForm::Quadratic(q) => {
            q.c.iter().all(|v| *v == 0.0) && q.blocks.iter().all(|(_, b)| b.values().iter().all(|v| *v == 0.0))
        }
        CostForm::Blackbox(_) => false,
    })
}

/// Min-norm ν with (L⊗I)ν_i = −g_i(x_i) + s/N, s = Σ_j g_j(x_j): the consensus variable of a
/// fixed point whose multipliers agree.
pub(crate) fn consensus_nu(spec: &GameSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let n = spec.n_agents();
    let m = spec.m();
    let layout = spec.layout();
    let s = spec.coupling(x);
    let mut g = vec![vec![0.0; m]; n];
    for (i, gi) in g.iter_mut().enumerate() {
        spec.agent(i).g.eval(&x[layout.x_range(i)], gi);
    }
    let lap = spec.graph().laplacian();
    let pinv = lap.pseudo_inverse(1e-12).expect("svd");
    let mut nu = vec![vec![0.0; m]; n];
    for k in 0..m {
        let rhs = DVector::from_fn(n, |i, _| -g[i][k] + s[k] / n as f64);
        let sol = &pinv * rhs;
        for i in 0..n {
            nu[i][k] = sol[i];
        }
    }
    nu
}

/// Assemble (x, λ𝟙, ν) and certify with kkt_residual.
pub(crate) fn build_solution(
    spec: &GameSpec,
    x: &[f64],
    lambda: &[f64],
    method: OracleMethod,
    vi_residual: f64,
) -> Result<OracleSolution> {
    let mut state = JointState::zeros(spec.layout().clone());
    state.x_mut().copy_from_slice(x);
    let nu = consensus_nu(spec, x);
    for i in 0..spec.n_agents() {
        state.lambda_mut(i).copy_from_slice(lambda);
        state.nu_mut(i).copy_from_slice(&nu[i]);
    }
    let kkt = kkt_residual(spec, x, lambda)?;
    Ok(OracleSolution { state, method, kkt, vi_residual })
}
