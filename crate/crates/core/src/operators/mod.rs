//! Splitting operators 𝒜, ℬ, 𝒞, their resolvents and the fixed-point maps T_FBF and T_pFB.

mod blocks;
mod lipschitz;
#[cfg(test)]
mod tests;

use std::sync::Arc;

use log::warn;
use serde::Serialize;

pub use blocks::{apply_b, apply_bc, apply_c, bc_block, AgentView, SplitMode};
pub(crate) use blocks::{laplacian_lambda, laplacian_nu, PrimalOf};
pub use lipschitz::{
    estimate_lipschitz, estimate_lipschitz_with, LipschitzEstimate, LipschitzMethod, DENSE_LIMIT, POWER_SAFETY,
};

use crate::error::{GneError, Result};
use crate::game::{prox, GameSpec, JointState, Layout};
use crate::linalg;

/// Margin applied to every step-size upper bound.
pub const STEP_MARGIN: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Fbf,
    Pfb,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepSizes {
    pub mode: StepMode,
    pub rho: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    /// L_B the FBF steps were built against.
    pub lipschitz_b: Option<f64>,
    /// δ and η for pFB.
    pub delta: Option<f64>,
    pub eta: Option<f64>,
}

/// Per-agent pFB upper bounds (ρ̄, τ̄, σ̄) for a given δ, without the margin.
fn pfb_bounds(spec: &GameSpec, i: usize, delta: f64) -> (f64, f64, f64) {
    let a = spec.agent(i).g.linear_part();
    let deg = spec.graph().degree(i) as f64;
    (
        1.0 / (linalg::max_abs_col_sum(a) + delta),
        1.0 / (linalg::max_abs_row_sum(a) + 2.0 * deg + delta),
        1.0 / (2.0 * deg + delta),
    )
}

/// Smallest admissible δ: 1/min(η, 1/(2 max_i |N_i|)).
pub fn delta_lower_bound(spec: &GameSpec, eta: f64) -> f64 {
    let d = spec.graph().max_degree();
    let graph_term = if d == 0 { f64::INFINITY } else { 1.0 / (2.0 * d as f64) };
    1.0 / eta.min(graph_term)
}

fn require_affine(spec: &GameSpec) -> Result<()> {
    match spec.agents().iter().position(|a| !a.g.is_affine()) {
        Some(i) => Err(GneError::NotAffine { agent: i }),
        None => Ok(()),
    }
}

pub fn make_stepsizes(spec: &GameSpec, lip: &LipschitzEstimate, mode: StepMode, delta: Option<f64>) -> Result<StepSizes> {
    let n = spec.n_agents();
    match mode {
        StepMode::Fbf => {
            let s = if lip.l_b > 0.0 { STEP_MARGIN / lip.l_b } else { 1.0 };
            Ok(StepSizes {
                mode,
                rho: vec![s; n],
                tau: vec![s; n],
                sigma: vec![s; n],
                lipschitz_b: Some(lip.l_b),
                delta: None,
                eta: None,
            })
        }
        StepMode::Pfb => {
            require_affine(spec)?;
            let eta = spec.options().cocoercivity.ok_or(GneError::MissingCocoercivity)?;
            let lb = delta_lower_bound(spec, eta);
            let delta = match delta {
                Some(d) if d <= lb => {
                    return Err(GneError::StepSizeViolation(format!("delta {d} must exceed {lb}")));
                }
                Some(d) => d,
                None => 1.01 * lb,
            };
            let mut steps = StepSizes {
                mode,
                rho: Vec::with_capacity(n),
                tau: Vec::with_capacity(n),
                sigma: Vec::with_capacity(n),
                lipschitz_b: None,
                delta: Some(delta),
                eta: Some(eta),
            };
            for i in 0..n {
                let (r, t, s) = pfb_bounds(spec, i, delta);
                steps.rho.push(STEP_MARGIN * r);
                steps.tau.push(STEP_MARGIN * t);
                steps.sigma.push(STEP_MARGIN * s);
            }
            Ok(steps)
        }
    }
}

impl StepSizes {
    /// Uniform user override ρ = τ = σ = `s`, checked against the mode's bounds.
    pub fn uniform(spec: &GameSpec, lip: &LipschitzEstimate, mode: StepMode, s: f64, delta: Option<f64>) -> Result<Self> {
        let mut steps = make_stepsizes(spec, lip, mode, delta)?;
        for v in [&mut steps.rho, &mut steps.tau, &mut steps.sigma] {
            v.iter_mut().for_each(|t| *t = s);
        }
        steps.validate(spec)?;
        Ok(steps)
    }

    pub fn validate(&self, spec: &GameSpec) -> Result<()> {
        let n = spec.n_agents();
        if self.rho.len() != n || self.tau.len() != n || self.sigma.len() != n {
            return Err(GneError::DimensionMismatch { expected: n, got: self.rho.len() });
        }
        let all = self.rho.iter().chain(&self.tau).chain(&self.sigma);
        if all.clone().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(GneError::StepSizeViolation("step sizes must be positive and finite".into()));
        }
        match self.mode {
            StepMode::Fbf => {
                if let Some(l) = self.lipschitz_b {
                    let top = all.fold(0.0, |a: f64, &b| a.max(b));
                    if l > 0.0 && top > (1.0 + 1e-12) / l {
                        return Err(GneError::StepSizeViolation(format!(
                            "max step {top} exceeds 1/L_B = {}",
                            1.0 / l
                        )));
                    }
                }
            }
            StepMode::Pfb => {
                let delta = self.delta.ok_or_else(|| GneError::StepSizeViolation("pFB steps need delta".into()))?;
                for i in 0..n {
                    let (r, t, s) = pfb_bounds(spec, i, delta);
                    let tol = 1.0 + 1e-12;
                    if self.rho[i] > r * tol || self.tau[i] > t * tol || self.sigma[i] > s * tol {
                        return Err(GneError::StepSizeViolation(format!(
                            "agent {}: steps ({}, {}, {}) exceed bounds ({r}, {t}, {s})",
                            i + 1,
                            self.rho[i],
                            self.tau[i],
                            self.sigma[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Diagonal of Ψ⁻¹ expanded to the full state.
    pub fn inv_psi(&self, layout: &Layout) -> Vec<f64> {
        let mut d = vec![0.0; layout.len()];
        for i in 0..layout.n_agents() {
            d[layout.x_range(i)].iter_mut().for_each(|v| *v = self.rho[i]);
            d[layout.lambda_range(i)].iter_mut().for_each(|v| *v = self.tau[i]);
            d[layout.nu_range(i)].iter_mut().for_each(|v| *v = self.sigma[i]);
        }
        d
    }

    /// Diagonal of Ψ expanded to the full state.
    pub fn psi(&self, layout: &Layout) -> Vec<f64> {
        self.inv_psi(layout).into_iter().map(|v| 1.0 / v).collect()
    }

    pub fn min_psi(&self) -> f64 {
        let top = self.rho.iter().chain(&self.tau).chain(&self.sigma).fold(0.0, |a: f64, &b| a.max(b));
        1.0 / top
    }
}

/// ‖v‖²_Ψ
pub fn psi_norm_sq(steps: &StepSizes, v: &JointState) -> f64 {
    let layout = v.layout();
    let mut s = 0.0;
    for i in 0..layout.n_agents() {
        s += linalg::dot(v.x_block(i), v.x_block(i)) / steps.rho[i];
        s += linalg::dot(v.lambda(i), v.lambda(i)) / steps.tau[i];
        s += linalg::dot(v.nu(i), v.nu(i)) / steps.sigma[i];
    }
    s
}

/// ‖v‖²_Φ for the pFB preconditioner.
pub fn phi_norm_sq(spec: &GameSpec, steps: &StepSizes, v: &JointState) -> f64 {
    let m = spec.m();
    let mut s = psi_norm_sq(steps, v);
    let mut buf = vec![0.0; m];
    for i in 0..spec.n_agents() {
        buf.iter_mut().for_each(|t| *t = 0.0);
        linalg::csr_mul_add(spec.agent(i).g.linear_part(), v.x_block(i), &mut buf);
        laplacian_nu(spec, i, v, &mut buf);
        s -= 2.0 * linalg::dot(v.lambda(i), &buf);
    }
    s
}

/// J_𝒜: prox of ℓ_i + ι_{X_i} on x, positive part on λ, identity on ν.
pub fn resolvent_a(spec: &GameSpec, steps: &StepSizes, v: &JointState) -> Result<JointState> {
    blocks::check_state(spec, v)?;
    let mut out = v.clone();
    for i in 0..spec.n_agents() {
        let a = spec.agent(i);
        prox(i, &a.set, &a.ell, v.x_block(i), steps.rho[i], out.x_block_mut(i))?;
        out.lambda_mut(i).iter_mut().for_each(|t| *t = t.max(0.0));
    }
    Ok(out)
}

fn check_mode(steps: &StepSizes, mode: StepMode) -> Result<()> {
    if steps.mode != mode {
        return Err(GneError::StepSizeViolation(format!("expected {mode:?} step sizes, got {:?}", steps.mode)));
    }
    Ok(())
}

/// One forward-backward-forward step. Returns (ω_out, ω̃).
pub fn t_fbf(spec: &GameSpec, steps: &StepSizes, w: &JointState) -> Result<(JointState, JointState)> {
    check_mode(steps, StepMode::Fbf)?;
    steps.validate(spec)?;
    let d = steps.inv_psi(spec.layout());
    let bc = apply_bc(spec, w)?;
    let mut v = w.clone();
    for ((t, b), s) in v.as_mut_slice().iter_mut().zip(bc.iter()).zip(&d) {
        *t -= s * b;
    }
    let tilde = resolvent_a(spec, steps, &v)?;
    let bc_tilde = apply_bc(spec, &tilde)?;
    let mut out = tilde.clone();
    for (k, t) in out.as_mut_slice().iter_mut().enumerate() {
        *t -= d[k] * (bc_tilde[k] - bc[k]);
    }
    Ok((out, tilde))
}

/// One preconditioned forward-backward step, agent by agent in the order x, ν, λ.
pub fn t_pfb(spec: &GameSpec, steps: &StepSizes, w: &JointState) -> Result<JointState> {
    check_mode(steps, StepMode::Pfb)?;
    require_affine(spec)?;
    blocks::check_state(spec, w)?;
    steps.validate(spec)?;
    let m = spec.m();
    let mut out = w.clone();
    let mut buf = Vec::new();
    for i in 0..spec.n_agents() {
        let a = spec.agent(i);
        buf.clear();
        buf.resize(a.dim, 0.0);
        spec.pseudogradient_block(i, &PrimalOf(w), &mut buf);
        linalg::csr_tmul_add(a.g.linear_part(), w.lambda(i), &mut buf);
        let v: Vec<f64> = w.x_block(i).iter().zip(&buf).map(|(x, g)| x - steps.rho[i] * g).collect();
        prox(i, &a.set, &a.ell, &v, steps.rho[i], out.x_block_mut(i))?;

        let mut ll = vec![0.0; m];
        laplacian_lambda(spec, i, w, &mut ll);
        for (t, l) in out.nu_mut(i).iter_mut().zip(&ll) {
            *t -= steps.sigma[i] * l;
        }
    }
    // λ needs every agent's ν⁺
    for i in 0..spec.n_agents() {
        let a = spec.agent(i);
        let refl: Vec<f64> = out.x_block(i).iter().zip(w.x_block(i)).map(|(p, x)| 2.0 * p - x).collect();
        let mut r = vec![0.0; m];
        linalg::csr_mul_add(a.g.linear_part(), &refl, &mut r);
        let mut ll = vec![0.0; m];
        laplacian_lambda(spec, i, w, &mut ll);
        let mut lnu_new = vec![0.0; m];
        laplacian_nu(spec, i, &out, &mut lnu_new);
        let mut lnu_old = vec![0.0; m];
        laplacian_nu(spec, i, w, &mut lnu_old);
        let b = a.g.offset();
        for k in 0..m {
            let step = r[k] - b[k] + 2.0 * lnu_new[k] - lnu_old[k] - ll[k];
            out.lambda_mut(i)[k] = (w.lambda(i)[k] + steps.tau[i] * step).max(0.0);
        }
    }
    Ok(out)
}

/// A quasi-nonexpansive map wrapped by the outer HSDM loop.
pub trait FixedPointOperator: Send + Sync {
    fn spec(&self) -> &GameSpec;
    fn steps(&self) -> &StepSizes;
    fn name(&self) -> &'static str;
    fn apply(&self, w: &JointState) -> Result<JointState>;
    /// Squared norm the operator is quasi-nonexpansive in.
    fn norm_sq(&self, v: &JointState) -> f64;
    fn norm(&self, v: &JointState) -> f64 {
        self.norm_sq(v).max(0.0).sqrt()
    }
    /// Hook called with each new iterate. Returns true if internal constants changed.
    fn refresh(&mut self, _w: &JointState) -> Result<bool> {
        Ok(false)
    }
}

pub struct FbfOperator {
    spec: Arc<GameSpec>,
    lip: LipschitzEstimate,
    steps: StepSizes,
    fixed_steps: bool,
}

impl FbfOperator {
    pub fn new(spec: Arc<GameSpec>) -> Result<Self> {
        let lip = estimate_lipschitz(&spec)?;
        let steps = make_stepsizes(&spec, &lip, StepMode::Fbf, None)?;
        Ok(FbfOperator { spec, lip, steps, fixed_steps: false })
    }

    pub fn with_steps(spec: Arc<GameSpec>, lip: LipschitzEstimate, steps: StepSizes) -> Result<Self> {
        check_mode(&steps, StepMode::Fbf)?;
        steps.validate(&spec)?;
        Ok(FbfOperator { spec, lip, steps, fixed_steps: true })
    }

    pub fn lipschitz(&self) -> &LipschitzEstimate {
        &self.lip
    }

    pub fn apply_with_tilde(&self, w: &JointState) -> Result<(JointState, JointState)> {
        t_fbf(&self.spec, &self.steps, w)
    }
}

impl FixedPointOperator for FbfOperator {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }
    fn steps(&self) -> &StepSizes {
        &self.steps
    }
    fn name(&self) -> &'static str {
        "fbf"
    }
    fn apply(&self, w: &JointState) -> Result<JointState> {
        Ok(t_fbf(&self.spec, &self.steps, w)?.0)
    }
    fn norm_sq(&self, v: &JointState) -> f64 {
        psi_norm_sq(&self.steps, v)
    }

    /// Grows the dual bound when an iterate leaves it and shrinks the steps to match.
    fn refresh(&mut self, w: &JointState) -> Result<bool> {
        if self.lip.method != LipschitzMethod::Bound {
            return Ok(false);
        }
        let peak = (0..self.spec.n_agents()).map(|i| linalg::norm(w.lambda(i))).fold(0.0, f64::max);
        let bound = self.lip.dual_bounds.iter().cloned().fold(f64::INFINITY, f64::min);
        if peak <= bound {
            return Ok(false);
        }
        let lip = estimate_lipschitz_with(&self.spec, Some(2.0 * peak))?;
        warn!(
            "dual iterate norm {peak:.3e} exceeded bound {bound:.3e}; L_B {:.3e} -> {:.3e}",
            self.lip.l_b, lip.l_b
        );
        if !self.fixed_steps || lip.l_b * self.steps.rho[0] > 1.0 {
            self.steps = make_stepsizes(&self.spec, &lip, StepMode::Fbf, None)?;
        }
        self.lip = lip;
        Ok(true)
    }
}

pub struct PfbOperator {
    spec: Arc<GameSpec>,
    steps: StepSizes,
}

impl PfbOperator {
    pub fn new(spec: Arc<GameSpec>, delta: Option<f64>) -> Result<Self> {
        require_affine(&spec)?;
        // L_B is not needed for pFB; only the graph, A_i and η enter the steps
        let lip = LipschitzEstimate::declared(0.0, 0.0);
        let steps = make_stepsizes(&spec, &lip, StepMode::Pfb, delta)?;
        Ok(PfbOperator { spec, steps })
    }

    pub fn with_steps(spec: Arc<GameSpec>, steps: StepSizes) -> Result<Self> {
        require_affine(&spec)?;
        check_mode(&steps, StepMode::Pfb)?;
        steps.validate(&spec)?;
        Ok(PfbOperator { spec, steps })
    }
}

impl FixedPointOperator for PfbOperator {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }
    fn steps(&self) -> &StepSizes {
        &self.steps
    }
    fn name(&self) -> &'static str {
        "pfb"
    }
    fn apply(&self, w: &JointState) -> Result<JointState> {
        t_pfb(&self.spec, &self.steps, w)
    }
    fn norm_sq(&self, v: &JointState) -> f64 {
        phi_norm_sq(&self.spec, &self.steps, v)
    }
}
