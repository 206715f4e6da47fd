//! Operators ℬ and 𝒞, evaluated agent by agent from neighbour blocks.

use nalgebra::DVector;

use crate::error::{GneError, Result};
use crate::game::{BlockSource, GameSpec, JointState};

/// Read access to other agents' (x, λ, ν) blocks.
pub trait AgentView {
    fn x(&self, j: usize) -> &[f64];
    fn lambda(&self, j: usize) -> &[f64];
    fn nu(&self, j: usize) -> &[f64];
}

impl AgentView for JointState {
    fn x(&self, j: usize) -> &[f64] {
        self.x_block(j)
    }
    fn lambda(&self, j: usize) -> &[f64] {
        JointState::lambda(self, j)
    }
    fn nu(&self, j: usize) -> &[f64] {
        JointState::nu(self, j)
    }
}

pub(crate) struct PrimalOf<'a>(pub &'a dyn AgentView);

impl BlockSource for PrimalOf<'_> {
    fn block(&self, j: usize) -> &[f64] {
        self.0.x(j)
    }
}

/// Whether the constant b of affine constraints sits in ℬ (pFB split) or in 𝒞.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    General,
    Affine,
}

pub(crate) fn check_state(spec: &GameSpec, w: &JointState) -> Result<()> {
    if w.layout().as_ref() != spec.layout().as_ref() {
        return Err(GneError::DimensionMismatch {
            expected: spec.layout().len(),
            got: w.layout().len(),
        });
    }
    Ok(())
}

/// (L ⊗ I_m) applied to the λ or ν part, agent i's block.
pub(crate) fn laplacian_lambda(spec: &GameSpec, i: usize, view: &dyn AgentView, out: &mut [f64]) {
    spec.graph().laplacian_block(i, |j| view.lambda(j), out);
}

pub(crate) fn laplacian_nu(spec: &GameSpec, i: usize, view: &dyn AgentView, out: &mut [f64]) {
    spec.graph().laplacian_block(i, |j| view.nu(j), out);
}

/// Agent i's block of (ℬ + 𝒞)(ω), written as x_i ‖ λ_i ‖ ν_i.
pub fn bc_block(spec: &GameSpec, i: usize, view: &dyn AgentView, out: &mut [f64]) {
    let a = spec.agent(i);
    let (ni, m) = (a.dim, spec.m());
    let (ox, rest) = out.split_at_mut(ni);
    let (ol, on) = rest.split_at_mut(m);
    let xi = view.x(i);
    spec.pseudogradient_block(i, &PrimalOf(view), ox);
    a.g.jac_t_mul_add(xi, view.lambda(i), ox);

    on.iter_mut().for_each(|v| *v = 0.0);
    laplacian_lambda(spec, i, view, on);

    let mut gi = vec![0.0; m];
    a.g.eval(xi, &mut gi);
    let mut lnu = vec![0.0; m];
    laplacian_nu(spec, i, view, &mut lnu);
    for k in 0..m {
        ol[k] = on[k] - gi[k] - lnu[k];
    }
}

fn assemble(spec: &GameSpec, f: impl Fn(usize, &mut [f64])) -> DVector<f64> {
    let layout = spec.layout();
    let mut out = DVector::zeros(layout.len());
    let m = layout.m();
    let mut buf = Vec::new();
    for i in 0..spec.n_agents() {
        let ni = layout.dim(i);
        buf.clear();
        buf.resize(ni + 2 * m, 0.0);
        f(i, &mut buf);
        let o = out.as_mut_slice();
        o[layout.x_range(i)].copy_from_slice(&buf[..ni]);
        o[layout.lambda_range(i)].copy_from_slice(&buf[ni..ni + m]);
        o[layout.nu_range(i)].copy_from_slice(&buf[ni + m..]);
    }
    out
}

/// (ℬ + 𝒞)(ω)
pub fn apply_bc(spec: &GameSpec, w: &JointState) -> Result<DVector<f64>> {
    check_state(spec, w)?;
    Ok(assemble(spec, |i, buf| bc_block(spec, i, w, buf)))
}

/// ℬ(ω) = col(F(x), (L⊗I)λ [+ b], 0)
pub fn apply_b(spec: &GameSpec, w: &JointState, mode: SplitMode) -> Result<DVector<f64>> {
    check_state(spec, w)?;
    if mode == SplitMode::Affine {
        if let Some(i) = spec.agents().iter().position(|a| !a.g.is_affine()) {
            return Err(GneError::NotAffine { agent: i });
        }
    }
    Ok(assemble(spec, |i, buf| {
        let a = spec.agent(i);
        let (ni, m) = (a.dim, spec.m());
        spec.pseudogradient_block(i, &PrimalOf(w), &mut buf[..ni]);
        laplacian_lambda(spec, i, w, &mut buf[ni..ni + m]);
        if mode == SplitMode::Affine {
            for (o, b) in buf[ni..ni + m].iter_mut().zip(a.g.offset()) {
                *o += b;
            }
        }
    }))
}

/// 𝒞(ω) = col(∇g_i(x_i)ᵀλ_i, −g_i(x_i) − (L⊗I)ν, (L⊗I)λ); the affine mode drops b from the dual block.
pub fn apply_c(spec: &GameSpec, w: &JointState, mode: SplitMode) -> Result<DVector<f64>> {
    check_state(spec, w)?;
    if mode == SplitMode::Affine {
        if let Some(i) = spec.agents().iter().position(|a| !a.g.is_affine()) {
            return Err(GneError::NotAffine { agent: i });
        }
    }
    Ok(assemble(spec, |i, buf| {
        let a = spec.agent(i);
        let (ni, m) = (a.dim, spec.m());
        let xi = w.x_block(i);
        a.g.jac_t_mul_add(xi, w.lambda(i), &mut buf[..ni]);
        let mut gi = vec![0.0; m];
        a.g.eval(xi, &mut gi);
        if mode == SplitMode::Affine {
            for (g, b) in gi.iter_mut().zip(a.g.offset()) {
                *g += b;
            }
        }
        let mut lnu = vec![0.0; m];
        laplacian_nu(spec, i, w, &mut lnu);
        for k in 0..m {
            buf[ni + k] = -gi[k] - lnu[k];
        }
        laplacian_lambda(spec, i, w, &mut buf[ni + m..]);
    }))
}
