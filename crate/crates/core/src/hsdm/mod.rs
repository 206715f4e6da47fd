//! Hybrid steepest descent over the fixed-point set of a splitting operator.

mod shrinkage;
mod trace;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use shrinkage::{cloud_distance, shrinkage_probe, ShrinkageRow};
pub use trace::{RunRecord, RunTrace, StopReason};

use crate::error::{GneError, Result};
use crate::game::{kkt_residual, GameSpec, JointState, SelectionFunction};
use crate::linalg;
use crate::operators::FixedPointOperator;

/// Iterates beyond this norm are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BetaSchedule {
    /// β_k = β₀ / k^p
    Power { beta0: f64, p: f64 },
    Constant { beta: f64 },
}

impl BetaSchedule {
    /// Requires β₀ > 0 and p ∈ (1/2, 1], so that Σβ_k diverges and Σβ_k² converges.
    pub fn power(beta0: f64, p: f64) -> Result<Self> {
        if !(beta0.is_finite() && beta0 > 0.0) {
            return Err(GneError::InvalidSchedule(format!("beta0 must be positive, got {beta0}")));
        }
        if !(p > 0.5 && p <= 1.0) {
            return Err(GneError::InvalidSchedule(format!("p must lie in (0.5, 1], got {p}")));
        }
        Ok(BetaSchedule::Power { beta0, p })
    }

    /// Constant step; β = 0 gives plain Banach–Picard iteration.
    pub fn constant(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(GneError::InvalidSchedule(format!("beta must be non-negative, got {beta}")));
        }
        Ok(BetaSchedule::Constant { beta })
    }

    /// β₀ = 1/L_φ, p = 0.51.
    pub fn default_for(phi: &SelectionFunction) -> Self {
        BetaSchedule::Power { beta0: 1.0 / phi.lipschitz(), p: 0.51 }
    }

    /// Step for iteration k ≥ 1.
    pub fn beta(&self, k: usize) -> f64 {
        match *self {
            BetaSchedule::Power { beta0, p } => beta0 / (k as f64).powf(p),
            BetaSchedule::Constant { beta } => beta,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StopRule {
    pub max_iter: usize,
    pub residual_tol: f64,
    /// Stop once |φ_{k−window} − φ_k| falls below this and a residual is below `residual_tol`:
    /// either ‖T(ω)−ω‖ of the iterate or, checked every `window` iterations, ‖T(z)−z‖ of the
    /// reported point z = T(ω). The latter matters under vanishing β, where ‖T(ω)−ω‖ ≈ β_k‖∇φ‖.
    pub phi_stall_tol: f64,
    pub window: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iter: 200_000,
            residual_tol: 1e-6,
            phi_stall_tol: 1e-10,
            window: 100,
        }
    }
}

impl StopRule {
    /// Stopping test after the latest trace record, with z = T(ω) the reported point.
    pub fn converged(&self, op: &dyn FixedPointOperator, trace: &RunTrace, z: &JointState) -> Result<bool> {
        let Some(last) = trace.last() else { return Ok(false) };
        if !trace.phi_stalled(self.window, self.phi_stall_tol) {
            return Ok(false);
        }
        Ok(last.residual <= self.residual_tol
            || (last.k % self.window == 0 && fixed_point_residual(op, z)? <= self.residual_tol))
    }

    pub fn iterations(max_iter: usize) -> Self {
        StopRule {
            max_iter,
            residual_tol: 0.0,
            phi_stall_tol: -1.0,
            window: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HsdmOutcome {
    /// T(ω) at the last iteration; the reported solution.
    pub state: JointState,
    /// ω^{(k+1)} after the final gradient step.
    pub iterate: JointState,
    /// ‖T(z) − z‖ in the operator norm at the reported point z.
    pub solution_residual: f64,
    pub trace: RunTrace,
}

fn coupling_violation(spec: &GameSpec, x: &[f64]) -> f64 {
    spec.coupling(x).iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt()
}

/// ω^{(k+1)} = T(ω^{(k)}) − β_k ∇φ(T(ω^{(k)})).
pub fn hsdm_solve(
    op: &mut dyn FixedPointOperator,
    phi: &SelectionFunction,
    w0: &JointState,
    schedule: BetaSchedule,
    stop: StopRule,
    timing: bool,
) -> Result<HsdmOutcome> {
    if !w0.is_finite() {
        return Err(GneError::Diverged { k: 0, norm: f64::NAN });
    }
    let start = Instant::now();
    let mut trace = RunTrace::default();
    let mut w = w0.clone();
    let mut grad = vec![0.0; w.layout().len()];
    let mut last_t = w.clone();
    for k in 1..=stop.max_iter {
        let t = op.apply(&w)?;
        let d = JointState::from_dvector(w.layout().clone(), t.vector() - w.vector())?;
        let residual = op.norm(&d);
        let beta = schedule.beta(k);
        let spec = op.spec();
        trace.push(RunRecord {
            k,
            residual,
            phi: phi.value(t.as_slice()),
            coupling_viol: coupling_violation(spec, w.x()),
            dual_disagreement: w.dual_disagreement(),
            beta,
            wall_ms: if timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        });

        let mut next = t.clone();
        if beta != 0.0 {
            phi.gradient(t.as_slice(), &mut grad);
            for (v, g) in next.as_mut_slice().iter_mut().zip(&grad) {
                *v -= beta * g;
            }
        }
        let norm = next.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(GneError::Diverged { k, norm });
        }
        op.refresh(&next)?;
        last_t = t;
        w = next;

        if stop.converged(op, &trace, &last_t)? {
            trace.stop = StopReason::Converged;
            return HsdmOutcome::finish(op, last_t, w, trace);
        }
    }
    trace.stop = StopReason::MaxIter;
    HsdmOutcome::finish(op, last_t, w, trace)
}

/// ‖T(z) − z‖ in the operator norm.
pub fn fixed_point_residual(op: &dyn FixedPointOperator, z: &JointState) -> Result<f64> {
    let tz = op.apply(z)?;
    Ok(op.norm(&JointState::from_dvector(z.layout().clone(), tz.vector() - z.vector())?))
}

impl HsdmOutcome {
    /// Bundles a finished run with the residual of its reported point.
    pub fn finish(op: &dyn FixedPointOperator, state: JointState, iterate: JointState, trace: RunTrace) -> Result<Self> {
        let solution_residual = fixed_point_residual(op, &state)?;
        Ok(HsdmOutcome { state, iterate, trace, solution_residual })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionCertificate {
    /// ‖x_final − x_oracle‖
    pub x_distance: f64,
    /// ‖ω_final − ω_oracle‖ over the whole state.
    pub state_distance: f64,
    /// φ(ω_final) − φ(ω_oracle)
    pub phi_gap: f64,
    pub kkt: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compare a solver output against an oracle solution. The dual part of ω is
/// generally not unique, so the pass decision uses the primal distance.
pub fn certify_selection(
    spec: &GameSpec,
    phi: &SelectionFunction,
    w_final: &JointState,
    oracle: &JointState,
    tol: f64,
) -> Result<SelectionCertificate> {
    let x_distance = linalg::dist(w_final.x(), oracle.x());
    let state_distance = (w_final.vector() - oracle.vector()).norm();
    let phi_gap = phi.value(w_final.as_slice()) - phi.value(oracle.as_slice());
    let lam: Vec<f64> = w_final.lambda_mean().into_iter().map(|v| v.max(0.0)).collect();
    let kkt = kkt_residual(spec, w_final.x(), &lam)?;
    let pass = x_distance <= tol && phi_gap.abs() <= tol && kkt <= tol;
    Ok(SelectionCertificate { x_distance, state_distance, phi_gap, kkt, tol, pass })
}
