//! Restarted HSDM for time-varying games: constant β, K inner iterations per step,
//! warm-started from the previous step's output.

mod bounds;
mod scenario;

use std::io::Write;
use std::sync::Arc;

use log::warn;
use serde::Serialize;

pub use bounds::{alpha, beta_for_alpha, beta_upper, gamma, gamma_default_xi, tau_beta, tracking_bound};
pub use scenario::{load_scenario, merge_patch, parse_scenario};

use crate::error::{GneError, Result};
use crate::game::{CostForm, GameSpec, JointState, SelectionFunction};
use crate::linalg;
use crate::operators::{
    estimate_lipschitz, make_stepsizes, FbfOperator, FixedPointOperator, PfbOperator, StepMode,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SequenceMode {
    /// Instance t is member `index[t]` of a fixed finite family; uniform quasi-shrinking
    /// holds because there are finitely many operators.
    FiniteFamily { index: Vec<usize> },
    /// Any per-step games. Uniform quasi-shrinking is not checked.
    Arbitrary,
}

#[derive(Clone, Debug)]
pub struct GameSequence {
    instances: Vec<Arc<GameSpec>>,
    mode: SequenceMode,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
}

impl GameSequence {
    /// Every instance needs a selection function with σ > 0 and the same state layout.
    pub fn new(
        instances: Vec<Arc<GameSpec>>,
        mode: SequenceMode,
        delta1: Option<f64>,
        delta2: Option<f64>,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(GneError::validation("game sequence", "no instances"));
        }
        let layout = instances[0].layout().clone();
        for (t, spec) in instances.iter().enumerate() {
            let fail = |e: GneError| GneError::InstanceValidation { t: t + 1, source: Box::new(e) };
            if spec.layout() != &layout {
                return Err(fail(GneError::validation("game sequence", "state layout changes over time")));
            }
            match spec.selection() {
                None => return Err(fail(GneError::validation("selection", "instance has no selection function"))),
                Some(phi) if !(phi.sigma() > 0.0) => {
                    return Err(fail(GneError::validation(
                        "strongly convex selection",
                        format!("sigma = {} must be positive", phi.sigma()),
                    )))
                }
                Some(_) => {}
            }
        }
        if let SequenceMode::FiniteFamily { index } = &mode {
            if index.len() != instances.len() {
                return Err(GneError::validation("game sequence", "family index length differs from T"));
            }
        }
        Ok(GameSequence { instances, mode, delta1, delta2 })
    }

    pub fn from_specs(specs: Vec<GameSpec>) -> Result<Self> {
        Self::new(specs.into_iter().map(Arc::new).collect(), SequenceMode::Arbitrary, None, None)
    }

    /// The same game repeated `t_end` times (a one-member family).
    pub fn repeated(spec: GameSpec, t_end: usize) -> Result<Self> {
        let spec = Arc::new(spec);
        Self::new(
            vec![spec; t_end],
            SequenceMode::FiniteFamily { index: vec![0; t_end] },
            Some(0.0),
            Some(0.0),
        )
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, t: usize) -> &Arc<GameSpec> {
        &self.instances[t]
    }

    pub fn instances(&self) -> &[Arc<GameSpec>] {
        &self.instances
    }

    pub fn selection(&self, t: usize) -> &SelectionFunction {
        self.instances[t].selection().expect("checked in new")
    }

    pub fn mode(&self) -> &SequenceMode {
        &self.mode
    }

    pub fn assumption_checked(&self) -> bool {
        matches!(self.mode, SequenceMode::FiniteFamily { .. })
    }

    /// min_t σ_t and max_t L_φ,t
    pub fn selection_constants(&self) -> (f64, f64) {
        let sigma = (0..self.len()).map(|t| self.selection(t).sigma()).fold(f64::INFINITY, f64::min);
        let l_phi = (0..self.len()).map(|t| self.selection(t).lipschitz()).fold(0.0, f64::max);
        (sigma, l_phi)
    }
}

/// Data that fixes L_B and the step sizes: graph, pseudogradient blocks, constraint Jacobians.
fn structure_key(spec: &GameSpec) -> String {
    let mut key = format!("{:?}|{:?}|", spec.graph().edges(), spec.options());
    for a in spec.agents() {
        match &a.cost {
            CostForm::Quadratic(q) => key.push_str(&format!("{:?}", q.blocks)),
            CostForm::Blackbox(_) => key.push_str("blackbox"),
        }
        key.push_str(&format!("{:?}", a.g.linear_part()));
        if let crate::game::ConstraintForm::Quad { d, .. } = &a.g {
            key.push_str(&format!("{d:?}"));
        }
    }
    key
}

#[derive(Clone, Debug)]
pub struct TrackerOptions {
    pub beta: f64,
    pub k: usize,
    pub algo: StepMode,
    /// pFB δ; None picks the default
    pub delta: Option<f64>,
    /// ξ of the γ formula; None uses ξ = γσ/(12U)
    pub xi: Option<f64>,
}

impl TrackerOptions {
    pub fn new(beta: f64, k: usize) -> Self {
        TrackerOptions { beta, k, algo: StepMode::Fbf, delta: None, xi: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackingStep {
    pub t: usize,
    /// ‖ω_t − ω⋆_t‖, the warm start against this step's optimum
    pub err_vs_oracle: Option<f64>,
    /// ‖ω_{t+1} − ω⋆_t‖ after the K inner iterations
    pub err_after: Option<f64>,
    /// ‖T_t(y) − y‖ at the last inner iteration, operator norm
    pub residual: f64,
    /// φ_t(ω_{t+1})
    pub phi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackingReport {
    pub beta: f64,
    pub k: usize,
    pub algo: &'static str,
    pub sigma: f64,
    pub l_phi: f64,
    pub tau: f64,
    pub alpha: f64,
    /// max ‖∇φ_t(T_t(y))‖ over the realised trajectory
    pub u: f64,
    pub xi: Option<f64>,
    pub gamma: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    /// max of ‖ω_t − ω⋆_t‖² over the last quarter of the steps
    pub limsup_sq_err: Option<f64>,
    pub bound: Option<f64>,
    pub assumption_checked: bool,
    pub warnings: Vec<String>,
    pub steps: Vec<TrackingStep>,
}

pub const TRACKING_HEADER: &str = "t,err_vs_oracle,residual,phi,bound";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

impl TrackingReport {
    /// Mean over t of the last inner residual.
    pub fn mean_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).sum::<f64>() / self.steps.len().max(1) as f64
    }

    /// Mean over t of φ_t(ω_{t+1}).
    pub fn mean_phi(&self) -> f64 {
        self.steps.iter().map(|s| s.phi).sum::<f64>() / self.steps.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACKING_HEADER}")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{}",
                s.t,
                opt(s.err_vs_oracle),
                s.residual,
                s.phi,
                opt(self.bound)
            )?;
        }
        Ok(())
    }
}

fn build_operator(
    spec: &Arc<GameSpec>,
    opts: &TrackerOptions,
    cache: &mut Option<(String, crate::operators::LipschitzEstimate, crate::operators::StepSizes)>,
) -> Result<Box<dyn FixedPointOperator>> {
    match opts.algo {
        StepMode::Pfb => Ok(Box::new(PfbOperator::new(spec.clone(), opts.delta)?)),
        StepMode::Fbf => {
            let key = structure_key(spec);
            if let Some((k, lip, steps)) = cache {
                if *k == key {
                    return Ok(Box::new(FbfOperator::with_steps(spec.clone(), lip.clone(), steps.clone())?));
                }
            }
            let lip = estimate_lipschitz(spec)?;
            let steps = make_stepsizes(spec, &lip, StepMode::Fbf, None)?;
            *cache = Some((key, lip.clone(), steps.clone()));
            Ok(Box::new(FbfOperator::with_steps(spec.clone(), lip, steps)?))
        }
    }
}

/// Run the restarted scheme. `oracles[t]`, when given, is ω⋆_t and enables the error
/// columns, the empirical limsup and the measured δ₁.
/// Returns ω_1, …, ω_{T+1}.
pub fn restarted_hsdm(
    seq: &GameSequence,
    opts: &TrackerOptions,
    w1: &JointState,
    oracles: Option<&[JointState]>,
) -> Result<(Vec<JointState>, TrackingReport)> {
    if opts.k == 0 {
        return Err(GneError::InvalidSchedule("K must be at least 1".into()));
    }
    let (sigma, l_phi) = seq.selection_constants();
    let tau = tau_beta(opts.beta, sigma, l_phi)?;
    let alpha = alpha(tau, opts.k);
    if let Some(o) = oracles {
        if o.len() != seq.len() {
            return Err(GneError::DimensionMismatch { expected: seq.len(), got: o.len() });
        }
    }
    if w1.layout() != seq.instance(0).layout() {
        return Err(GneError::DimensionMismatch { expected: seq.instance(0).layout().len(), got: w1.layout().len() });
    }

    let mut warnings = Vec::new();
    if !seq.assumption_checked() {
        warnings.push("uniform quasi-shrinking assumption unchecked for arbitrary per-step games".to_string());
    }
    let mut cache = None;
    let mut states = Vec::with_capacity(seq.len() + 1);
    let mut steps = Vec::with_capacity(seq.len());
    let mut w = w1.clone();
    let mut grad = vec![0.0; w.layout().len()];
    let mut u: f64 = 0.0;
    states.push(w.clone());
    for t in 0..seq.len() {
        let spec = seq.instance(t);
        let phi = seq.selection(t);
        let mut op = build_operator(spec, opts, &mut cache)?;
        let star = oracles.map(|o| &o[t]);
        let err_pre = star.map(|s| linalg::dist(w.as_slice(), s.as_slice()));
        let mut residual = 0.0;
        for _ in 0..opts.k {
            let ty = op.apply(&w)?;
            let d = JointState::from_dvector(w.layout().clone(), ty.vector() - w.vector())?;
            residual = op.norm(&d);
            phi.gradient(ty.as_slice(), &mut grad);
            u = u.max(linalg::norm(&grad));
            let mut next = ty;
            for (v, g) in next.as_mut_slice().iter_mut().zip(&grad) {
                *v -= opts.beta * g;
            }
            let norm = next.norm();
            if !norm.is_finite() || norm > crate::hsdm::DIVERGENCE_NORM {
                return Err(GneError::Diverged { k: t + 1, norm });
            }
            op.refresh(&next)?;
            w = next;
        }
        let err_after = star.map(|s| linalg::dist(w.as_slice(), s.as_slice()));
        steps.push(TrackingStep {
            t: t + 1,
            err_vs_oracle: err_pre,
            err_after,
            residual,
            phi: phi.value(w.as_slice()),
        });
        states.push(w.clone());
    }

    let delta1 = seq.delta1.or_else(|| {
        oracles.map(|o| {
            o.windows(2).map(|p| linalg::dist(p[0].as_slice(), p[1].as_slice())).fold(0.0, f64::max)
        })
    });
    let limsup_sq_err = oracles.map(|_| {
        let from = steps.len() - steps.len().div_ceil(4);
        steps[from..].iter().filter_map(|s| s.err_vs_oracle).map(|e| e * e).fold(0.0, f64::max)
    });
    let gamma = match opts.xi {
        Some(xi) => Some(gamma(opts.beta, tau, u, xi)),
        None => gamma_default_xi(opts.beta, tau, sigma, u),
    };
    if gamma.is_none() {
        warnings.push("gamma unavailable: tau(beta) <= beta*sigma/2 with the default xi".to_string());
    }
    let bound = match (gamma, delta1) {
        (Some(g), Some(d1)) => match tracking_bound(g, d1, alpha) {
            Ok(b) => Some(b),
            Err(e) => {
                warnings.push(format!("{e}; bound omitted"));
                None
            }
        },
        _ => None,
    };
    for w in &warnings {
        warn!("{w}");
    }
    let report = TrackingReport {
        beta: opts.beta,
        k: opts.k,
        algo: match opts.algo {
            StepMode::Fbf => "fbf",
            StepMode::Pfb => "pfb",
        },
        sigma,
        l_phi,
        tau,
        alpha,
        u,
        xi: opts.xi.or_else(|| gamma.map(|g| g * sigma / (12.0 * u))),
        gamma,
        delta1,
        delta2: seq.delta2,
        limsup_sq_err,
        bound,
        assumption_checked: seq.assumption_checked(),
        warnings,
        steps,
    };
    Ok((states, report))
}

/// δ̂₁ = max_t ‖ω⋆_{t+1} − ω⋆_t‖ and δ̂₂ = max_t of an upper estimate of
/// dist(ω⋆_t, fix T_{t+1}): the smaller of the Banach–Picard displacement from ω⋆_t
/// under T_{t+1} and ‖ω⋆_{t+1} − ω⋆_t‖.
pub fn measure_variability(seq: &GameSequence, oracles: &[JointState], picard_iters: usize) -> Result<(f64, f64)> {
    if oracles.len() != seq.len() {
        return Err(GneError::OracleUnavailable(format!(
            "{} oracle solutions for {} steps",
            oracles.len(),
            seq.len()
        )));
    }
    let mut d1: f64 = 0.0;
    let mut d2: f64 = 0.0;
    for t in 0..seq.len().saturating_sub(1) {
        let step = linalg::dist(oracles[t].as_slice(), oracles[t + 1].as_slice());
        d1 = d1.max(step);
        if step == 0.0 {
            continue;
        }
        let op = FbfOperator::new(seq.instance(t + 1).clone())?;
        let mut w = oracles[t].clone();
        for _ in 0..picard_iters {
            let next = op.apply(&w)?;
            let moved = linalg::dist(next.as_slice(), w.as_slice());
            w = next;
            if moved <= 1e-13 {
                break;
            }
        }
        let displaced = linalg::dist(w.as_slice(), oracles[t].as_slice());
        d2 = d2.max(displaced.min(step));
    }
    Ok((d1, d2))
}
