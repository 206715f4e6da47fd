//! Flags shared by all subcommands, and the solver pieces built from them.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};

use gne_core::game::{GameSpec, SelectionFunction};
use gne_core::hsdm::{BetaSchedule, StopRule};
use gne_core::operators::{
    estimate_lipschitz, FbfOperator, FixedPointOperator, LipschitzEstimate, PfbOperator, StepMode, StepSizes,
};
use gne_core::Result;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Fbf,
    Pfb,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Fbf => "fbf",
            Algo::Pfb => "pfb",
        }
    }
}

impl From<Algo> for StepMode {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Fbf => StepMode::Fbf,
            Algo::Pfb => StepMode::Pfb,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Opts {
    /// Game, scenario or bus-network JSON file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Algo::Fbf)]
    pub algo: Algo,
    /// β₀ of the power schedule β_k = β₀/k^p (default 1/L_φ); 0 runs the plain fixed-point iteration.
    #[arg(long, global = true)]
    pub beta0: Option<f64>,
    /// Exponent of the power schedule, in (1/2, 1] (default 0.51).
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Constant step: fixed β for `solve`, the tracking step for `track`.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Inner iterations per time step for `track`.
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Residual tolerance of the stopping rule.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed of every randomised probe; written to each artifact.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Uniform step-size override ρ = τ = σ, checked against the admissible bounds.
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// δ of the pFB step sizes (default 1.01 times its lower bound).
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Record wall-clock times in traces (breaks byte-for-byte reproducibility).
    #[arg(long, global = true)]
    pub timing: bool,
    /// Day-ahead plan (plan.json from `gne market`) for real-time tracking.
    #[arg(long, global = true, value_name = "PATH")]
    pub plan: Option<PathBuf>,
    /// Iterations of the day-ahead run that produces a plan when `--plan` is absent.
    #[arg(long, global = true, default_value_t = 3000)]
    pub plan_iter: usize,
    /// Run `solve` through the simulated agent network instead of the monolithic operator.
    #[arg(long, global = true)]
    pub net: bool,
    /// Tolerance of the oracle certification in `solve`.
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub cert_tol: f64,
}

impl Opts {
    /// `--beta` gives a constant step, `--beta0 0` plain iteration, otherwise the power schedule.
    pub fn schedule(&self, phi: &SelectionFunction) -> Result<BetaSchedule> {
        if let Some(b) = self.beta {
            return BetaSchedule::constant(b);
        }
        match self.beta0 {
            Some(b) if b == 0.0 => BetaSchedule::constant(0.0),
            b => BetaSchedule::power(b.unwrap_or(1.0 / phi.lipschitz()), self.p.unwrap_or(0.51)),
        }
    }

    pub fn stop_rule(&self, default_max_iter: usize) -> StopRule {
        let mut stop = StopRule {
            max_iter: self.max_iter.unwrap_or(default_max_iter),
            ..StopRule::default()
        };
        if let Some(t) = self.tol {
            stop.residual_tol = t;
        }
        stop
    }

    /// The fixed-point operator of `--algo`, with the `--step` override when given.
    pub fn operator(&self, spec: Arc<GameSpec>) -> Result<(Box<dyn FixedPointOperator>, Option<LipschitzEstimate>)> {
        match self.algo {
            Algo::Fbf => {
                let lip = estimate_lipschitz(&spec)?;
                let op = match self.step {
                    None => FbfOperator::new(spec)?,
                    Some(s) => {
                        let steps = StepSizes::uniform(&spec, &lip, StepMode::Fbf, s, None)?;
                        FbfOperator::with_steps(spec, lip.clone(), steps)?
                    }
                };
                Ok((Box::new(op), Some(lip)))
            }
            Algo::Pfb => {
                let op = PfbOperator::new(spec.clone(), self.delta)?;
                let op = match self.step {
                    None => op,
                    Some(s) => {
                        let lip = LipschitzEstimate::declared(0.0, 0.0);
                        let steps = StepSizes::uniform(&spec, &lip, StepMode::Pfb, s, self.delta)?;
                        PfbOperator::with_steps(spec, steps)?
                    }
                };
                Ok((Box::new(op), None))
            }
        }
    }
}

/// Worker threads for the agent-network phases: `GNE_THREADS`, capped by the machine.
pub fn threads() -> usize {
    let cap = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    std::env::var("GNE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(1, |n| n.min(cap))
}
