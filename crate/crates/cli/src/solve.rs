//! `gne solve`: optimal equilibrium selection on one game file.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};

use gne_core::agentnet::{NetConfig, Network};
use gne_core::game::{kkt_residual, load_game, GameSpec, JointState, SelectionFunction};
use gne_core::hsdm::{certify_selection, hsdm_solve, BetaSchedule, HsdmOutcome, RunRecord, RunTrace, StopReason, StopRule};
use gne_core::operators::FixedPointOperator;
use gne_core::oracle::oracle_for;
use gne_core::{GneError, Result};

use crate::artifacts::{state_json, Artifacts};
use crate::opts::{threads, Opts};
use crate::{CliError, Status};

/// Oracle certification is attempted up to this many primal coordinates.
const CERTIFY_MAX_DIM: usize = 64;

pub fn run(opts: &Opts, config: &Path, art: &Artifacts) -> std::result::Result<Status, CliError> {
    let spec = Arc::new(load_game(config)?);
    let phi = spec
        .selection()
        .cloned()
        .ok_or_else(|| GneError::validation("selection", "the game file declares no selection function"))?;
    let schedule = opts.schedule(&phi)?;
    let stop = opts.stop_rule(200_000);
    let (mut op, lip) = opts.operator(spec.clone())?;
    let w0 = spec.initial_state();

    let (outcome, net) = if opts.net {
        let (o, counts) = run_network(op.as_mut(), &phi, &w0, schedule, stop, opts)?;
        (o, Some(counts))
    } else {
        (hsdm_solve(op.as_mut(), &phi, &w0, schedule, stop, opts.timing)?, None)
    };

    art.csv("trace.csv", |b| outcome.trace.write_csv(b))?;
    art.json("state.json", state_json(&outcome.state))?;

    let last = outcome.trace.last().copied();
    let lam: Vec<f64> = outcome.state.lambda_mean().into_iter().map(|v| v.max(0.0)).collect();
    let kkt = kkt_residual(&spec, outcome.state.x(), &lam)?;
    let report = json!({
        "algo": op.name(),
        "schedule": schedule,
        "steps": op.steps(),
        "lipschitz": lip,
        "stop": outcome.trace.stop,
        "iterations": outcome.trace.len(),
        "residual": last.map(|r| r.residual),
        "solution_residual": outcome.solution_residual,
        "phi": last.map(|r| r.phi),
        "coupling_viol": last.map(|r| r.coupling_viol),
        "dual_disagreement": outcome.state.dual_disagreement(),
        "kkt": kkt,
        "assumptions": spec.report(),
        "certification": certification(&spec, &phi, &outcome.state, opts.cert_tol),
        "network": net,
    });
    art.json("report.json", report)?;
    Ok(match outcome.trace.stop {
        StopReason::Converged => Status::Done,
        StopReason::MaxIter => Status::MaxIter,
    })
}

/// Oracle comparison when the game belongs to a constructed family, otherwise the reason it was skipped.
fn certification(spec: &GameSpec, phi: &SelectionFunction, w: &JointState, tol: f64) -> Value {
    if spec.layout().n() > CERTIFY_MAX_DIM {
        return json!({"skipped": format!("more than {CERTIFY_MAX_DIM} primal coordinates")});
    }
    match oracle_for(spec).and_then(|o| Ok((o.method, certify_selection(spec, phi, w, &o.state, tol)?))) {
        Ok((method, cert)) => json!({
            "oracle": method,
            "x_distance": cert.x_distance,
            "state_distance": cert.state_distance,
            "phi_gap": cert.phi_gap,
            "kkt": cert.kkt,
            "tol": cert.tol,
            "result": if cert.pass { "pass" } else { "fail" },
        }),
        Err(e) => json!({"skipped": e.to_string()}),
    }
}

fn coupling_violation(spec: &GameSpec, x: &[f64]) -> f64 {
    spec.coupling(x).iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt()
}

/// The same iteration as `hsdm_solve`, with every outer step executed by the simulated agents.
/// The residual column still comes from the monolithic operator, evaluated at each iterate.
fn run_network(
    op: &mut dyn FixedPointOperator,
    phi: &SelectionFunction,
    w0: &JointState,
    schedule: BetaSchedule,
    stop: StopRule,
    opts: &Opts,
) -> Result<(HsdmOutcome, Value)> {
    let spec = Arc::new(op.spec().clone());
    let cfg = NetConfig { schedule: Some(schedule), threads: threads(), ..NetConfig::default() };
    let mut net = Network::new(spec.clone(), op.steps().clone(), w0, cfg)?;
    let start = Instant::now();
    let mut trace = RunTrace::default();
    let mut w = w0.clone();
    let mut last_t = w.clone();
    for k in 1..=stop.max_iter {
        let t = op.apply(&w)?;
        let d = JointState::from_dvector(w.layout().clone(), t.vector() - w.vector())?;
        trace.push(RunRecord {
            k,
            residual: op.norm(&d),
            phi: phi.value(t.as_slice()),
            coupling_viol: coupling_violation(&spec, w.x()),
            dual_disagreement: w.dual_disagreement(),
            beta: schedule.beta(k),
            wall_ms: if opts.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        });
        net.outer_iteration()?;
        last_t = t;
        w = net.state();
        if stop.converged(op, &trace, &last_t)? {
            trace.stop = StopReason::Converged;
            break;
        }
    }
    let counts = json!({
        "threads": threads(),
        "messages": net.counts(),
        "per_iteration": net.per_round().first(),
        "coordinator_calls": net.coordinator_calls(),
        "locality_violations": net.violations(),
    });
    Ok((HsdmOutcome::finish(op, last_t, w, trace)?, counts))
}
