//! `gne track`: restarted selection over a time-varying scenario or the real-time market.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use gne_core::hsdm::{hsdm_solve, BetaSchedule, StopRule};
use gne_core::market::{build_day_ahead, build_real_time, write_flows_csv, BusNetwork, DayAheadPlan};
use gne_core::online::{beta_for_alpha, parse_scenario, restarted_hsdm, GameSequence, TrackerOptions, TrackingReport};
use gne_core::operators::FbfOperator;
use gne_core::oracle::oracle_for;
use gne_core::game::JointState;
use gne_core::GneError;

use crate::artifacts::{state_json, Artifacts};
use crate::opts::Opts;
use crate::{CliError, Status};

/// Oracles are computed per step up to this many primal coordinates.
const ORACLE_MAX_DIM: usize = 64;
/// Contraction per time step that fixes the default tracking step of a scenario.
const DEFAULT_ALPHA: f64 = 0.25;
/// Tracking step of the real-time market when `--beta` is absent.
const MARKET_BETA: f64 = 5e-4;

pub fn run(opts: &Opts, config: &Path, art: &Artifacts) -> Result<Status, CliError> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    if doc.get("buses").is_some() {
        track_market(opts, &doc, art)
    } else {
        track_scenario(opts, &doc, art)
    }
}

fn tracker_options(opts: &Opts, beta: f64, k: usize) -> TrackerOptions {
    TrackerOptions { algo: opts.algo.into(), delta: opts.delta, ..TrackerOptions::new(beta, k) }
}

fn report_doc(report: &TrackingReport) -> Result<Value, CliError> {
    let mut v = serde_json::to_value(report)?;
    v["mean_residual"] = json!(report.mean_residual());
    v["mean_phi"] = json!(report.mean_phi());
    Ok(v)
}

/// ω⋆_t for every step when each instance belongs to an oracle family; the reason otherwise.
fn oracles(seq: &GameSequence) -> Result<Vec<JointState>, String> {
    if seq.instance(0).layout().n() > ORACLE_MAX_DIM {
        return Err(format!("more than {ORACLE_MAX_DIM} primal coordinates"));
    }
    let mut cache: HashMap<*const gne_core::game::GameSpec, JointState> = HashMap::new();
    let mut out = Vec::with_capacity(seq.len());
    for spec in seq.instances() {
        let key = Arc::as_ptr(spec);
        if let Some(w) = cache.get(&key) {
            out.push(w.clone());
            continue;
        }
        let sol = oracle_for(spec).map_err(|e| e.to_string())?;
        cache.insert(key, sol.state.clone());
        out.push(sol.state);
    }
    Ok(out)
}

fn track_scenario(opts: &Opts, doc: &Value, art: &Artifacts) -> Result<Status, CliError> {
    let seq = parse_scenario(doc)?;
    let (sigma, l_phi) = seq.selection_constants();
    let k = opts.k.unwrap_or(10);
    let beta = match opts.beta {
        Some(b) => b,
        None => beta_for_alpha(DEFAULT_ALPHA, k, sigma, l_phi)?,
    };
    let tracker = tracker_options(opts, beta, k);
    let stars = oracles(&seq);
    let w1 = seq.instance(0).initial_state();
    let (states, report) = restarted_hsdm(&seq, &tracker, &w1, stars.as_deref().ok())?;

    art.csv("tracking.csv", |b| report.write_csv(b))?;
    art.json("state.json", state_json(states.last().expect("at least ω_1")))?;
    let mut v = report_doc(&report)?;
    v["sequence_mode"] = serde_json::to_value(seq.mode())?;
    v["oracle"] = match &stars {
        Ok(_) => json!("per-step oracle solutions"),
        Err(reason) => json!({"skipped": reason}),
    };
    art.json("report.json", v)?;
    Ok(Status::Done)
}

fn track_market(opts: &Opts, doc: &Value, art: &Artifacts) -> Result<Status, CliError> {
    let net = BusNetwork::from_json(doc)?;
    let plan = match &opts.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str::<DayAheadPlan>(&text)
                .map_err(|e| GneError::PlanMissing(format!("{}: {e}", p.display())))?
        }
        None => {
            let plan = day_ahead_plan(&net, opts.plan_iter)?;
            art.json("plan.json", serde_json::to_value(&plan)?)?;
            plan
        }
    };
    let rt = build_real_time(&net, &plan)?;
    let tracker = tracker_options(opts, opts.beta.unwrap_or(MARKET_BETA), opts.k.unwrap_or(50));
    let w1 = rt.sequence.instance(0).initial_state();
    let (states, report) = restarted_hsdm(&rt.sequence, &tracker, &w1, None)?;

    art.csv("tracking.csv", |b| report.write_csv(b))?;
    for t in 0..rt.sequence.len() {
        let flows = rt.window_flows(&net, t, &states[t + 1])?;
        art.csv(&format!("line_flows_t{:02}.csv", t + 1), |b| write_flows_csv(&net, &flows, b))?;
    }
    let mut v = report_doc(&report)?;
    v["penalised_line"] = json!(net.line_label(rt.line));
    v["peak_line_flow"] = json!(rt.peak_line_flow(&net, &states[1..])?);
    v["sample_time"] = json!(rt.sample_time);
    art.json("report.json", v)?;
    Ok(Status::Done)
}

/// Storage plan from a fixed-budget selection run of the day-ahead market.
pub fn day_ahead_plan(net: &BusNetwork, iters: usize) -> gne_core::Result<DayAheadPlan> {
    let game = build_day_ahead(net)?;
    let spec = Arc::new(game.spec.clone());
    let phi = spec.selection().cloned().expect("market games carry a selection");
    let mut op = FbfOperator::new(spec.clone())?;
    let out = hsdm_solve(
        &mut op,
        &phi,
        &spec.initial_state(),
        BetaSchedule::default_for(&phi),
        StopRule::iterations(iters),
        false,
    )?;
    Ok(DayAheadPlan::from_solution(net, &game.layout, &out.state))
}
