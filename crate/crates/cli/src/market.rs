//! `gne market`: day-ahead market cleared by the plain fixed-point iteration and by the
//! selection run, with line flows for both and the storage plan of the selected solution.

use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use gne_core::hsdm::{hsdm_solve, BetaSchedule, HsdmOutcome, StopReason};
use gne_core::market::{build_day_ahead, line_flows, load_network, weighted_flow_energy, write_flows_csv, DayAheadPlan};

use crate::artifacts::Artifacts;
use crate::opts::Opts;
use crate::{CliError, Status};

/// Iteration budget of each run when `--max-iter` is absent.
const MARKET_MAX_ITER: usize = 20_000;

pub fn run(opts: &Opts, config: &Path, art: &Artifacts) -> Result<Status, CliError> {
    let net = load_network(config)?;
    let game = build_day_ahead(&net)?;
    let spec = Arc::new(game.spec.clone());
    let phi = spec.selection().cloned().expect("market games carry a selection");
    let stop = opts.stop_rule(MARKET_MAX_ITER);
    let w0 = spec.initial_state();

    let mut runs = Vec::new();
    for (name, schedule) in [("plain", BetaSchedule::constant(0.0)?), ("selection", opts.schedule(&phi)?)] {
        let (mut op, lip) = opts.operator(spec.clone())?;
        let out: HsdmOutcome = hsdm_solve(op.as_mut(), &phi, &w0, schedule, stop, opts.timing)?;
        let flows = line_flows(&net, &game.layout, &spec, &out.state)?;
        let suffix = if name == "plain" { "_plain" } else { "" };
        art.csv(&format!("trace{suffix}.csv"), |b| out.trace.write_csv(b))?;
        art.csv(&format!("line_flows{suffix}.csv"), |b| write_flows_csv(&net, &flows, b))?;
        let energy = weighted_flow_energy(&flows, &game.flow_weights);
        runs.push((name, out, energy, lip, schedule));
    }

    let (_, selected, _, _, _) = &runs[1];
    let plan = DayAheadPlan::from_solution(&net, &game.layout, &selected.state);
    art.json("plan.json", serde_json::to_value(&plan)?)?;

    let summary: Vec<_> = runs
        .iter()
        .map(|(name, out, energy, lip, schedule)| {
            let last = out.trace.last();
            json!({
                "run": name,
                "algo": opts.algo.name(),
                "schedule": schedule,
                "lipschitz": lip,
                "stop": out.trace.stop,
                "iterations": out.trace.len(),
                "residual": last.map(|r| r.residual),
                "solution_residual": out.solution_residual,
                "phi": last.map(|r| r.phi),
                "coupling_viol": last.map(|r| r.coupling_viol),
                "dual_disagreement": out.state.dual_disagreement(),
                "flow_energy": energy,
            })
        })
        .collect();
    let (e_plain, e_sel) = (runs[0].2, runs[1].2);
    art.json(
        "report.json",
        json!({
            "network": net.name,
            "hours": game.layout.hours,
            "n": spec.layout().n(),
            "m": spec.m(),
            "state_len": spec.layout().len(),
            "runs": summary,
            "flow_energy_improvement": if e_plain > 0.0 { 1.0 - e_sel / e_plain } else { 0.0 },
        }),
    )?;
    Ok(match runs[1].1.trace.stop {
        StopReason::Converged => Status::Done,
        StopReason::MaxIter => Status::MaxIter,
    })
}
