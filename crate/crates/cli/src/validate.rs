//! `gne validate`: structural assumption report for a game, scenario or market network.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use gne_core::game::{
    cocoercivity_probe, cost_gradient_check, parse_game, selection_constants_check, selection_gradient_check, GameSpec,
    MonotonicityCheck, ProbeCheck,
};
use gne_core::hsdm::BetaSchedule;
use gne_core::market::{build_day_ahead, BusNetwork};
use gne_core::online::{beta_upper, parse_scenario, tau_beta};
use gne_core::operators::{estimate_lipschitz, make_stepsizes, LipschitzEstimate, StepMode, StepSizes};
use gne_core::{GneError, Result};

use crate::artifacts::Artifacts;
use crate::opts::Opts;
use crate::{CliError, Status};

const PROBES: usize = 100;
const PAIRS: usize = 1000;
const GRADIENT_TOL: f64 = 1e-5;
const CONSTANT_TOL: f64 = 1e-8;
const MONOTONE_TOL: f64 = 1e-10;

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum Verdict {
    Pass,
    Fail,
    Skipped,
}

struct Report {
    checks: Vec<Value>,
    failed: bool,
}

impl Report {
    fn add(&mut self, name: &str, verdict: Verdict, detail: Value) {
        self.failed |= matches!(verdict, Verdict::Fail);
        self.checks.push(json!({"check": name, "status": verdict, "detail": detail}));
    }

    fn probe(&mut self, p: ProbeCheck) {
        let v = if p.pass { Verdict::Pass } else { Verdict::Fail };
        let name = p.name.clone();
        self.add(&name, v, serde_json::to_value(p).expect("plain data"));
    }

    fn result<T: Serialize>(&mut self, name: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => {
                self.add(name, Verdict::Pass, serde_json::to_value(&v).expect("plain data"));
                Some(v)
            }
            Err(e) => {
                self.add(name, Verdict::Fail, error_detail(&e));
                None
            }
        }
    }
}

fn error_detail(e: &GneError) -> Value {
    match e {
        GneError::Validation { assumption, evidence } => {
            json!({"error": e.kind(), "assumption": assumption, "evidence": evidence})
        }
        GneError::InstanceValidation { t, source } => {
            json!({"error": e.kind(), "t": t, "cause": error_detail(source)})
        }
        _ => json!({"error": e.kind(), "message": e.to_string()}),
    }
}

/// The game to check: the file itself, the first instance of a scenario, or the day-ahead market.
fn load(doc: &Value) -> Result<(GameSpec, Option<Value>)> {
    if doc.get("buses").is_some() {
        let net = BusNetwork::from_json(doc)?;
        return Ok((build_day_ahead(&net)?.spec, Some(json!({"kind": "market day-ahead", "buses": net.n_buses()}))));
    }
    if doc.get("timeline").is_some() {
        let seq = parse_scenario(doc)?;
        let (sigma, l_phi) = seq.selection_constants();
        let info = json!({
            "kind": "scenario",
            "steps": seq.len(),
            "mode": seq.mode(),
            "sigma_min": sigma,
            "l_phi_max": l_phi,
            "beta_upper": beta_upper(sigma, l_phi),
        });
        return Ok(((*seq.instance(0).clone()).clone(), Some(info)));
    }
    Ok((parse_game(doc)?, None))
}

pub fn run(opts: &Opts, config: &Path, art: &Artifacts) -> std::result::Result<Status, CliError> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    let mut rep = Report { checks: Vec::new(), failed: false };
    match load(&doc) {
        Ok((spec, info)) => {
            rep.add("load", Verdict::Pass, info.unwrap_or(json!("game file")));
            check_game(&spec, opts, &mut rep);
        }
        Err(e) => {
            // a structural failure at load time names the assumption and its evidence
            let name = match &e {
                GneError::Validation { assumption, .. } => assumption.clone(),
                _ => "load".to_string(),
            };
            rep.add(&name, Verdict::Fail, error_detail(&e));
        }
    }
    let pass = !rep.failed;
    let doc = art.json("validate.json", json!({"pass": pass, "checks": rep.checks}))?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(if pass { Status::Done } else { Status::Failed })
}

fn check_game(spec: &GameSpec, opts: &Opts, rep: &mut Report) {
    let seed = opts.seed;

    let (pairs, worst, (u, v)) = spec.monotonicity_probe(PAIRS, seed);
    let mut detail = json!({"load_check": spec.report().monotonicity, "probe_pairs": pairs, "probe_worst_ratio": worst});
    if worst < -MONOTONE_TOL {
        detail["witness"] = json!({"u": u, "v": v});
    }
    let eigen_ok = match spec.report().monotonicity {
        MonotonicityCheck::Eigen { min_eigenvalue } => min_eigenvalue >= -MONOTONE_TOL,
        MonotonicityCheck::Probe { .. } => true,
    };
    rep.add("monotone pseudogradient", verdict(eigen_ok && worst >= -MONOTONE_TOL), detail);

    let g = spec.graph();
    rep.add(
        "connected graph",
        verdict(spec.report().connected),
        json!({"agents": g.n(), "edges": g.edges().len(), "algebraic_connectivity": spec.report().algebraic_connectivity}),
    );
    rep.add(
        "slater point",
        if spec.report().slater.is_some() { Verdict::Pass } else { Verdict::Skipped },
        json!({"slack": spec.report().slater, "warnings": spec.report().warnings}),
    );

    let lip = rep.result("lipschitz estimate", estimate_lipschitz(spec));
    if let Some(lip) = &lip {
        let steps = match opts.step {
            Some(s) => StepSizes::uniform(spec, lip, StepMode::Fbf, s, None),
            None => make_stepsizes(spec, lip, StepMode::Fbf, None),
        };
        fbf_margin(rep, steps, lip);
    }
    pfb_checks(spec, opts, rep);

    match spec.selection() {
        None => rep.add("selection", Verdict::Skipped, json!("no selection function declared")),
        Some(phi) => {
            rep.probe(selection_gradient_check(spec, phi, PROBES, seed, GRADIENT_TOL));
            let (conv, lipc) = selection_constants_check(spec, phi, PROBES, seed, CONSTANT_TOL);
            rep.probe(conv);
            rep.probe(lipc);
            let schedule = match opts.beta0 {
                Some(b) if b == 0.0 => BetaSchedule::constant(0.0),
                b => BetaSchedule::power(b.unwrap_or(1.0 / phi.lipschitz()), opts.p.unwrap_or(0.51)),
            };
            rep.result("step schedule", schedule);
            if let Some(beta) = opts.beta {
                rep.result(
                    "tracking step",
                    tau_beta(beta, phi.sigma(), phi.lipschitz())
                        .map(|tau| json!({"beta": beta, "tau": tau, "upper": beta_upper(phi.sigma(), phi.lipschitz())})),
                );
            }
        }
    }
    rep.probe(cost_gradient_check(spec, PROBES, seed, GRADIENT_TOL));
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn fbf_margin(rep: &mut Report, steps: Result<StepSizes>, lip: &LipschitzEstimate) {
    match steps {
        Ok(s) => {
            let top = s.rho.iter().chain(&s.tau).chain(&s.sigma).fold(0.0f64, |a, &b| a.max(b));
            rep.add("fbf step sizes", Verdict::Pass, json!({"steps": s, "margin": 1.0 - top * lip.l_b}));
        }
        Err(e) => rep.add("fbf step sizes", Verdict::Fail, error_detail(&e)),
    }
}

fn pfb_checks(spec: &GameSpec, opts: &Opts, rep: &mut Report) {
    if !spec.is_affine() {
        rep.add("pfb", Verdict::Skipped, json!("constraints are not affine"));
        return;
    }
    let Some(eta) = spec.options().cocoercivity else {
        rep.add("pfb", Verdict::Skipped, json!("no cocoercivity modulus declared"));
        return;
    };
    rep.probe(cocoercivity_probe(spec, eta, PAIRS, opts.seed, MONOTONE_TOL));
    let lip = LipschitzEstimate::declared(0.0, 0.0);
    let steps = match opts.step {
        Some(s) => StepSizes::uniform(spec, &lip, StepMode::Pfb, s, opts.delta),
        None => make_stepsizes(spec, &lip, StepMode::Pfb, opts.delta),
    };
    rep.result("pfb step sizes", steps);
}
