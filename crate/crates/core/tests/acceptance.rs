//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any fails.
//! Pass criterion numbers as arguments to run a subset.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use gne_core::agentnet::{equivalence_check, expected_messages, full_round_equivalents, NetConfig, Network};
use gne_core::game::{
    cost_gradient_check, kkt_residual, load_game, parse_game, sample_state, selection_gradient_check, GameSpec,
    JointState, ProbeCheck,
};
use gne_core::hsdm::{certify_selection, hsdm_solve, BetaSchedule, StopRule};
use gne_core::market::{
    build_day_ahead, build_real_time, line_flows, load_network, weighted_flow_energy, BusNetwork, DayAheadPlan,
    RealTimeMarket,
};
use gne_core::online::{
    beta_for_alpha, load_scenario, restarted_hsdm, tau_beta, tracking_bound, GameSequence, TrackerOptions,
};
use gne_core::operators::{
    estimate_lipschitz, FbfOperator, FixedPointOperator, PfbOperator, StepMode, StepSizes,
};
use gne_core::oracle::oracle_for;

type Outcome = Result<String, String>;

fn fixture(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn diff(a: &JointState, b: &JointState) -> JointState {
    JointState::from_dvector(a.layout().clone(), a.vector() - b.vector()).expect("same layout")
}

fn random_state(spec: &GameSpec, rng: &mut ChaCha8Rng) -> JointState {
    JointState::from_vec(spec.layout().clone(), sample_state(spec, rng)).expect("sampled state fits the layout")
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Plain T iteration from `w` until ‖T(ω) − ω‖ ≤ tol.
fn picard(op: &dyn FixedPointOperator, w: &JointState, tol: f64, max_iter: usize) -> Result<JointState, String> {
    let mut w = w.clone();
    for _ in 0..max_iter {
        let t = op.apply(&w).map_err(e2s)?;
        let r = (t.vector() - w.vector()).norm();
        w = t;
        if r <= tol {
            return Ok(w);
        }
    }
    Err(format!("{}: Banach–Picard did not reach {tol:e} in {max_iter} iterations", op.name()))
}

/// F ≡ 0 on boxes, φ = ‖x − x_ref‖² with most coordinates of x_ref outside the boxes.
fn random_projection_game(rng: &mut ChaCha8Rng) -> GameSpec {
    let n = rng.gen_range(2..=4);
    let mut agents = Vec::new();
    let mut x_ref = Vec::new();
    for _ in 0..n {
        let d = rng.gen_range(1..=2);
        let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.2..1.5)).collect();
        for k in 0..d {
            x_ref.push(match rng.gen_range(0..10) {
                0..=2 => rng.gen_range(lo[k]..hi[k]),
                3..=6 => hi[k] + rng.gen_range(0.1..1.0),
                _ => lo[k] - rng.gen_range(0.1..1.0),
            });
        }
        agents.push(json!({"dim": d, "box": {"lo": lo, "hi": hi}}));
    }
    let edges: Vec<[usize; 2]> = (1..n).map(|i| [i, i + 1]).collect();
    parse_game(&json!({
        "m": 0, "agents": agents, "graph": {"edges": edges},
        "selection": {"kind": "projection", "x_ref": x_ref}
    }))
    .expect("valid projection game")
}

/// Strongly monotone affine F = diagonal + skew, one aggregate coupling row.
fn random_strongly_monotone(rng: &mut ChaCha8Rng) -> GameSpec {
    let n: usize = rng.gen_range(2..=5);
    let mu = rng.gen_range(0.5..2.0);
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = mu + rng.gen_range(0.0..1.0);
        for j in i + 1..n {
            let s = rng.gen_range(-1.0..1.0);
            m[i][j] = s;
            m[j][i] = -s;
        }
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..1.0)).collect();
    let budget = rng.gen_range(0.5..1.5);
    let agents: Vec<Value> = (0..n)
        .map(|_| {
            json!({"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]},
                   "g": {"kind": "affine", "A": [[1.0]], "b": [budget / n as f64]}})
        })
        .collect();
    // cocoercivity of an affine map: λ_min(sym M)/‖M‖²
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let sym_min = ((&dm + dm.transpose()) * 0.5).symmetric_eigen().eigenvalues.min();
    let norm = dm.singular_values().max();
    // dense M: every agent reads every other, so the graph is complete
    let edges: Vec<[usize; 2]> = (1..=n).flat_map(|i| (i + 1..=n).map(move |j| [i, j])).collect();
    parse_game(&json!({
        "m": 1, "agents": agents,
        "pseudogradient": {"M": m, "c": c},
        "graph": {"edges": edges},
        "cocoercivity": 0.999 * sym_min / (norm * norm),
        "selection": {"kind": "projection", "x_ref": vec![0.0; n], "dual_weight": 0.1},
        "slater_point": vec![0.0; n]
    }))
    .expect("valid strongly monotone game")
}

/// Every game-file fixture, the first drifting instance and the random strongly monotone suite.
fn small_games() -> Vec<(String, Arc<GameSpec>)> {
    let mut out: Vec<(String, Arc<GameSpec>)> = ["projection.json", "strongly_monotone.json", "quad_constraint.json"]
        .iter()
        .map(|f| (f.to_string(), Arc::new(load_game(fixture(f)).expect("fixture loads"))))
        .collect();
    let seq = load_scenario(fixture("drifting_projection.json")).expect("scenario loads");
    out.push(("drifting_projection.json t=1".into(), seq.instance(0).clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for k in 0..2 {
        out.push((format!("random strongly monotone #{k}"), Arc::new(random_strongly_monotone(&mut rng))));
    }
    out
}

fn pfb_ready(spec: &GameSpec) -> bool {
    spec.is_affine() && spec.options().cocoercivity.is_some()
}

// ---------------------------------------------------------------------------------------------

fn c1_oracle_equivalence() -> Outcome {
    let (mut worst_x, mut worst_gap, mut worst_s, mut worst_k) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut count = 0;
    for set in [101u64, 202] {
        for inst in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(set * 1000 + inst);
            let spec = Arc::new(random_projection_game(&mut rng));
            let phi = spec.selection().unwrap().clone();
            let oracle = oracle_for(&spec).map_err(e2s)?;
            let start = Instant::now();
            let mut op = FbfOperator::new(spec.clone()).map_err(e2s)?;
            let out = hsdm_solve(
                &mut op,
                &phi,
                &spec.initial_state(),
                BetaSchedule::power(1.0 / phi.lipschitz(), 0.51).map_err(e2s)?,
                StopRule::default(),
                false,
            )
            .map_err(e2s)?;
            let secs = start.elapsed().as_secs_f64();
            let cert = certify_selection(&spec, &phi, &out.state, &oracle.state, 1e-4).map_err(e2s)?;
            ensure(cert.x_distance <= 1e-4 && cert.phi_gap.abs() <= 1e-6 && secs <= 30.0, || {
                format!("seed set {set} instance {inst}: x-distance {:.2e}, φ-gap {:.2e}, {secs:.1}s", cert.x_distance, cert.phi_gap)
            })?;
            worst_x = worst_x.max(cert.x_distance);
            worst_gap = worst_gap.max(cert.phi_gap.abs());
            worst_s = worst_s.max(secs);
            worst_k = worst_k.max(out.trace.len());
            count += 1;
        }
    }
    let info = coupled_projection_bias()?;
    Ok(format!(
        "{count} instances, worst x-distance {worst_x:.1e}, worst |φ-gap| {worst_gap:.1e}, ≤ {worst_k} iterations, ≤ {worst_s:.2}s; {info}"
    ))
}

/// Informational: one active coupling row. The FBF correction step leaves T(ω) an O(β_k)
/// distance from the selected point, so the tolerances above are not reached in 2·10⁵ steps.
fn coupled_projection_bias() -> Result<String, String> {
    let spec = Arc::new(
        parse_game(&json!({
            "m": 1,
            "agents": [
                {"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}, "g": {"kind": "affine", "A": [[1.0]], "b": [0.5]}},
                {"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}, "g": {"kind": "affine", "A": [[1.0]], "b": [0.5]}}
            ],
            "graph": {"edges": [[1, 2]]},
            "selection": {"kind": "projection", "x_ref": [1.0, 1.0]}
        }))
        .map_err(e2s)?,
    );
    let phi = spec.selection().unwrap().clone();
    let oracle = oracle_for(&spec).map_err(e2s)?;
    let mut op = FbfOperator::new(spec.clone()).map_err(e2s)?;
    let out = hsdm_solve(&mut op, &phi, &spec.initial_state(), BetaSchedule::default_for(&phi), StopRule::default(), false)
        .map_err(e2s)?;
    let cert = certify_selection(&spec, &phi, &out.state, &oracle.state, 1e-4).map_err(e2s)?;
    Ok(format!(
        "info: with an active coupling row x-distance {:.1e}, φ-gap {:.1e} after {} iterations",
        cert.x_distance,
        cert.phi_gap,
        out.trace.len()
    ))
}

fn c2_singleton_consistency() -> Outcome {
    let mut games = vec![Arc::new(load_game(fixture("strongly_monotone.json")).map_err(e2s)?)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..4 {
        games.push(Arc::new(random_strongly_monotone(&mut rng)));
    }
    // the fixed-point set is a singleton, so any admissible schedule works; a fast decay removes the O(β_k) bias
    let schedule = BetaSchedule::power(1e-3, 1.0).map_err(e2s)?;
    let stop = StopRule { max_iter: 1_000_000, residual_tol: 1e-10, phi_stall_tol: 1e-14, window: 100 };
    let (mut worst_d, mut worst_kkt) = (0.0f64, 0.0f64);
    for (g, spec) in games.iter().enumerate() {
        let phi = spec.selection().unwrap().clone();
        let oracle = oracle_for(spec).map_err(e2s)?;
        let mut fbf = FbfOperator::new(spec.clone()).map_err(e2s)?;
        let mut pfb = PfbOperator::new(spec.clone(), None).map_err(e2s)?;
        let w0 = spec.initial_state();
        let a = hsdm_solve(&mut fbf, &phi, &w0, schedule, stop, false).map_err(e2s)?;
        let b = hsdm_solve(&mut pfb, &phi, &w0, schedule, stop, false).map_err(e2s)?;
        let outs = [("fbf", a.state.x(), a.state.lambda_mean()), ("pfb", b.state.x(), b.state.lambda_mean())];
        for (name, x, lam) in &outs {
            let kkt = kkt_residual(spec, x, lam).map_err(e2s)?;
            worst_kkt = worst_kkt.max(kkt);
            ensure(kkt <= 1e-7, || format!("game {g}: {name} KKT residual {kkt:.2e}"))?;
        }
        let ok = kkt_residual(spec, oracle.state.x(), &oracle.state.lambda_mean()).map_err(e2s)?;
        worst_kkt = worst_kkt.max(ok);
        ensure(ok <= 1e-7, || format!("game {g}: oracle KKT residual {ok:.2e}"))?;
        for (u, v, label) in [
            (outs[0].1, outs[1].1, "fbf–pfb"),
            (outs[0].1, oracle.state.x(), "fbf–oracle"),
            (outs[1].1, oracle.state.x(), "pfb–oracle"),
        ] {
            let d = dist(u, v);
            worst_d = worst_d.max(d);
            ensure(d <= 1e-5, || format!("game {g}: {label} distance {d:.2e}"))?;
        }
    }
    Ok(format!(
        "{} games (β₀ = 1e-3, p = 1), worst pairwise distance {worst_d:.1e}, worst KKT {worst_kkt:.1e}",
        games.len()
    ))
}

fn c3_fejer() -> Outcome {
    let mut checked = 0;
    let mut literal_default = 0;
    for (name, spec) in small_games() {
        let lip = estimate_lipschitz(&spec).map_err(e2s)?;
        if lip.l_b == 0.0 {
            // B + C vanishes: T is the resolvent itself, firmly nonexpansive
            continue;
        }
        let default = FbfOperator::new(spec.clone()).map_err(e2s)?;
        let star = picard(&default, &spec.initial_state(), 1e-12, 5_000_000)?;
        // stated coefficient (L_B/μ_min(Ψ))² at steps 0.7/L_B; Tseng coefficient 1 − (L_B/μ_min(Ψ))² at the default
        let scaled_steps = StepSizes::uniform(&spec, &lip, StepMode::Fbf, 0.7 / lip.l_b, None).map_err(e2s)?;
        let scaled = FbfOperator::with_steps(spec.clone(), lip.clone(), scaled_steps).map_err(e2s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let w = random_state(&spec, &mut rng);
            for (op, stated) in [(&scaled, true), (&default, false)] {
                let c = lip.l_b / op.steps().min_psi();
                let (out, tilde) = op.apply_with_tilde(&w).map_err(e2s)?;
                let lhs = op.norm_sq(&diff(&out, &star));
                let before = op.norm_sq(&diff(&w, &star));
                let step = op.norm_sq(&diff(&tilde, &w));
                let coef = if stated { c * c } else { 1.0 - c * c };
                ensure(lhs <= before - coef * step + 1e-9, || {
                    format!("{name}: violation at ‖Ψ⁻¹‖L_B = {c:.2}: {lhs:.6e} > {:.6e}", before - coef * step)
                })?;
                if !stated && lhs > before - c * c * step + 1e-9 {
                    literal_default += 1;
                }
            }
            checked += 1;
        }
        if pfb_ready(&spec) {
            let pfb = PfbOperator::new(spec.clone(), None).map_err(e2s)?;
            let star = picard(&pfb, &spec.initial_state(), 1e-12, 5_000_000)?;
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let w = random_state(&spec, &mut rng);
                let after = pfb.norm_sq(&diff(&pfb.apply(&w).map_err(e2s)?, &star));
                let before = pfb.norm_sq(&diff(&w, &star));
                ensure(after <= before + 1e-9, || format!("{name}: pFB Φ-norm increase {after:.6e} > {before:.6e}"))?;
            }
        }
    }
    Ok(format!(
        "{checked} sampled points, zero violations; info: at the default 0.99/L_B the stated coefficient fails on {literal_default}"
    ))
}

fn c4_zero_fixed_point() -> Outcome {
    let (mut worst_kkt, mut worst_dd, mut runs) = (0.0f64, 0.0f64, 0);
    for (name, spec) in small_games() {
        let mut ops: Vec<Box<dyn FixedPointOperator>> = vec![Box::new(FbfOperator::new(spec.clone()).map_err(e2s)?)];
        if pfb_ready(&spec) {
            ops.push(Box::new(PfbOperator::new(spec.clone(), None).map_err(e2s)?));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for op in &ops {
            for _ in 0..3 {
                let start = random_state(&spec, &mut rng);
                let lim = picard(op.as_ref(), &start, 1e-10, 5_000_000)?;
                let kkt = kkt_residual(&spec, lim.x(), &lim.lambda_mean()).map_err(e2s)?;
                let dd = lim.dual_disagreement();
                ensure(kkt <= 1e-7 && dd <= 1e-7, || {
                    format!("{name} ({}): KKT {kkt:.2e}, dual disagreement {dd:.2e}", op.name())
                })?;
                worst_kkt = worst_kkt.max(kkt);
                worst_dd = worst_dd.max(dd);
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} limits, worst KKT {worst_kkt:.1e}, worst dual disagreement {worst_dd:.1e}"))
}

fn c5_tau_and_bound() -> Outcome {
    let mut worst = 0.0f64;
    for &(sigma, l) in &[(2.0, 2.0), (0.5, 3.0), (1.0, 21.0)] {
        let upper = 2.0 * sigma / (l * l);
        for f in [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let beta: f64 = f * upper;
            let closed = 1.0 - (1.0 - beta * (2.0 * sigma - beta * l * l)).sqrt();
            let got = tau_beta(beta, sigma, l).map_err(e2s)?;
            let rel = (got - closed).abs() / closed.abs().max(1e-300);
            worst = worst.max(rel);
            ensure(rel <= 1e-9, || format!("τ({beta}) = {got} vs closed form {closed}"))?;
        }
        ensure(tau_beta(upper, sigma, l).is_err() && tau_beta(0.0, sigma, l).is_err(), || "β range not enforced".into())?;
    }
    let sigma = 1.7;
    let beta = 1e-8;
    let ratio = beta / tau_beta(beta, sigma, 3.0).map_err(e2s)?;
    let rel = (ratio * sigma - 1.0).abs();
    ensure(rel <= 1e-4, || format!("β/τ(β) = {ratio} vs 1/σ = {}", 1.0 / sigma))?;
    let (g, d1, a) = (0.37, 0.05, 0.125);
    let bound = tracking_bound(g, d1, a).map_err(e2s)?;
    let hand = (0.37 + 0.0025) / 0.375;
    ensure((bound - hand).abs() <= 1e-12, || format!("tracking bound {bound} vs {hand}"))?;
    ensure(tracking_bound(g, d1, 0.5).is_err(), || "α = 1/2 accepted".into())?;
    Ok(format!("worst relative τ error {worst:.1e}, β/τ·σ − 1 = {rel:.1e} at β = 1e-8, bound exact"))
}

fn c6_online_contraction() -> Outcome {
    let start = Instant::now();
    let seq = load_scenario(fixture("drifting_projection.json")).map_err(e2s)?;
    let stars: Vec<JointState> =
        seq.instances().iter().map(|s| oracle_for(s).map(|o| o.state)).collect::<Result<_, _>>().map_err(e2s)?;
    let (sigma, l_phi) = seq.selection_constants();
    let k = 10;
    let beta = beta_for_alpha(0.25, k, sigma, l_phi).map_err(e2s)?;
    let (states, report) =
        restarted_hsdm(&seq, &TrackerOptions::new(beta, k), &seq.instance(0).initial_state(), Some(&stars)).map_err(e2s)?;
    let gamma = report.gamma.ok_or("γ unavailable")?;
    let mut slack = f64::INFINITY;
    for t in 0..seq.len() {
        let lhs = dist(states[t + 1].as_slice(), stars[t].as_slice()).powi(2);
        let rhs = report.alpha * dist(states[t].as_slice(), stars[t].as_slice()).powi(2) + gamma;
        slack = slack.min(rhs - lhs);
        ensure(lhs <= rhs, || format!("t = {t}: {lhs:.4e} > {rhs:.4e}"))?;
    }
    let bound = report.bound.ok_or("bound unavailable")?;
    let limsup = report.limsup_sq_err.ok_or("limsup unavailable")?;
    ensure(limsup <= 1.05 * bound, || format!("limsup {limsup:.4e} > 1.05 × bound {bound:.4e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 60.0, || format!("{secs:.1}s for {} steps", seq.len()))?;
    Ok(format!(
        "{} steps, β = {beta:.4}, K = {k}, α = {:.3}, γ = {gamma:.3e}, limsup {limsup:.3e} ≤ bound {bound:.3e}, {secs:.2}s",
        seq.len(),
        report.alpha
    ))
}

/// Iteration budget of the day-ahead comparison and of the plan that seeds the real-time market.
const DAY_AHEAD_ITERS: usize = 2000;
const PLAN_ITERS: usize = 3000;

fn day_ahead_energy(net: &BusNetwork, schedule: Option<BetaSchedule>, iters: usize) -> Result<(f64, JointState), String> {
    let game = build_day_ahead(net).map_err(e2s)?;
    let spec = Arc::new(game.spec.clone());
    let phi = spec.selection().unwrap().clone();
    let mut op = FbfOperator::new(spec.clone()).map_err(e2s)?;
    let sched = schedule.unwrap_or(BetaSchedule::constant(0.0).map_err(e2s)?);
    let out = hsdm_solve(&mut op, &phi, &spec.initial_state(), sched, StopRule::iterations(iters), false).map_err(e2s)?;
    let flows = line_flows(net, &game.layout, &spec, &out.state).map_err(e2s)?;
    Ok((weighted_flow_energy(&flows, &game.flow_weights), out.state))
}

fn real_time(net: &BusNetwork) -> Result<RealTimeMarket, String> {
    let game = build_day_ahead(net).map_err(e2s)?;
    let phi = game.spec.selection().unwrap().clone();
    let (_, state) = day_ahead_energy(net, Some(BetaSchedule::default_for(&phi)), PLAN_ITERS)?;
    build_real_time(net, &DayAheadPlan::from_solution(net, &game.layout, &state)).map_err(e2s)
}

fn c7_market_trends() -> Outcome {
    let net = load_network(fixture("ieee13.json")).map_err(e2s)?;
    let phi = build_day_ahead(&net).map_err(e2s)?.spec.selection().unwrap().clone();

    let t = Instant::now();
    let (plain, _) = day_ahead_energy(&net, None, DAY_AHEAD_ITERS)?;
    let (selected, _) = day_ahead_energy(&net, Some(BetaSchedule::default_for(&phi)), DAY_AHEAD_ITERS)?;
    let improvement = 1.0 - selected / plain;
    ensure(improvement >= 0.01, || format!("(a) flow energy {selected:.4} vs plain {plain:.4}"))?;
    let t_a = t.elapsed().as_secs_f64();

    let rt = real_time(&net)?;
    let w1 = rt.sequence.instance(0).initial_state();
    let mut rows = Vec::new();
    let mut longest = t_a;
    for k in [5, 50, 500] {
        let t = Instant::now();
        let (states, rep) = restarted_hsdm(&rt.sequence, &TrackerOptions::new(5e-4, k), &w1, None).map_err(e2s)?;
        let peak = rt.peak_line_flow(&net, &states[1..]).map_err(e2s)?;
        rows.push((k, rep.mean_residual(), peak));
        longest = longest.max(t.elapsed().as_secs_f64());
    }
    for w in rows.windows(2) {
        ensure(w[1].1 <= w[0].1 && w[1].2 <= w[0].2, || {
            format!("(b) K = {} → {}: residual {:.3e} → {:.3e}, peak flow {:.4} → {:.4}", w[0].0, w[1].0, w[0].1, w[1].1, w[0].2, w[1].2)
        })?;
    }

    let mut costs = Vec::new();
    for beta in [1e-4, 2e-3] {
        let (_, rep) = restarted_hsdm(&rt.sequence, &TrackerOptions::new(beta, 5), &w1, None).map_err(e2s)?;
        costs.push(rep.mean_phi());
    }
    ensure(costs[0] > costs[1], || format!("(c) mean φ {:.4} at β = 1e-4 vs {:.4} at β = 2e-3", costs[0], costs[1]))?;
    ensure(longest <= 300.0, || format!("a run took {longest:.0}s"))?;

    let trend: Vec<String> = rows.iter().map(|(k, r, p)| format!("K={k}: res {r:.2e}, peak {p:.4}")).collect();
    Ok(format!(
        "(a) flow energy {selected:.3} vs {plain:.3} ({:.1}% lower, {DAY_AHEAD_ITERS} iterations); (b) {}; (c) mean φ {:.3} (β = 1e-4) > {:.3} (β = 2e-3) at K = 5",
        100.0 * improvement,
        trend.join(", "),
        costs[0],
        costs[1]
    ))
}

fn fidelity_one(name: &str, spec: &Arc<GameSpec>, mode: StepMode, rng: &mut ChaCha8Rng) -> Result<(f64, usize), String> {
    let steps = match mode {
        StepMode::Fbf => FbfOperator::new(spec.clone()).map_err(e2s)?.steps().clone(),
        StepMode::Pfb => PfbOperator::new(spec.clone(), None).map_err(e2s)?.steps().clone(),
    };
    let schedule = spec.selection().map(BetaSchedule::default_for);
    let w = random_state(spec, rng);
    let dev = equivalence_check(spec.clone(), &steps, &w, 100, schedule).map_err(e2s)?;
    ensure(dev <= 1e-12, || format!("{name} ({mode:?}): deviation {dev:.2e}"))?;

    let mut net = Network::new(spec.clone(), steps, &w, NetConfig { schedule, ..NetConfig::default() }).map_err(e2s)?;
    for _ in 0..100 {
        net.outer_iteration().map_err(e2s)?;
    }
    ensure(net.violations() == 0, || format!("{name} ({mode:?}): {} locality violations", net.violations()))?;
    let coordinator = schedule.is_some() && !spec.selection().unwrap().is_separable();
    let want = expected_messages(spec, mode, coordinator);
    let per = net.per_round();
    ensure(per.len() == 100 && per.iter().all(|r| r.agent == want.agent && r.coordinator == want.coordinator), || {
        format!("{name} ({mode:?}): counts {:?} vs closed form {want:?}", per.first())
    })?;
    Ok((dev, want.agent))
}

fn c8_distributed_fidelity() -> Outcome {
    let mut games = small_games();
    let net = load_network(fixture("ieee13.json")).map_err(e2s)?;
    games.push(("ieee13 day-ahead".into(), Arc::new(build_day_ahead(&net).map_err(e2s)?.spec)));
    let rt = real_time(&net)?;
    games.push(("ieee13 real-time t=1".into(), rt.sequence.instance(0).clone()));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut pairs) = (0.0f64, 0);
    for (name, spec) in &games {
        let (dev, fbf_msgs) = fidelity_one(name, spec, StepMode::Fbf, &mut rng)?;
        worst = worst.max(dev);
        if pfb_ready(spec) {
            let (dev, pfb_msgs) = fidelity_one(name, spec, StepMode::Pfb, &mut rng)?;
            worst = worst.max(dev);
            let (rf, rp) = (full_round_equivalents(spec, StepMode::Fbf), full_round_equivalents(spec, StepMode::Pfb));
            ensure(fbf_msgs > pfb_msgs && rf > rp, || {
                format!("{name}: FBF {fbf_msgs} messages ({rf} rounds) vs pFB {pfb_msgs} ({rp})")
            })?;
            pairs += 1;
        }
    }
    Ok(format!(
        "{} games × 100 iterations, worst deviation {worst:.1e}, zero locality violations, counts match closed form, FBF > pFB rounds on {pairs} affine games",
        games.len()
    ))
}

fn c9_gradient_checks() -> Outcome {
    let mut specs: Vec<(String, Arc<GameSpec>)> = small_games();
    let seq: GameSequence = load_scenario(fixture("drifting_projection.json")).map_err(e2s)?;
    specs.push(("drifting_projection.json t=200".into(), seq.instance(seq.len() - 1).clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    specs.push(("random projection game".into(), Arc::new(random_projection_game(&mut rng))));
    let net = load_network(fixture("ieee13.json")).map_err(e2s)?;
    specs.push(("ieee13 day-ahead".into(), Arc::new(build_day_ahead(&net).map_err(e2s)?.spec)));
    let rt = real_time(&net)?;
    let peak_t = rt.peak.iter().position(|w| w.iter().any(|&p| p)).unwrap_or(0);
    specs.push(("ieee13 real-time t=1".into(), rt.sequence.instance(0).clone()));
    specs.push((format!("ieee13 real-time t={}", peak_t + 1), rt.sequence.instance(peak_t).clone()));

    let mut worst = 0.0f64;
    let mut n = 0;
    for (name, spec) in &specs {
        let mut checks: Vec<ProbeCheck> = vec![cost_gradient_check(spec, 100, 90, 1e-5)];
        if let Some(phi) = spec.selection() {
            checks.push(selection_gradient_check(spec, phi, 100, 91, 1e-5));
        }
        for c in checks {
            ensure(c.pass && c.probes == 100 && c.skipped == 0, || {
                format!("{name}: {} worst {:.2e} over {} probes ({} skipped)", c.name, c.worst, c.probes, c.skipped)
            })?;
            worst = worst.max(c.worst);
            n += 1;
        }
    }
    Ok(format!("{n} oracle checks on {} games, 100 probes each, worst relative error {worst:.1e}", specs.len()))
}

fn c10_schedule_gate() -> Outcome {
    for p in [0.5, 1.1] {
        ensure(BetaSchedule::power(1.0, p).is_err(), || format!("p = {p} accepted"))?;
    }
    for p in [0.51, 0.75, 1.0] {
        ensure(BetaSchedule::power(1.0, p).is_ok(), || format!("p = {p} rejected"))?;
    }
    Ok("p = 0.5, 1.1 rejected; p = 0.51, 0.75, 1.0 accepted".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", c1_oracle_equivalence),
        ("singleton consistency", c2_singleton_consistency),
        ("Fejér / quasi-nonexpansiveness", c3_fejer),
        ("zero–fixed-point equivalence", c4_zero_fixed_point),
        ("τ(β) and bound formulas", c5_tau_and_bound),
        ("online contraction", c6_online_contraction),
        ("market trends", c7_market_trends),
        ("distributed fidelity", c8_distributed_fidelity),
        ("gradient checks", c9_gradient_checks),
        ("schedule gate", c10_schedule_gate),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS {name} [{secs:.1}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} [{secs:.1}s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
