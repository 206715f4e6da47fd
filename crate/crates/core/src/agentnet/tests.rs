use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;
use crate::game::{parse_game, SelectionFunction, SelectionRow};
use crate::operators::{estimate_lipschitz, make_stepsizes, FixedPointOperator, PfbOperator};

/// Path of 4 agents, agent 1 and 3 also linked; costs couple path neighbours only, so
/// N_i^J is a strict subset of N_i^λ for some agents.
fn path_game(quad_g: bool) -> GameSpec {
    let n = 4;
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.5;
    }
    for (a, b, v) in [(0, 1, 0.3), (1, 2, -0.2), (2, 3, 0.4)] {
        m[a][b] = v;
        m[b][a] = -v;
    }
    let g = |i: usize| {
        if quad_g {
            json!({"kind": "quad", "D": [[0.5], [0.0]], "A": [[1.0], [0.5 - 0.2 * i as f64]], "b": [0.3, 0.1]})
        } else {
            json!({"kind": "affine", "A": [[1.0], [0.5 - 0.2 * i as f64]], "b": [0.3, 0.1]})
        }
    };
    let agents: Vec<_> = (0..n)
        .map(|i| json!({"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}, "g": g(i), "ell": {"kind": "l1", "weights": [0.05]}}))
        .collect();
    parse_game(&json!({
        "m": 2,
        "agents": agents,
        "pseudogradient": {"M": m, "c": [-1.0, 0.5, -0.3, 0.8]},
        "graph": {"edges": [[1, 2], [2, 3], [3, 4], [1, 3]]},
        "cocoercivity": 0.5,
        "selection": {"kind": "projection", "x_ref": [0.2, 0.2, 0.2, 0.2], "dual_weight": 0.1}
    }))
    .unwrap()
}

/// φ coupling agents 1 and 2 through one row, so it is not separable.
fn coupled_selection(spec: &GameSpec) -> SelectionFunction {
    let rows = vec![
        SelectionRow { idx: vec![0, 1], coef: vec![1.0, -1.0], target: 0.0, weight: 1.0 },
        SelectionRow::unit(2, 0.5, 1.0),
    ];
    SelectionFunction::quadratic(rows, spec.layout(), None, None).unwrap()
}

fn start(spec: &GameSpec, seed: u64) -> JointState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..spec.layout().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut w = JointState::from_vec(spec.layout().clone(), v).unwrap();
    for i in 0..spec.n_agents() {
        w.lambda_mut(i).iter_mut().for_each(|l| *l = l.abs());
    }
    w
}

fn fbf_steps(spec: &GameSpec) -> StepSizes {
    let lip = estimate_lipschitz(spec).unwrap();
    make_stepsizes(spec, &lip, StepMode::Fbf, None).unwrap()
}

#[test]
fn fbf_network_reproduces_operator_bitwise() {
    for quad in [false, true] {
        let spec = Arc::new(path_game(quad));
        let steps = fbf_steps(&spec);
        let w = start(&spec, 1);
        let sched = BetaSchedule::power(0.5, 0.51).unwrap();
        assert_eq!(equivalence_check(spec.clone(), &steps, &w, 100, Some(sched)).unwrap(), 0.0);
        assert_eq!(equivalence_check(spec, &steps, &w, 100, None).unwrap(), 0.0);
    }
}

#[test]
fn pfb_network_reproduces_operator_bitwise() {
    let spec = Arc::new(path_game(false));
    let steps = PfbOperator::new(spec.clone(), None).unwrap().steps().clone();
    let w = start(&spec, 2);
    let sched = BetaSchedule::power(0.5, 0.75).unwrap();
    assert_eq!(equivalence_check(spec.clone(), &steps, &w, 100, Some(sched)).unwrap(), 0.0);
    assert_eq!(equivalence_check(spec, &steps, &w, 100, None).unwrap(), 0.0);
}

#[test]
fn pfb_rejects_nonlinear_constraints() {
    let spec = Arc::new(path_game(false));
    let steps = PfbOperator::new(spec.clone(), None).unwrap().steps().clone();
    let quad = Arc::new(path_game(true));
    let w = quad.initial_state();
    assert!(matches!(Network::new(quad, steps, &w, NetConfig::default()), Err(GneError::NotAffine { .. })));
}

#[test]
fn coordinator_path_for_nonseparable_selection() {
    let base = path_game(false);
    let spec = Arc::new(base.with_selection(coupled_selection(&base)));
    let steps = fbf_steps(&spec);
    let w = start(&spec, 3);
    let sched = BetaSchedule::power(0.3, 0.6).unwrap();
    assert_eq!(equivalence_check(spec.clone(), &steps, &w, 50, Some(sched)).unwrap(), 0.0);

    let cfg = NetConfig { schedule: Some(sched), ..NetConfig::default() };
    let mut net = Network::new(spec.clone(), steps, &w, cfg).unwrap();
    for _ in 0..5 {
        net.outer_iteration().unwrap();
    }
    let want = expected_messages(&spec, StepMode::Fbf, true);
    for r in net.per_round() {
        assert_eq!((r.agent, r.coordinator), (want.agent, want.coordinator));
        assert_eq!(r.coordinator, 2 * spec.n_agents());
    }
    assert_eq!(net.coordinator_calls(), 5);
    assert_eq!(net.violations(), 0);
}

#[test]
fn separable_selection_skips_coordinator() {
    let spec = Arc::new(path_game(false));
    assert!(spec.selection().unwrap().is_separable());
    let steps = fbf_steps(&spec);
    let cfg = NetConfig { schedule: Some(BetaSchedule::power(0.3, 0.6).unwrap()), ..NetConfig::default() };
    let mut net = Network::new(spec.clone(), steps.clone(), &spec.initial_state(), cfg).unwrap();
    net.outer_iteration().unwrap();
    assert_eq!(net.counts().coordinator, 0);
    assert_eq!(net.coordinator_calls(), 0);

    // same trajectory when the coordinator is forced in
    let sched = BetaSchedule::power(0.3, 0.6).unwrap();
    let mut a = Network::new(spec.clone(), steps.clone(), &spec.initial_state(), NetConfig { schedule: Some(sched), ..NetConfig::default() }).unwrap();
    let mut b = Network::new(
        spec.clone(),
        steps,
        &spec.initial_state(),
        NetConfig { schedule: Some(sched), force_coordinator: true, ..NetConfig::default() },
    )
    .unwrap();
    for _ in 0..20 {
        a.outer_iteration().unwrap();
        b.outer_iteration().unwrap();
    }
    assert_eq!(a.state().as_slice(), b.state().as_slice());
    assert_eq!(b.counts().coordinator, 20 * 2 * spec.n_agents());
}

#[test]
fn message_counts_match_closed_form() {
    let spec = Arc::new(path_game(false));
    // Σ|N^J| = 6 (path), Σ|N^λ| = 8
    let fbf = expected_messages(&spec, StepMode::Fbf, false);
    let pfb = expected_messages(&spec, StepMode::Pfb, false);
    assert_eq!(fbf.agent, 2 * (6 + 2 * 8));
    assert_eq!(pfb.agent, (6 + 2 * 8) + 8);
    assert!(pfb.agent < fbf.agent);
    assert_eq!(full_round_equivalents(&spec, StepMode::Fbf), 2.0);
    assert!(full_round_equivalents(&spec, StepMode::Pfb) < 2.0);

    for (mode, steps) in [
        (StepMode::Fbf, fbf_steps(&spec)),
        (StepMode::Pfb, PfbOperator::new(spec.clone(), None).unwrap().steps().clone()),
    ] {
        let mut net = Network::new(spec.clone(), steps, &spec.initial_state(), NetConfig::default()).unwrap();
        for _ in 0..3 {
            net.outer_iteration().unwrap();
        }
        let want = expected_messages(&spec, mode, false);
        assert!(net.per_round().iter().all(|r| r.agent == want.agent && r.coordinator == 0));
    }
}

#[test]
fn scheduling_order_and_threads_do_not_change_the_result() {
    let spec = Arc::new(path_game(true));
    let steps = fbf_steps(&spec);
    let w = start(&spec, 4);
    let sched = Some(BetaSchedule::power(0.5, 0.51).unwrap());
    let run = |cfg: NetConfig| {
        let mut net = Network::new(spec.clone(), steps.clone(), &w, cfg).unwrap();
        for _ in 0..30 {
            net.outer_iteration().unwrap();
        }
        net.state()
    };
    let reference = run(NetConfig { schedule: sched, ..NetConfig::default() });
    for seed in 0..5 {
        let s = run(NetConfig { schedule: sched, shuffle_seed: Some(seed), ..NetConfig::default() });
        assert_eq!(s.as_slice(), reference.as_slice());
    }
    let s = run(NetConfig { schedule: sched, threads: 3, shuffle_seed: Some(9), ..NetConfig::default() });
    assert_eq!(s.as_slice(), reference.as_slice());
}

#[test]
fn single_agent_network() {
    let spec = Arc::new(
        parse_game(&json!({
            "m": 1,
            "agents": [{"dim": 2, "box": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]}, "g": {"kind": "affine", "A": [[1.0, 1.0]], "b": [1.0]}}],
            "pseudogradient": {"M": [[1.0, 0.0], [0.0, 1.0]], "c": [-1.0, -1.0]},
            "cocoercivity": 1.0
        }))
        .unwrap(),
    );
    let steps = fbf_steps(&spec);
    assert_eq!(equivalence_check(spec.clone(), &steps, &spec.initial_state(), 20, None).unwrap(), 0.0);
    let mut net = Network::new(spec.clone(), steps, &spec.initial_state(), NetConfig::default()).unwrap();
    net.outer_iteration().unwrap();
    assert_eq!(net.counts().agent, 0);
}

#[test]
fn mailbox_refuses_non_neighbours() {
    let spec = path_game(false);
    let mut mb = Mailbox::new(&spec);
    // agents 1 and 4 (0 and 3) are not linked
    mb.deliver(1, 0, 3, BlockKind::X, vec![1.0]);
    assert!(matches!(mb.take(3, 1, 0, BlockKind::X), Err(GneError::LocalityViolation { agent: 3, block: 0 })));
    mb.deliver(1, 2, 3, BlockKind::Nu, vec![1.0, 2.0]);
    assert_eq!(mb.take(3, 1, 2, BlockKind::Nu).unwrap(), vec![1.0, 2.0]);
    assert!(mb.take(3, 1, 2, BlockKind::Nu).is_err());
}

#[test]
fn local_view_flags_reads_outside_received_blocks() {
    let recv = Received::default();
    let zeros = [0.0; 4];
    let own = [1.0];
    let view = LocalView { own: 0, x: &own, lambda: &own, nu: &own, recv: &recv, zeros: &zeros, violation: Cell::new(None) };
    assert_eq!(view.x(0), &own);
    assert!(view.violation.get().is_none());
    let _ = view.lambda(2);
    assert_eq!(view.violation.get(), Some(2));
}

#[test]
fn message_log_is_json_lines() {
    let spec = Arc::new(path_game(false));
    let base = path_game(false);
    let spec2 = Arc::new(base.with_selection(coupled_selection(&base)));
    let cfg = NetConfig {
        schedule: Some(BetaSchedule::power(0.3, 0.6).unwrap()),
        log_messages: true,
        ..NetConfig::default()
    };
    let mut net = Network::new(spec2.clone(), fbf_steps(&spec), &spec2.initial_state(), cfg).unwrap();
    net.outer_iteration().unwrap();
    let mut buf = Vec::new();
    net.write_log(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), net.counts().agent + net.counts().coordinator);
    assert!(lines.iter().all(|l| l["round"] == 1 && l["bytes"].as_u64().unwrap() % 8 == 0));
    assert!(lines.iter().any(|l| l["to"] == "coordinator"));
    let total: u64 = lines.iter().map(|l| l["bytes"].as_u64().unwrap()).sum();
    assert_eq!(total as usize, net.counts().bytes);
}
