use std::cell::RefCell;
use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::lipschitz::{dense_linear, linear_apply};
use super::*;
use crate::game::{kkt_residual, parse_game};

fn two_agent_game() -> GameSpec {
    // f_i = ½x_i² + 0.5 x_i x_j − x_i, shared constraint x_1 + x_2 ≤ 1
    parse_game(&json!({
        "m": 1,
        "agents": [
            {"dim": 1, "box": {"lo": [-2.0], "hi": [2.0]}, "g": {"kind": "affine", "A": [[1.0]], "b": [0.5]}},
            {"dim": 1, "box": {"lo": [-2.0], "hi": [2.0]}, "g": {"kind": "affine", "A": [[1.0]], "b": [0.5]}}
        ],
        "pseudogradient": {"M": [[1.0, 0.5], [0.5, 1.0]], "c": [-1.0, -1.5]},
        "graph": {"edges": [[1, 2]]},
        "cocoercivity": 0.5
    }))
    .unwrap()
}

fn ring_game() -> GameSpec {
    // 4 agents, 2-dim each, 2 coupling rows, ring graph with a chord
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 8;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        mat[(i, i)] = 2.0;
    }
    // couplings only between ring neighbours (agents 1-2, 2-3, 3-4, 4-1)
    for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
        for p in 0..2 {
            for q in 0..2 {
                let v: f64 = rng.gen_range(-0.4..0.4);
                mat[(2 * a + p, 2 * b + q)] = v;
                mat[(2 * b + q, 2 * a + p)] = -v;
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|r| mat.row(r).iter().copied().collect()).collect();
    let agents: Vec<_> = (0..4)
        .map(|i| {
            let a: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            json!({"dim": 2, "box": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
                   "g": {"kind": "affine", "A": a, "b": [0.1 * i as f64, 0.2]}})
        })
        .collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    parse_game(&json!({
        "m": 2, "agents": agents,
        "pseudogradient": {"M": rows, "c": c},
        "graph": {"edges": [[1, 2], [2, 3], [3, 4], [4, 1], [1, 3]]},
        "cocoercivity": 0.4
    }))
    .unwrap()
}

fn random_state(spec: &GameSpec, rng: &mut ChaCha8Rng, radius: f64) -> JointState {
    let len = spec.layout().len();
    let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-radius..radius)).collect();
    JointState::from_vec(spec.layout().clone(), v).unwrap()
}

fn diff(a: &JointState, b: &JointState) -> JointState {
    JointState::from_dvector(a.layout().clone(), a.vector() - b.vector()).unwrap()
}

fn picard(op: &dyn FixedPointOperator, tol: f64, max_iter: usize) -> JointState {
    let mut w = op.spec().initial_state();
    for _ in 0..max_iter {
        let next = op.apply(&w).unwrap();
        let r = (next.vector() - w.vector()).norm();
        w = next;
        if r <= tol {
            break;
        }
    }
    w
}

#[test]
fn consensus_lambda_gives_zero_laplacian_block() {
    let spec = ring_game();
    let mut w = spec.initial_state();
    for i in 0..4 {
        w.lambda_mut(i).copy_from_slice(&[0.7, 1.3]);
    }
    let b = apply_b(&spec, &w, SplitMode::General).unwrap();
    let s = JointState::from_dvector(spec.layout().clone(), b).unwrap();
    for i in 0..4 {
        assert_eq!(s.lambda(i), &[0.0, 0.0]);
        assert_eq!(s.nu(i), &[0.0, 0.0]);
    }
}

#[test]
fn identity_pseudogradient_block() {
    let c = [0.25, -1.0];
    let spec = parse_game(&json!({
        "m": 0,
        "agents": [{"dim": 1, "box": {"lo": [-5.0], "hi": [5.0]}}, {"dim": 1, "box": {"lo": [-5.0], "hi": [5.0]}}],
        "pseudogradient": {"M": [[1.0, 0.0], [0.0, 1.0]], "c": c},
        "graph": {"edges": [[1, 2]]}
    }))
    .unwrap();
    let mut w = spec.initial_state();
    w.x_mut().copy_from_slice(&[1.0, 1.0]);
    let b = apply_b(&spec, &w, SplitMode::General).unwrap();
    assert_eq!(b.as_slice(), &[1.25, 0.0]);
}

#[test]
fn path_laplacian_block() {
    let spec = two_agent_game();
    let mut w = spec.initial_state();
    w.lambda_mut(0)[0] = 1.0;
    let b = apply_b(&spec, &w, SplitMode::General).unwrap();
    let s = JointState::from_dvector(spec.layout().clone(), b).unwrap();
    assert_eq!((s.lambda(0)[0], s.lambda(1)[0]), (1.0, -1.0));
}

#[test]
fn c_primal_block_vanishes_at_zero_dual() {
    let spec = ring_game();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w = random_state(&spec, &mut rng, 3.0);
    for i in 0..4 {
        w.lambda_mut(i).iter_mut().for_each(|t| *t = 0.0);
    }
    let c = apply_c(&spec, &w, SplitMode::General).unwrap();
    assert!(c.as_slice()[..8].iter().all(|&v| v == 0.0));
}

#[test]
fn c_dual_block_at_origin_is_b() {
    let spec = ring_game();
    let w = JointState::zeros(spec.layout().clone());
    let c = apply_c(&spec, &w, SplitMode::General).unwrap();
    let s = JointState::from_dvector(spec.layout().clone(), c.clone()).unwrap();
    for i in 0..4 {
        assert_eq!(s.lambda(i), spec.agent(i).g.offset());
    }
    // affine mode moves b into ℬ
    let ca = apply_c(&spec, &w, SplitMode::Affine).unwrap();
    assert!(ca.iter().all(|&v| v == 0.0));
    let ba = apply_b(&spec, &w, SplitMode::Affine).unwrap();
    let bg = apply_b(&spec, &w, SplitMode::General).unwrap();
    assert_eq!((&ba + &ca).as_slice(), (&bg + &c).as_slice());
}

#[test]
fn affine_mode_rejects_nonlinear_constraints() {
    let spec = parse_game(&json!({
        "m": 1,
        "agents": [{"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}, "g": {"kind": "quad", "D": [[1.0]], "b": [0.5]}}]
    }))
    .unwrap();
    let w = spec.initial_state();
    assert!(matches!(apply_c(&spec, &w, SplitMode::Affine), Err(GneError::NotAffine { agent: 0 })));
    assert!(apply_c(&spec, &w, SplitMode::General).is_ok());
}

#[test]
fn c_is_monotone_on_random_pairs() {
    let spec = ring_game();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let mut a = random_state(&spec, &mut rng, 5.0);
        let mut b = random_state(&spec, &mut rng, 5.0);
        for i in 0..4 {
            a.lambda_mut(i).iter_mut().for_each(|t| *t = t.abs());
            b.lambda_mut(i).iter_mut().for_each(|t| *t = t.abs());
        }
        let ca = apply_c(&spec, &a, SplitMode::Affine).unwrap();
        let cb = apply_c(&spec, &b, SplitMode::Affine).unwrap();
        let ip = (ca - cb).dot(&(a.vector() - b.vector()));
        assert!(ip >= -1e-10, "{ip}");
    }
}

#[test]
fn dimension_mismatch() {
    let spec = ring_game();
    let other = two_agent_game();
    let w = other.initial_state();
    assert!(matches!(apply_bc(&spec, &w), Err(GneError::DimensionMismatch { .. })));
}

#[test]
fn resolvent_examples() {
    let spec = parse_game(&json!({
        "m": 2,
        "agents": [
            {"dim": 1, "box": {"lo": [-10.0], "hi": [10.0]}, "ell": {"kind": "l1", "weights": [0.5]}},
            {"dim": 1, "box": {"lo": [-10.0], "hi": [10.0]}}
        ],
        "graph": {"edges": [[1, 2]]}
    }))
    .unwrap();
    let lip = LipschitzEstimate::declared(0.5, 0.0);
    let steps = make_stepsizes(&spec, &lip, StepMode::Fbf, None).unwrap();
    assert!((steps.rho[0] - 1.98).abs() < 1e-15);
    let mut v = spec.initial_state();
    v.lambda_mut(0).copy_from_slice(&[-1.0, 2.0]);
    v.nu_mut(1).copy_from_slice(&[-3.0, 4.0]);
    v.x_mut().copy_from_slice(&[3.0, 7.5]);
    let mut steps = steps;
    steps.rho[0] = 2.0; // ρ w = 1
    let out = resolvent_a(&spec, &steps, &v).unwrap();
    assert_eq!(out.lambda(0), &[0.0, 2.0]);
    assert_eq!(out.nu(1), &[-3.0, 4.0]);
    assert_eq!(out.x_block(1), &[7.5]);
    assert!((out.x_block(0)[0] - 2.0).abs() < 1e-15);
}

#[test]
fn fbf_is_identity_where_tilde_equals_omega() {
    // zero operator on an interior point: ω̃ = ω so ω_out = ω
    let spec = parse_game(&json!({
        "m": 0,
        "agents": [{"dim": 2, "box": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}}]
    }))
    .unwrap();
    let lip = estimate_lipschitz(&spec).unwrap();
    let steps = make_stepsizes(&spec, &lip, StepMode::Fbf, None).unwrap();
    let mut w = spec.initial_state();
    w.x_mut().copy_from_slice(&[0.3, -0.2]);
    let (out, tilde) = t_fbf(&spec, &steps, &w).unwrap();
    assert_eq!(tilde.as_slice(), w.as_slice());
    assert_eq!(out.as_slice(), w.as_slice());
}

#[test]
fn fbf_and_pfb_fixed_points() {
    let spec = Arc::new(two_agent_game());
    let fbf = FbfOperator::new(spec.clone()).unwrap();
    let pfb = PfbOperator::new(spec.clone(), None).unwrap();
    for op in [&fbf as &dyn FixedPointOperator, &pfb] {
        let star = picard(op, 1e-14, 1_000_000);
        let out = op.apply(&star).unwrap();
        assert!((out.vector() - star.vector()).norm() <= 1e-8, "{}", op.name());
        let lam = star.lambda_mean();
        assert!(kkt_residual(&spec, star.x(), &lam).unwrap() <= 1e-6, "{}", op.name());
        assert!(star.dual_disagreement() <= 1e-6);
    }
}

#[test]
fn pfb_dual_stays_zero_without_input() {
    let spec = parse_game(&json!({
        "m": 1,
        "agents": [
            {"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}, "g": {"kind": "affine", "A": [[1.0]], "b": [0.0]}},
            {"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}, "g": {"kind": "affine", "A": [[1.0]], "b": [0.0]}}
        ],
        "graph": {"edges": [[1, 2]]},
        "cocoercivity": 1.0
    }))
    .unwrap();
    let steps = make_stepsizes(&spec, &LipschitzEstimate::declared(1.0, 0.0), StepMode::Pfb, None).unwrap();
    let w = JointState::zeros(spec.layout().clone());
    let out = t_pfb(&spec, &steps, &w).unwrap();
    assert_eq!(out.lambda(0), &[0.0]);
    assert_eq!(out.lambda(1), &[0.0]);
}

#[test]
fn pure_consensus_lipschitz_is_golden_ratio_times_lambda_max() {
    let spec = parse_game(&json!({
        "m": 1,
        "agents": (0..4).map(|_| json!({"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}})).collect::<Vec<_>>(),
        "graph": {"edges": [[1, 2], [2, 3], [3, 4]]}
    }))
    .unwrap();
    let lip = estimate_lipschitz(&spec).unwrap();
    assert_eq!(lip.method, LipschitzMethod::ExactAffine);
    // independent oracle: the (λ, ν) part is [[L, −L], [L, 0]] ⊗ I_m
    let l = spec.graph().laplacian();
    let mut big = DMatrix::zeros(8, 8);
    big.view_mut((0, 0), (4, 4)).copy_from(&l);
    big.view_mut((0, 4), (4, 4)).copy_from(&(-&l));
    big.view_mut((4, 0), (4, 4)).copy_from(&l);
    let oracle = big.singular_values().max();
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    assert!((lip.l_b - oracle).abs() <= 1e-8);
    assert!((lip.l_b - golden * spec.graph().lambda_max()).abs() <= 1e-8);
}

#[test]
fn decoupled_identity_lipschitz_is_one() {
    let spec = parse_game(&json!({
        "m": 0,
        "agents": [{"dim": 2, "box": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}}, {"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}}],
        "pseudogradient": {"M": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]},
        "graph": {"edges": [[1, 2]]}
    }))
    .unwrap();
    let lip = estimate_lipschitz(&spec).unwrap();
    assert!((lip.l_b - 1.0).abs() < 1e-12);
    assert!((lip.l_f - 1.0).abs() < 1e-12);
}

#[test]
fn declared_lipschitz_passes_through() {
    let spec = parse_game(&json!({
        "m": 0,
        "agents": [{"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}}],
        "lipschitz_b": 42.0
    }))
    .unwrap();
    let lip = estimate_lipschitz(&spec).unwrap();
    assert_eq!((lip.l_b, lip.method), (42.0, LipschitzMethod::Declared));
}

#[test]
fn transpose_is_adjoint_of_linear_part() {
    let spec = ring_game();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let len = spec.layout().len();
    let dense = dense_linear(&spec);
    for _ in 0..5 {
        let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mu, mtu) = linear_apply(&spec, &u);
        let uv = nalgebra::DVector::from_vec(u);
        assert!((&dense * &uv - nalgebra::DVector::from_vec(mu)).norm() < 1e-12);
        assert!((dense.transpose() * &uv - nalgebra::DVector::from_vec(mtu)).norm() < 1e-12);
    }
}

#[test]
fn exact_affine_matches_apply_bc_differences() {
    let spec = ring_game();
    let lip = estimate_lipschitz(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let a = random_state(&spec, &mut rng, 4.0);
        let b = random_state(&spec, &mut rng, 4.0);
        let r = (apply_bc(&spec, &a).unwrap() - apply_bc(&spec, &b).unwrap()).norm() / (a.vector() - b.vector()).norm();
        assert!(r <= lip.l_b * (1.0 + 1e-12));
    }
}

#[test]
fn fbf_step_formula() {
    let spec = two_agent_game();
    let steps = make_stepsizes(&spec, &LipschitzEstimate::declared(10.0, 1.0), StepMode::Fbf, None).unwrap();
    for v in steps.rho.iter().chain(&steps.tau).chain(&steps.sigma) {
        assert!((v - 0.099).abs() < 1e-15);
    }
}

#[test]
fn pfb_tau_formula() {
    // agent 1 has two neighbours and A with max row sum 3
    let spec = parse_game(&json!({
        "m": 2,
        "agents": [
            {"dim": 2, "box": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]}, "g": {"kind": "affine", "A": [[1.0, -2.0], [0.5, 0.5]], "b": [0.0, 0.0]}},
            {"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}},
            {"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}}
        ],
        "graph": {"edges": [[1, 2], [1, 3]]},
        "cocoercivity": 1.0
    }))
    .unwrap();
    let lip = LipschitzEstimate::declared(1.0, 1.0);
    let steps = make_stepsizes(&spec, &lip, StepMode::Pfb, Some(5.0)).unwrap();
    assert!((steps.tau[0] - 0.99 / (3.0 + 4.0 + 5.0)).abs() < 1e-15);
    assert!((steps.sigma[0] - 0.99 / (4.0 + 5.0)).abs() < 1e-15);
    // max column sum is 2.5
    assert!((steps.rho[0] - 0.99 / (2.5 + 5.0)).abs() < 1e-15);
    // δ must exceed 1/min(1, 1/4) = 4
    assert!(matches!(
        make_stepsizes(&spec, &lip, StepMode::Pfb, Some(3.9)),
        Err(GneError::StepSizeViolation(_))
    ));
}

#[test]
fn pfb_default_delta() {
    let spec = parse_game(&json!({
        "m": 1,
        "agents": (0..3).map(|_| json!({"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}})).collect::<Vec<_>>(),
        "graph": {"edges": [[1, 2], [2, 3]]},
        "cocoercivity": 0.5
    }))
    .unwrap();
    let steps = make_stepsizes(&spec, &LipschitzEstimate::declared(1.0, 1.0), StepMode::Pfb, None).unwrap();
    assert!((steps.delta.unwrap() - 4.04).abs() < 1e-12);
}

#[test]
fn pfb_needs_cocoercivity() {
    let spec = parse_game(&json!({
        "m": 0,
        "agents": [{"dim": 1, "box": {"lo": [0.0], "hi": [1.0]}}]
    }))
    .unwrap();
    let r = make_stepsizes(&spec, &LipschitzEstimate::declared(1.0, 1.0), StepMode::Pfb, None);
    assert!(matches!(r, Err(GneError::MissingCocoercivity)));
}

#[test]
fn oversized_steps_rejected() {
    let spec = two_agent_game();
    let lip = LipschitzEstimate::declared(10.0, 1.0);
    assert!(StepSizes::uniform(&spec, &lip, StepMode::Fbf, 0.2, None).is_err());
    let ok = StepSizes::uniform(&spec, &lip, StepMode::Fbf, 0.05, None).unwrap();
    assert!(t_fbf(&spec, &ok, &spec.initial_state()).is_ok());
    let mut bad = ok.clone();
    bad.tau[1] = 0.5;
    assert!(matches!(t_fbf(&spec, &bad, &spec.initial_state()), Err(GneError::StepSizeViolation(_))));
}

#[test]
fn phi_norm_is_positive_definite() {
    let spec = ring_game();
    let op = PfbOperator::new(Arc::new(spec.clone()), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let v = random_state(&spec, &mut rng, 1.0);
        assert!(op.norm_sq(&v) > 0.0);
    }
}

#[test]
fn quasi_nonexpansive_on_random_points() {
    let spec = Arc::new(ring_game());
    let fbf = FbfOperator::new(spec.clone()).unwrap();
    let pfb = PfbOperator::new(spec.clone(), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for op in [&fbf as &dyn FixedPointOperator, &pfb] {
        let star = picard(op, 1e-13, 2_000_000);
        assert!((op.apply(&star).unwrap().vector() - star.vector()).norm() <= 1e-10);
        for _ in 0..1000 {
            let w = random_state(&spec, &mut rng, 10.0);
            let after = op.norm(&diff(&op.apply(&w).unwrap(), &star));
            let before = op.norm(&diff(&w, &star));
            assert!(after <= before + 1e-9, "{}: {after} > {before}", op.name());
        }
    }
}

#[test]
fn tseng_decrease_holds() {
    // ‖ω_out − ω*‖²_Ψ ≤ ‖ω − ω*‖²_Ψ − (1 − (L_B/μ_min(Ψ))²)‖ω̃ − ω‖²_Ψ
    let spec = Arc::new(ring_game());
    let fbf = FbfOperator::new(spec.clone()).unwrap();
    let star = picard(&fbf, 1e-13, 2_000_000);
    let c = fbf.lipschitz().l_b / fbf.steps().min_psi();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let w = random_state(&spec, &mut rng, 10.0);
        let (out, tilde) = fbf.apply_with_tilde(&w).unwrap();
        let lhs = fbf.norm_sq(&diff(&out, &star));
        let rhs = fbf.norm_sq(&diff(&w, &star)) - (1.0 - c * c) * fbf.norm_sq(&diff(&tilde, &w));
        assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }
}

struct RecordingView<'a> {
    inner: &'a JointState,
    reads: RefCell<BTreeSet<usize>>,
}

impl AgentView for RecordingView<'_> {
    fn x(&self, j: usize) -> &[f64] {
        self.reads.borrow_mut().insert(j);
        self.inner.x_block(j)
    }
    fn lambda(&self, j: usize) -> &[f64] {
        self.reads.borrow_mut().insert(j);
        self.inner.lambda(j)
    }
    fn nu(&self, j: usize) -> &[f64] {
        self.reads.borrow_mut().insert(j);
        self.inner.nu(j)
    }
}

#[test]
fn agent_blocks_read_only_neighbours() {
    let spec = ring_game();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_state(&spec, &mut rng, 1.0);
    let full = apply_bc(&spec, &w).unwrap();
    let layout = spec.layout();
    for i in 0..spec.n_agents() {
        let view = RecordingView { inner: &w, reads: RefCell::new(BTreeSet::new()) };
        let mut out = vec![0.0; layout.dim(i) + 2 * spec.m()];
        bc_block(&spec, i, &view, &mut out);
        let mut allowed: BTreeSet<usize> = spec.graph().neighbors(i).iter().copied().collect();
        allowed.insert(i);
        assert!(view.reads.borrow().is_subset(&allowed));
        assert_eq!(&out[..layout.dim(i)], &full.as_slice()[layout.x_range(i)]);
    }
}

#[test]
fn operators_are_deterministic() {
    let spec = Arc::new(ring_game());
    let fbf = FbfOperator::new(spec.clone()).unwrap();
    let pfb = PfbOperator::new(spec.clone(), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = random_state(&spec, &mut rng, 2.0);
    for op in [&fbf as &dyn FixedPointOperator, &pfb] {
        let a = op.apply(&w).unwrap();
        let b = op.apply(&w).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
}

#[test]
fn nonlinear_constraints_use_bound_and_refresh() {
    let spec = Arc::new(
        parse_game(&json!({
            "m": 1,
            "agents": [
                {"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}, "g": {"kind": "quad", "D": [[1.0]], "a": [[0.5]], "b": [0.2]}},
                {"dim": 1, "box": {"lo": [-1.0], "hi": [1.0]}, "g": {"kind": "quad", "D": [[2.0]], "b": [0.2]}}
            ],
            "pseudogradient": {"M": [[1.0, 0.0], [0.0, 1.0]], "c": [-3.0, 3.0]},
            "graph": {"edges": [[1, 2]]}
        }))
        .unwrap(),
    );
    let mut op = FbfOperator::new(spec.clone()).unwrap();
    assert_eq!(op.lipschitz().method, LipschitzMethod::Bound);
    let before = op.lipschitz().l_b;
    let mut w = spec.initial_state();
    w.lambda_mut(0)[0] = 1e3;
    assert!(op.refresh(&w).unwrap());
    assert!(op.lipschitz().l_b > before);
    assert!(op.steps().rho[0] < 0.99 / before);
    // the Picard limit is a KKT point
    let star = picard(&op, 1e-13, 2_000_000);
    assert!(kkt_residual(&spec, star.x(), &star.lambda_mean()).unwrap() <= 1e-6);
}
