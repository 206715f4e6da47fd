//! Sampled checks of the oracles a game declares: gradients against central differences,
//! the selection constants σ and L_φ, and cocoercivity of F.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{GameSpec, SelectionFunction, StackedBlocks};
use crate::linalg;

/// Up to this many coordinates, gradients are checked coordinate by coordinate;
/// larger blocks are checked along random directions.
pub const COORDINATE_CHECK_MAX: usize = 64;

/// Relative step of the central differences.
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct ProbeCheck {
    pub name: String,
    pub probes: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Pass threshold on `worst`.
    pub tol: f64,
    pub pass: bool,
    /// Inputs that were not checkable (no value oracle).
    pub skipped: usize,
}

/// A random joint state: x around the local boxes, λ ≥ 0, ν free.
pub fn sample_state(spec: &GameSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let layout = spec.layout();
    let (lo, hi) = spec.primal_bounds();
    let mut w = Vec::with_capacity(layout.len());
    for k in 0..layout.n() {
        let pad = 0.1 * (hi[k] - lo[k]).max(1.0);
        w.push(rng.gen_range(lo[k] - pad..hi[k] + pad));
    }
    for _ in layout.lambda_all() {
        w.push(rng.gen_range(0.0..2.0));
    }
    for _ in layout.nu_all() {
        w.push(rng.gen_range(-1.0..1.0));
    }
    w
}

fn unit_direction(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut d: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = linalg::norm(&d).max(f64::MIN_POSITIVE);
    d.iter_mut().for_each(|v| *v /= n);
    d
}

/// Relative disagreement between a central difference of `f` at `w` and the analytic
/// gradient `g`, over the coordinates `range` (or one random direction when the range
/// is long).
fn fd_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    w: &[f64],
    g: &[f64],
    range: std::ops::Range<usize>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let scale = w[range.clone()].iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let h = FD_STEP * scale;
    let mut p = w.to_vec();
    if range.len() <= COORDINATE_CHECK_MAX {
        let mut err: f64 = 0.0;
        let gmax = g[range.clone()].iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for k in range {
            p[k] = w[k] + h;
            let up = f(&p);
            p[k] = w[k] - h;
            let down = f(&p);
            p[k] = w[k];
            err = err.max(((up - down) / (2.0 * h) - g[k]).abs() / gmax);
        }
        err
    } else {
        let d = unit_direction(range.len(), rng);
        let gd: f64 = d.iter().zip(&g[range.clone()]).map(|(a, b)| a * b).sum();
        for (k, dk) in range.clone().zip(&d) {
            p[k] = w[k] + h * dk;
        }
        let up = f(&p);
        for (k, dk) in range.zip(&d) {
            p[k] = w[k] - h * dk;
        }
        let down = f(&p);
        ((up - down) / (2.0 * h) - gd).abs() / gd.abs().max(1.0)
    }
}

/// ∇φ against central differences of φ on `probes` random states.
pub fn selection_gradient_check(spec: &GameSpec, phi: &SelectionFunction, probes: usize, seed: u64, tol: f64) -> ProbeCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = spec.layout().len();
    let mut g = vec![0.0; len];
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let w = sample_state(spec, &mut rng);
        phi.gradient(&w, &mut g);
        worst = worst.max(fd_error(&mut |p| phi.value(p), &w, &g, 0..len, &mut rng));
    }
    ProbeCheck { name: "selection gradient".into(), probes, worst, tol, pass: worst <= tol, skipped: 0 }
}

/// ∇_{x_i} f_i (the pseudogradient block) against central differences of f_i in x_i.
pub fn cost_gradient_check(spec: &GameSpec, probes: usize, seed: u64, tol: f64) -> ProbeCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout().clone();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..probes {
        let w = sample_state(spec, &mut rng);
        let x = &w[..layout.n()];
        let grad = spec.pseudogradient(x);
        for i in 0..spec.n_agents() {
            let cost = &spec.agent(i).cost;
            let r = layout.x_range(i);
            if cost.value(i, &StackedBlocks { x, layout: &layout }).is_none() {
                skipped += 1;
                continue;
            }
            let mut f = |p: &[f64]| cost.value(i, &StackedBlocks { x: p, layout: &layout }).unwrap_or(f64::NAN);
            worst = worst.max(fd_error(&mut f, x, &grad, r, &mut rng));
        }
    }
    ProbeCheck { name: "cost gradients".into(), probes, worst, tol, pass: worst <= tol, skipped }
}

/// Sampled check of the declared σ and L_φ: returns (strong convexity, gradient Lipschitz).
/// The strong convexity entry reports the worst of ⟨∇φ(u)−∇φ(v), u−v⟩/‖u−v‖² − σ
/// (pass when ≥ −tol); the Lipschitz entry reports the worst ratio
/// ‖∇φ(u)−∇φ(v)‖ / (L_φ‖u−v‖) − 1 (pass when ≤ tol).
pub fn selection_constants_check(
    spec: &GameSpec,
    phi: &SelectionFunction,
    pairs: usize,
    seed: u64,
    tol: f64,
) -> (ProbeCheck, ProbeCheck) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = spec.layout().len();
    let (mut gu, mut gv) = (vec![0.0; len], vec![0.0; len]);
    let mut conv = f64::INFINITY;
    let mut lip = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let u = sample_state(spec, &mut rng);
        let v = sample_state(spec, &mut rng);
        phi.gradient(&u, &mut gu);
        phi.gradient(&v, &mut gv);
        let d: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gu.iter().zip(&gv).map(|(a, b)| a - b).collect();
        let dd = linalg::dot(&d, &d).max(f64::MIN_POSITIVE);
        let scale = phi.sigma().max(1.0);
        conv = conv.min((linalg::dot(&dg, &d) / dd - phi.sigma()) / scale);
        lip = lip.max(linalg::norm(&dg) / (phi.lipschitz() * dd.sqrt()) - 1.0);
    }
    (
        ProbeCheck { name: "selection strong convexity".into(), probes: pairs, worst: conv, tol, pass: conv >= -tol, skipped: 0 },
        ProbeCheck { name: "selection gradient lipschitz".into(), probes: pairs, worst: lip, tol, pass: lip <= tol, skipped: 0 },
    )
}

/// Worst of (⟨F(u)−F(v), u−v⟩ − η‖F(u)−F(v)‖²)/‖u−v‖² over sampled pairs; pass when ≥ −tol.
pub fn cocoercivity_probe(spec: &GameSpec, eta: f64, pairs: usize, seed: u64, tol: f64) -> ProbeCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.layout().n();
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let u = sample_state(spec, &mut rng);
        let v = sample_state(spec, &mut rng);
        let fu = spec.pseudogradient(&u[..n]);
        let fv = spec.pseudogradient(&v[..n]);
        let d: Vec<f64> = u[..n].iter().zip(&v[..n]).map(|(a, b)| a - b).collect();
        let df: Vec<f64> = fu.iter().zip(&fv).map(|(a, b)| a - b).collect();
        let dd = linalg::dot(&d, &d).max(f64::MIN_POSITIVE);
        worst = worst.min((linalg::dot(&df, &d) - eta * linalg::dot(&df, &df)) / dd);
    }
    ProbeCheck { name: "cocoercivity".into(), probes: pairs, worst, tol, pass: worst >= -tol, skipped: 0 }
}
