//! Empirical shrinkage function D̂(r) of an operator around a sampled fixed-point set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GneError, Result};
use crate::game::JointState;
use crate::operators::FixedPointOperator;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShrinkageRow {
    pub r: f64,
    pub d_hat: f64,
    pub samples: usize,
}

fn sub(a: &JointState, b: &JointState) -> JointState {
    JointState::from_dvector(a.layout().clone(), a.vector() - b.vector()).expect("same layout")
}

/// Distance in the operator's norm to a cloud of fixed points: nearest point, refined by
/// projecting onto the segments between the `k` nearest ones.
pub fn cloud_distance(op: &dyn FixedPointOperator, cloud: &[JointState], w: &JointState, k: usize) -> f64 {
    let mut d: Vec<(f64, usize)> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| (op.norm_sq(&sub(w, p)), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = d.first().map(|v| v.0).unwrap_or(f64::INFINITY);
    let near: Vec<usize> = d.iter().take(k).map(|v| v.1).collect();
    for (a, &i) in near.iter().enumerate() {
        for &j in &near[a + 1..] {
            // min_t ‖w − p_i − t(p_j − p_i)‖² over t ∈ [0, 1], in the operator's inner product
            let e = sub(&cloud[j], &cloud[i]);
            let u = sub(w, &cloud[i]);
            let ee = op.norm_sq(&e);
            if ee <= 0.0 {
                continue;
            }
            let sum = JointState::from_dvector(w.layout().clone(), u.vector() + e.vector()).expect("layout");
            let dif = JointState::from_dvector(w.layout().clone(), u.vector() - e.vector()).expect("layout");
            let ue = 0.25 * (op.norm_sq(&sum) - op.norm_sq(&dif));
            let t = (ue / ee).clamp(0.0, 1.0);
            let p = JointState::from_dvector(w.layout().clone(), u.vector() - e.vector() * t).expect("layout");
            best = best.min(op.norm_sq(&p));
        }
    }
    best.max(0.0).sqrt()
}

/// For each r: min over samples ω in the ball with dist(ω) ≥ r of dist(ω) − dist(T(ω)).
/// `dist` is the distance to the (approximate) fixed-point set.
pub fn shrinkage_probe(
    op: &dyn FixedPointOperator,
    dist: &dyn Fn(&JointState) -> f64,
    center: &JointState,
    radius: f64,
    r_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ShrinkageRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = center.layout().len();
    let mut pairs = Vec::with_capacity(samples);
    for _ in 0..samples {
        // uniform in the Euclidean ball
        let mut dir: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nrm = crate::linalg::norm(&dir).max(f64::MIN_POSITIVE);
        let scale = radius * rng.gen::<f64>().powf(1.0 / len.max(1) as f64) / nrm;
        dir.iter_mut().zip(center.as_slice()).for_each(|(d, c)| *d = c + scale * *d);
        let w = JointState::from_vec(center.layout().clone(), dir)?;
        let tw = op.apply(&w)?;
        let dw = dist(&w);
        pairs.push((dw, dw - dist(&tw)));
    }
    let mut rows = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        if r == 0.0 {
            // D(0) = 0 by definition: points on the fixed-point set do not move
            rows.push(ShrinkageRow { r, d_hat: 0.0, samples: pairs.len() });
            continue;
        }
        let slice: Vec<f64> = pairs.iter().filter(|p| p.0 >= r).map(|p| p.1).collect();
        if slice.is_empty() {
            return Err(GneError::EmptySlice { r });
        }
        let d_hat = slice.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(ShrinkageRow { r, d_hat, samples: slice.len() });
    }
    Ok(rows)
}
