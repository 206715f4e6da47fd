use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{GneError, Result};

/// Block partition of ω = (x, λ, ν).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
    m: usize,
}

impl Layout {
    pub fn new(dims: Vec<usize>, m: usize) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        for d in &dims {
            offsets.push(acc);
            acc += d;
        }
        offsets.push(acc);
        Layout { dims, offsets, n: acc, m }
    }

    pub fn n_agents(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    /// Total primal dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Coupling dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    /// n_ω = n + 2Nm
    pub fn len(&self) -> usize {
        self.n + 2 * self.n_agents() * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn lambda_range(&self, i: usize) -> Range<usize> {
        let s = self.n + i * self.m;
        s..s + self.m
    }

    pub fn nu_range(&self, i: usize) -> Range<usize> {
        let s = self.n + (self.n_agents() + i) * self.m;
        s..s + self.m
    }

    pub fn lambda_all(&self) -> Range<usize> {
        self.n..self.n + self.n_agents() * self.m
    }

    pub fn nu_all(&self) -> Range<usize> {
        self.n + self.n_agents() * self.m..self.len()
    }

    /// Agent owning global index `g` of ω, if any.
    pub fn owner(&self, g: usize) -> Option<usize> {
        if g < self.n {
            // offsets is sorted; the owner is the last offset <= g
            let pos = self.offsets.partition_point(|&o| o <= g);
            return Some(pos - 1);
        }
        if self.m == 0 || g >= self.len() {
            return None;
        }
        let r = g - self.n;
        Some((r / self.m) % self.n_agents())
    }
}

/// Joint primal-dual iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    layout: Arc<Layout>,
    data: DVector<f64>,
}

impl JointState {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let len = layout.len();
        JointState {
            layout,
            data: DVector::zeros(len),
        }
    }

    pub fn from_vec(layout: Arc<Layout>, v: Vec<f64>) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(GneError::DimensionMismatch {
                expected: layout.len(),
                got: v.len(),
            });
        }
        Ok(JointState {
            layout,
            data: DVector::from_vec(v),
        })
    }

    pub fn from_dvector(layout: Arc<Layout>, v: DVector<f64>) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(GneError::DimensionMismatch {
                expected: layout.len(),
                got: v.len(),
            });
        }
        Ok(JointState { layout, data: v })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data.as_mut_slice()
    }

    pub fn x(&self) -> &[f64] {
        &self.data.as_slice()[..self.layout.n()]
    }

    pub fn x_mut(&mut self) -> &mut [f64] {
        let n = self.layout.n();
        &mut self.data.as_mut_slice()[..n]
    }

    pub fn x_block(&self, i: usize) -> &[f64] {
        &self.data.as_slice()[self.layout.x_range(i)]
    }

    pub fn lambda(&self, i: usize) -> &[f64] {
        &self.data.as_slice()[self.layout.lambda_range(i)]
    }

    pub fn nu(&self, i: usize) -> &[f64] {
        &self.data.as_slice()[self.layout.nu_range(i)]
    }

    pub fn x_block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.x_range(i);
        &mut self.data.as_mut_slice()[r]
    }

    pub fn lambda_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.lambda_range(i);
        &mut self.data.as_mut_slice()[r]
    }

    pub fn nu_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.nu_range(i);
        &mut self.data.as_mut_slice()[r]
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// λ̄ = mean of the per-agent multipliers.
    pub fn lambda_mean(&self) -> Vec<f64> {
        let n_agents = self.layout.n_agents();
        let m = self.layout.m();
        let mut mean = vec![0.0; m];
        for i in 0..n_agents {
            for (acc, v) in mean.iter_mut().zip(self.lambda(i)) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n_agents as f64;
        }
        mean
    }

    /// max_i ‖λ_i − λ̄‖
    pub fn dual_disagreement(&self) -> f64 {
        let mean = self.lambda_mean();
        (0..self.layout.n_agents())
            .map(|i| crate::linalg::dist(self.lambda(i), &mean))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_partition_omega() {
        let l = Layout::new(vec![2, 3], 2);
        assert_eq!(l.len(), 5 + 8);
        assert_eq!(l.x_range(1), 2..5);
        assert_eq!(l.lambda_range(0), 5..7);
        assert_eq!(l.lambda_range(1), 7..9);
        assert_eq!(l.nu_range(0), 9..11);
        assert_eq!(l.nu_range(1), 11..13);
        let owners: Vec<_> = (0..l.len()).map(|g| l.owner(g).unwrap()).collect();
        assert_eq!(owners, vec![0, 0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1]);
    }

    #[test]
    fn dual_disagreement_of_consensus_is_zero() {
        let l = Arc::new(Layout::new(vec![1, 1], 2));
        let mut s = JointState::zeros(l);
        s.lambda_mut(0).copy_from_slice(&[1.0, 2.0]);
        s.lambda_mut(1).copy_from_slice(&[1.0, 2.0]);
        assert_eq!(s.dual_disagreement(), 0.0);
        s.lambda_mut(1)[0] = 3.0;
        assert!((s.dual_disagreement() - 1.0).abs() < 1e-15);
    }
}
