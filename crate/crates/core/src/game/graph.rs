use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{GneError, Result};

/// Undirected, unweighted communication graph over the agents.
#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Edges are 0-based. Self-loops are rejected, duplicates merged.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GneError::validation(
                    "graph",
                    format!("edge ({}, {}) references a missing agent", a + 1, b + 1),
                ));
            }
            if a == b {
                return Err(GneError::validation(
                    "graph",
                    format!("self-loop at agent {}", a + 1),
                ));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(CommGraph {
            n,
            edges,
            neighbors,
        })
    }

    pub fn complete(n: usize) -> Self {
        let mut e = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                e.push((a, b));
            }
        }
        CommGraph::new(n, &e).expect("complete graph is well formed")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbour list N_i^λ.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(|v| v.len()).max().unwrap_or(0)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(a, b) in &self.edges {
            l[(a, a)] += 1.0;
            l[(b, b)] += 1.0;
            l[(a, b)] -= 1.0;
            l[(b, a)] -= 1.0;
        }
        l
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Second-smallest Laplacian eigenvalue (0 for a single agent).
    pub fn algebraic_connectivity(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut ev: Vec<f64> = self.laplacian().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev[1]
    }

    pub fn lambda_max(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.laplacian()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// out_i += Σ_{j ∈ N_i} (v_i − v_j) for m-dimensional blocks, i.e. agent i's block of (L ⊗ I_m) v.
    pub fn laplacian_block<'a, F>(&self, i: usize, block: F, out: &mut [f64])
    where
        F: Fn(usize) -> &'a [f64],
    {
        let own = block(i);
        for &j in &self.neighbors[i] {
            let other = block(j);
            for k in 0..out.len() {
                out[k] += own[k] - other[k];
            }
        }
    }
}
