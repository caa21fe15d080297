//! Undirected follower graph with leader pinning.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, SymEigen};

/// Weighted undirected edge between followers `i` and `j` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Follower communication graph: symmetric adjacency plus leader pinning weights.
///
/// Validated at construction, immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: DMatrix<f64>,
    pinning: DVector<f64>,
}

impl Graph {
    pub fn new(adjacency: DMatrix<f64>, pinning: DVector<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || !adjacency.is_square() {
            return Err(Error::Validation("adjacency must be a non-empty square matrix".into()));
        }
        if pinning.len() != n {
            return Err(Error::Validation(format!("pinning has {} entries for {} followers", pinning.len(), n)));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::Validation(format!("adjacency diagonal entry {i} is nonzero")));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::Validation(format!("adjacency[{i}][{j}] = {a} is not >= 0")));
                }
                if a != adjacency[(j, i)] {
                    return Err(Error::Validation(format!("adjacency is not symmetric at ({i}, {j})")));
                }
            }
        }
        if pinning.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Validation("pinning weights must be finite and >= 0".into()));
        }
        if pinning.iter().all(|b| *b == 0.0) {
            return Err(Error::Validation("no follower is pinned to the leader".into()));
        }
        Ok(Self { adjacency, pinning })
    }

    /// Builds a graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[Edge], pinning: &[f64]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n, n);
        for e in edges {
            if e.i >= n || e.j >= n {
                return Err(Error::Validation(format!("edge ({}, {}) out of range for {n} followers", e.i, e.j)));
            }
            if e.i == e.j {
                return Err(Error::Validation(format!("self-loop on follower {}", e.i)));
            }
            adjacency[(e.i, e.j)] = e.weight;
            adjacency[(e.j, e.i)] = e.weight;
        }
        Self::new(adjacency, DVector::from_column_slice(pinning))
    }

    /// Reconstructed 4-agent topology: ring 0-1-2-3-0 with weights 0.5 and
    /// agent 0 pinned with weight 2. λ_min(L + B) = 2 − 2cos(π/7) ≈ 0.19806.
    ///
    /// The published figure for this experiment is not recoverable; this is
    /// one graph reproducing its reported λ_min, not the original.
    pub fn reference_fixture() -> Self {
        let edges: Vec<Edge> =
            [(0, 1), (1, 2), (2, 3), (3, 0)].iter().map(|&(i, j)| Edge { i, j, weight: 0.5 }).collect();
        Self::from_edges(4, &edges, &[2.0, 0.0, 0.0, 0.0]).expect("fixture graph is valid")
    }

    pub fn n_followers(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn pinning(&self) -> &DVector<f64> {
        &self.pinning
    }

    /// L = D − A with D the diagonal of row sums.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_followers();
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.adjacency.row(i).sum();
        }
        l
    }

    /// L + diag(b).
    pub fn pinned_laplacian(&self) -> DMatrix<f64> {
        let mut m = self.laplacian();
        for i in 0..self.n_followers() {
            m[(i, i)] += self.pinning[i];
        }
        m
    }

    pub fn pinned_spectrum(&self) -> SymEigen {
        jacobi_eigen(&self.pinned_laplacian())
    }

    /// Smallest eigenvalue of L + B; errors unless every follower can reach the leader.
    pub fn min_eig_lb(&self) -> Result<f64> {
        let lambda = self.pinned_spectrum().min();
        // relative floor so that round-off on a singular L+B is not taken as positive
        let floor = 1e-12 * self.pinned_laplacian().norm().max(1.0);
        if lambda <= floor {
            return Err(Error::NotLeaderConnected(lambda));
        }
        Ok(lambda)
    }

    /// Neighbour weights of follower `i`, as (j, a_ij) pairs with a_ij > 0.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.n_followers()).map(|j| (j, self.adjacency[(i, j)])).filter(|&(_, a)| a > 0.0).collect()
    }
}
