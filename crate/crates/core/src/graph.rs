//! Directed weighted interaction graphs.
//!
//! Nodes are 0-based internally. An edge `(i, j)` means agent `i` observes
//! agent `j`, i.e. `j` belongs to the neighborhood `N_i`. External formats use
//! 1-based labels; see [`DirectedWeightedGraph::from_one_based`].

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value threshold used to decide the rank of `Lᵀ`.
pub const NULL_SPACE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeightedGraph {
    n: usize,
    // Out-neighborhoods, sorted by neighbor index.
    adj: Vec<Vec<(usize, f64)>>,
}

impl DirectedWeightedGraph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adj: vec![Vec::new(); n],
        }
    }

    /// Builds a graph from 0-based `(i, j, a_ij)` triples.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(i, j, w) in edges {
            g.add_edge(i, j, w)?;
        }
        Ok(g)
    }

    /// Builds a graph from 1-based `[i, j, a_ij]` triples as found in
    /// configuration files.
    pub fn from_one_based(n: usize, edges: &[[f64; 3]]) -> Result<Self> {
        let mut g = Self::empty(n);
        for e in edges {
            let (i, j) = (e[0], e[1]);
            if i.fract() != 0.0 || j.fract() != 0.0 || i < 1.0 || j < 1.0 {
                return Err(Error::Graph(format!(
                    "node labels must be positive integers, got ({i}, {j})"
                )));
            }
            g.add_edge(i as usize - 1, j as usize - 1, e[2])?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, i: usize, j: usize, weight: f64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::Graph(format!(
                "edge ({}, {}) out of range for n = {}",
                i + 1,
                j + 1,
                self.n
            )));
        }
        if i == j {
            return Err(Error::Graph(format!("self-loop at node {}", i + 1)));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Graph(format!(
                "weight of edge ({}, {}) must be positive and finite, got {weight}",
                i + 1,
                j + 1
            )));
        }
        let row = &mut self.adj[i];
        match row.binary_search_by(|&(k, _)| k.cmp(&j)) {
            Ok(_) => Err(Error::Graph(format!(
                "duplicate edge ({}, {})",
                i + 1,
                j + 1
            ))),
            Err(pos) => {
                row.insert(pos, (j, weight));
                Ok(())
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Neighbors of `i` with weights, in ascending index order.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adj[i]
            .binary_search_by(|&(k, _)| k.cmp(&j))
            .ok()
            .map(|p| self.adj[i][p].1)
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    /// All edges as 0-based triples, ordered by `(i, j)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, w)| (i, j, w)))
    }

    /// Edges as 1-based `[i, j, a_ij]` triples.
    pub fn to_one_based(&self) -> Vec<[f64; 3]> {
        self.edges()
            .map(|(i, j, w)| [(i + 1) as f64, (j + 1) as f64, w])
            .collect()
    }

    /// Nodes from which `target` can be reached along edge direction.
    fn reaches(&self, target: usize) -> Vec<bool> {
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (i, j, _) in self.edges() {
            reverse[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([target]);
        seen[target] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &reverse[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }

    /// Smallest-index center: a node reachable from every other node.
    pub fn center(&self) -> Option<usize> {
        (0..self.n).find(|&c| self.reaches(c).iter().all(|&r| r))
    }

    pub fn is_quasi_strongly_connected(&self) -> bool {
        self.center().is_some()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.n > 0 && self.reaches(0).iter().all(|&r| r) && {
            let mut seen = vec![false; self.n];
            let mut queue = VecDeque::from([0]);
            seen[0] = true;
            while let Some(v) = queue.pop_front() {
                for &(u, _) in &self.adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            seen.iter().all(|&s| s)
        }
    }

    /// Weighted Laplacian: out-weight sums on the diagonal, `-a_ij` on edges.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.adj.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in row {
                l[(i, j)] = -w;
                sum += w;
            }
            l[(i, i)] = sum;
        }
        l
    }

    /// Same graph with node `v` relabeled to `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Dimension("permutation length".into()));
        }
        let mut g = Self::empty(self.n);
        for (i, j, w) in self.edges() {
            g.add_edge(perm[i], perm[j], w)?;
        }
        Ok(g)
    }
}

/// Complete directed graph with weights from `weight(i, j)`.
pub fn complete(n: usize, mut weight: impl FnMut(usize, usize) -> f64) -> Result<DirectedWeightedGraph> {
    let mut g = DirectedWeightedGraph::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                g.add_edge(i, j, weight(i, j))?;
            }
        }
    }
    Ok(g)
}

/// Chain `0 → 1 → … → n-1`; the last node is the center.
pub fn chain(n: usize, mut weight: impl FnMut(usize, usize) -> f64) -> Result<DirectedWeightedGraph> {
    let mut g = DirectedWeightedGraph::empty(n);
    for i in 1..n {
        g.add_edge(i - 1, i, weight(i - 1, i))?;
    }
    Ok(g)
}

/// Complete directed graph with every edge into node 0 removed. Node 0 is
/// observed by nobody, so the graph is quasi-strongly connected (every other
/// node is a center) but not strongly connected for `n ≥ 2`.
pub fn unobserved_leader(
    n: usize,
    mut weight: impl FnMut(usize, usize) -> f64,
) -> Result<DirectedWeightedGraph> {
    let mut g = DirectedWeightedGraph::empty(n);
    for i in 0..n {
        for j in 1..n {
            if i != j {
                g.add_edge(i, j, weight(i, j))?;
            }
        }
    }
    Ok(g)
}

/// Normalized left null vector `w` of a Laplacian: `wᵀL = 0`, `Σ w = 1`.
///
/// Fails unless the null space of `Lᵀ` is one-dimensional, judged by singular
/// values relative to the largest one.
pub fn left_null_vector(l: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(Error::Dimension(format!("Laplacian is {}x{}", n, l.ncols())));
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let svd = l.transpose().svd(false, true);
    let sigma = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let largest = sigma.max();
    let threshold = NULL_SPACE_TOL * largest.max(f64::MIN_POSITIVE);
    let null_dim = sigma.iter().filter(|&&s| s <= threshold).count();
    if largest == 0.0 || null_dim != 1 {
        return Err(Error::NullSpaceDimension(if largest == 0.0 { n } else { null_dim }));
    }
    let idx = sigma.imin();
    let mut w: DVector<f64> = v_t.row(idx).transpose();
    let total = w.sum();
    if total.abs() < f64::EPSILON {
        return Err(Error::NullSpaceDimension(null_dim));
    }
    w /= total;
    // Entries that are structurally zero come back as ±1e-17 noise.
    for x in w.iter_mut() {
        if x.abs() < 1e-15 {
            *x = 0.0;
        }
    }
    Ok(w)
}
