//! Linear consensus protocol `Ż_i = Σ_j a_ij (Z_j − Z_i)` on `d×k` blocks.
//!
//! Stacked, this is `Ż = −(L ⊗ I_d) Z`. The closed-form solution only needs
//! `exp(−L t)` (an `n×n` matrix) applied blockwise.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::graph::{left_null_vector, DirectedWeightedGraph};
use crate::matops::RANK_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    d: usize,
    k: usize,
    z: Vec<DMatrix<f64>>,
}

impl ConsensusState {
    pub fn new(z: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = z
            .first()
            .ok_or_else(|| Error::Dimension("consensus state needs at least one block".into()))?;
        let (d, k) = first.shape();
        if z.iter().any(|b| b.shape() != (d, k)) {
            return Err(Error::Dimension("consensus blocks differ in shape".into()));
        }
        Ok(Self { d, k, z })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.z
    }

    pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
        self.z
    }

    /// Full column rank of block `i`, judged relative to its largest singular
    /// value. Rank loss is a legitimate state, not an error.
    pub fn is_full_rank(&self, i: usize) -> bool {
        let sv = self.z[i].singular_values();
        sv.min() > RANK_TOL * sv.max()
    }

    /// Adds `xi` to every block.
    pub fn translated(&self, xi: &DMatrix<f64>) -> Self {
        Self {
            z: self.z.iter().map(|b| b + xi).collect(),
            ..*self
        }
    }
}

fn check_graph(state: &ConsensusState, g: &DirectedWeightedGraph) -> Result<()> {
    if g.n() != state.n() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes but state has {} blocks",
            g.n(),
            state.n()
        )));
    }
    Ok(())
}

/// Neighbor-sum form of the protocol.
pub fn consensus_derivative(state: &ConsensusState, g: &DirectedWeightedGraph) -> Result<Vec<DMatrix<f64>>> {
    check_graph(state, g)?;
    Ok(derivative_blocks(&state.z, g))
}

pub(crate) fn derivative_blocks(z: &[DMatrix<f64>], g: &DirectedWeightedGraph) -> Vec<DMatrix<f64>> {
    z.iter()
        .enumerate()
        .map(|(i, zi)| {
            let mut dz = DMatrix::zeros(zi.nrows(), zi.ncols());
            for &(j, a) in g.neighbors(i) {
                dz += (&z[j] - zi) * a;
            }
            dz
        })
        .collect()
}

/// Laplacian form `−Σ_j L_ij Z_j` of the protocol.
pub fn consensus_derivative_stacked(state: &ConsensusState, g: &DirectedWeightedGraph) -> Result<Vec<DMatrix<f64>>> {
    check_graph(state, g)?;
    let l = g.laplacian();
    Ok(mix_blocks(&(-l), &state.z))
}

/// `Y_i = Σ_j M_ij Z_j`.
fn mix_blocks(m: &DMatrix<f64>, z: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    (0..z.len())
        .map(|i| {
            let mut acc = DMatrix::zeros(z[i].nrows(), z[i].ncols());
            for (j, zj) in z.iter().enumerate() {
                let c = m[(i, j)];
                if c != 0.0 {
                    acc += zj * c;
                }
            }
            acc
        })
        .collect()
}

/// `exp(−L t)`.
pub fn propagator(g: &DirectedWeightedGraph, t: f64) -> DMatrix<f64> {
    expm(&(g.laplacian() * -t))
}

/// Exact solution at time `t ≥ 0`.
pub fn consensus_exact(z0: &ConsensusState, g: &DirectedWeightedGraph, t: f64) -> Result<ConsensusState> {
    check_graph(z0, g)?;
    if !(t >= 0.0) {
        return Err(Error::Config(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(z0.clone());
    }
    Ok(ConsensusState {
        z: mix_blocks(&propagator(g, t), &z0.z),
        ..*z0
    })
}

/// Limit `Σ_i w_i Z_i(0)` with `w` the normalized left null vector of `L`.
pub fn consensus_limit(z0: &ConsensusState, g: &DirectedWeightedGraph) -> Result<DMatrix<f64>> {
    check_graph(z0, g)?;
    let w = left_null_vector(&g.laplacian())?;
    let mut limit = DMatrix::zeros(z0.d, z0.k);
    for (wi, zi) in w.iter().zip(&z0.z) {
        if *wi != 0.0 {
            limit += zi * *wi;
        }
    }
    Ok(limit)
}

/// Largest pairwise Frobenius distance between blocks.
pub fn hull_diameter(state: &ConsensusState) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..state.z.len() {
        for j in i + 1..state.z.len() {
            best = best.max((&state.z[i] - &state.z[j]).norm());
        }
    }
    best
}

/// Smallest real part among the nonzero Laplacian eigenvalues, i.e. the
/// asymptotic convergence rate of the protocol. `None` when every eigenvalue
/// is (numerically) zero.
pub fn slowest_rate(g: &DirectedWeightedGraph) -> Option<f64> {
    let l = g.laplacian();
    let scale = l.amax().max(1.0);
    l.complex_eigenvalues()
        .iter()
        .filter(|e| e.norm() > 1e-9 * scale)
        .map(|e| e.re)
        .min_by(|a, b| a.total_cmp(b))
}

/// Time after which the slowest mode has decayed by `e⁻⁵⁰`.
pub fn long_horizon(g: &DirectedWeightedGraph) -> Option<f64> {
    slowest_rate(g).filter(|r| *r > 0.0).map(|r| 50.0 / r)
}
