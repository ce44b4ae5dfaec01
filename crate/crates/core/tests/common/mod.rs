//! Independent reference computations and random instance generators shared
//! by the integration tests. Nothing here calls into the controller, the
//! consensus solver or the integrator under test.

#![allow(dead_code)]

use colsync::controller::{AgentState, SwarmState};
use colsync::graph::DirectedWeightedGraph;
use colsync::matops::{RotationMatrix, UpperTriPos};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish rotation from nalgebra's own QR with the usual sign fix.
pub fn random_rotation<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, d, d).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Upper triangular with diagonal in `[0.5, 2]`.
pub fn random_upper<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |r, c| match r.cmp(&c) {
        std::cmp::Ordering::Equal => rng.random_range(0.5..2.0),
        std::cmp::Ordering::Less => rng.sample(StandardNormal),
        std::cmp::Ordering::Greater => 0.0,
    })
}

pub fn random_swarm<R: Rng>(rng: &mut R, n: usize, d: usize, k: usize) -> SwarmState {
    let agents = (0..n)
        .map(|_| AgentState {
            q: RotationMatrix::new(random_rotation(rng, d), 1e-12).unwrap(),
            r: UpperTriPos::new(random_upper(rng, k)).unwrap(),
        })
        .collect();
    SwarmState::new(agents).unwrap()
}

/// A random spanning in-tree towards a random root plus extra edges with
/// probability `p`, all weights in `(0.1, 1)`.
pub fn random_qsc_edges<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<(usize, usize, f64)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut adj = vec![vec![false; n]; n];
    for m in 1..n {
        let parent = order[rng.random_range(0..m)];
        adj[order[m]][parent] = true;
    }
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            if i != j && rng.random_bool(p) {
                *e = true;
            }
        }
    }
    let mut edges = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            if e {
                edges.push((i, j, rng.random_range(0.1..1.0)));
            }
        }
    }
    edges
}

pub fn random_qsc_graph<R: Rng>(rng: &mut R, n: usize, p: f64) -> DirectedWeightedGraph {
    DirectedWeightedGraph::from_edges(n, &random_qsc_edges(rng, n, p)).unwrap()
}

/// Laplacian straight from the edge list.
pub fn naive_laplacian(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        l[(i, i)] += w;
        l[(i, j)] -= w;
    }
    l
}

/// `Σ_j a_ij (Z_j − Z_i)` from the edge list.
pub fn naive_consensus_derivative(z: &[DMatrix<f64>], edges: &[(usize, usize, f64)]) -> Vec<DMatrix<f64>> {
    let mut dz: Vec<DMatrix<f64>> = z.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect();
    for &(i, j, w) in edges {
        dz[i] += (&z[j] - &z[i]) * w;
    }
    dz
}

pub fn stack(z: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = z[0].len();
    DMatrix::from_fn(z.len() * m, 1, |r, _| z[r / m].as_slice()[r % m])
}

pub fn unstack(v: &DMatrix<f64>, n: usize, d: usize, k: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|i| DMatrix::from_column_slice(d, k, &v.as_slice()[i * d * k..(i + 1) * d * k]))
        .collect()
}

/// `exp(−(L ⊗ I) t)` applied to the stacked blocks, with nalgebra's
/// matrix exponential on the full `(n·d·k)`-square system.
pub fn kron_exact(z0: &[DMatrix<f64>], l: &DMatrix<f64>, t: f64) -> Vec<DMatrix<f64>> {
    let (n, d, k) = (z0.len(), z0[0].nrows(), z0[0].ncols());
    let m = d * k;
    let big = DMatrix::from_fn(n * m, n * m, |r, c| if r % m == c % m { -l[(r / m, c / m)] * t } else { 0.0 });
    unstack(&(big.exp() * stack(z0)), n, d, k)
}

/// Classical fixed-step RK4 for the consensus protocol.
pub fn rk4_consensus(z0: &[DMatrix<f64>], edges: &[(usize, usize, f64)], t: f64, steps: usize) -> Vec<DMatrix<f64>> {
    let h = t / steps as f64;
    let axpy = |z: &[DMatrix<f64>], k: &[DMatrix<f64>], s: f64| -> Vec<DMatrix<f64>> {
        z.iter().zip(k).map(|(a, b)| a + b * s).collect()
    };
    let mut z = z0.to_vec();
    for _ in 0..steps {
        let k1 = naive_consensus_derivative(&z, edges);
        let k2 = naive_consensus_derivative(&axpy(&z, &k1, h / 2.0), edges);
        let k3 = naive_consensus_derivative(&axpy(&z, &k2, h / 2.0), edges);
        let k4 = naive_consensus_derivative(&axpy(&z, &k3, h), edges);
        for i in 0..z.len() {
            z[i] += (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0);
        }
    }
    z
}

/// `V_i` with an explicit inverse of `R_i` and explicit `[I_k, 0]ᵀ`.
pub fn naive_v(i: usize, swarm: &SwarmState, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let (d, k) = (swarm.d(), swarm.k());
    let e = DMatrix::from_fn(d, k, |r, c| if r == c { 1.0 } else { 0.0 });
    let qi = swarm.agent(i).q.as_matrix();
    let ri_inv = swarm.agent(i).r.as_matrix().clone().try_inverse().unwrap();
    let mut v = DMatrix::zeros(d, k);
    for &(a, j, w) in edges {
        if a == i {
            let qj = swarm.agent(j).q.as_matrix();
            let rel = qi.transpose() * qj.columns(0, k);
            v += (rel * swarm.agent(j).r.as_matrix() * &ri_inv - &e) * w;
        }
    }
    v
}

/// `d/dt (Q[:, :k] R) = Q̇[:, :k] R + Q[:, :k] Ṙ`.
pub fn product_rule(q: &DMatrix<f64>, r: &DMatrix<f64>, dq: &DMatrix<f64>, dr: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    dq.columns(0, k) * r + q.columns(0, k) * dr
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Hull diameter straight from the definition.
pub fn naive_diameter(z: &[DMatrix<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for a in z {
        for b in z {
            m = m.max((a - b).norm());
        }
    }
    m
}
