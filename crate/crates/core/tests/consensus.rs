mod common;

use colsync::consensus::{consensus_exact, consensus_limit, hull_diameter, propagator, slowest_rate, ConsensusState};
use colsync::graph::{self, left_null_vector, DirectedWeightedGraph};
use colsync::integrator::{integrate_consensus, IntegratorConfig};
use common::*;
use nalgebra::DMatrix;

type Instance = (Vec<(usize, usize, f64)>, DirectedWeightedGraph, Vec<DMatrix<f64>>);

fn instance(seed: u64, n: usize, d: usize, k: usize) -> Instance {
    let mut r = rng(seed);
    let edges = random_qsc_edges(&mut r, n, 0.4);
    let g = DirectedWeightedGraph::from_edges(n, &edges).unwrap();
    let z = (0..n).map(|_| gaussian(&mut r, d, k)).collect();
    (edges, g, z)
}

fn max_gap(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn exact_solution_matches_kronecker_exponential() {
    for seed in 0..20 {
        let (_, g, z) = instance(seed, 2 + seed as usize % 4, 3, 1 + seed as usize % 2);
        let l = g.laplacian();
        for t in [0.3, 1.0, 4.0] {
            let got = consensus_exact(&ConsensusState::new(z.clone()).unwrap(), &g, t).unwrap();
            let want = kron_exact(&z, &l, t);
            assert!(max_gap(got.blocks(), &want) <= 1e-10, "seed {seed} t {t}");
        }
    }
}

#[test]
fn exact_solution_matches_fixed_step_rk4() {
    for seed in 0..10 {
        let (edges, g, z) = instance(100 + seed, 5, 3, 2);
        let got = consensus_exact(&ConsensusState::new(z.clone()).unwrap(), &g, 2.0).unwrap();
        let want = rk4_consensus(&z, &edges, 2.0, 4000);
        assert!(max_gap(got.blocks(), &want) <= 1e-8, "seed {seed}");
    }
}

#[test]
fn propagator_is_a_semigroup() {
    let (_, g, _) = instance(7, 6, 2, 1);
    let (s, t) = (0.7, 1.9);
    let lhs = propagator(&g, s + t);
    let rhs = propagator(&g, s) * propagator(&g, t);
    assert!((lhs - rhs).amax() <= 1e-12);
    assert_eq!(propagator(&g, 0.0), DMatrix::identity(6, 6));
}

#[test]
fn propagator_rows_are_stochastic() {
    let (_, g, _) = instance(8, 6, 2, 1);
    let p = propagator(&g, 1.3);
    for row in p.row_iter() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
        assert!(row.iter().all(|&x| x >= -1e-14));
    }
}

#[test]
fn translation_commutes_with_flow() {
    let (_, g, z) = instance(9, 5, 3, 2);
    let z0 = ConsensusState::new(z).unwrap();
    let mut r = rng(99);
    for _ in 0..20 {
        let xi = gaussian(&mut r, 3, 2);
        let a = consensus_exact(&z0.translated(&xi), &g, 1.5).unwrap();
        let b = consensus_exact(&z0, &g, 1.5).unwrap().translated(&xi);
        assert!(max_gap(a.blocks(), b.blocks()) <= 1e-10);
    }
}

#[test]
fn chain_converges_to_its_root() {
    let g = graph::chain(4, |_, _| 1.0).unwrap();
    let z: Vec<_> = (0..4).map(|i| DMatrix::from_element(2, 1, i as f64)).collect();
    let limit = consensus_limit(&ConsensusState::new(z).unwrap(), &g).unwrap();
    assert!((limit - DMatrix::from_element(2, 1, 3.0)).amax() <= 1e-12);
}

#[test]
fn left_null_vector_matches_long_time_propagator() {
    for seed in 0..10 {
        let (_, g, _) = instance(200 + seed, 5, 2, 1);
        let w = left_null_vector(&g.laplacian()).unwrap();
        let p = propagator(&g, 1e3);
        for row in p.row_iter() {
            assert!((row.transpose() - &w).amax() <= 1e-8, "seed {seed}");
        }
    }
}

#[test]
fn slowest_rate_is_positive_for_rooted_graphs() {
    for seed in 0..10 {
        let (_, g, _) = instance(300 + seed, 5, 2, 1);
        let rate = slowest_rate(&g).unwrap();
        let l = g.laplacian();
        let gershgorin = (0..5).map(|i| 2.0 * l[(i, i)]).fold(0.0, f64::max);
        assert!(rate > 0.0 && rate <= gershgorin, "seed {seed}: {rate}");
    }
}

#[test]
fn adaptive_solution_tracks_exact_flow_and_shrinks_hull() {
    for seed in 0..10 {
        let (_, g, z) = instance(400 + seed, 5, 3, 2);
        let z0 = ConsensusState::new(z).unwrap();
        let cfg = IntegratorConfig {
            t_final: 5.0,
            ..Default::default()
        };
        let rec = integrate_consensus(&z0, &g, &cfg).unwrap();
        let (t, last) = rec.last().unwrap();
        assert_eq!(t, 5.0);
        let exact = consensus_exact(&z0, &g, 5.0).unwrap();
        assert!(max_gap(last.blocks(), exact.blocks()) <= 10.0 * cfg.rel_tol);
        for w in rec.snapshots.windows(2) {
            assert!(hull_diameter(&w[1]) <= hull_diameter(&w[0]) + 1e-9);
            assert!((hull_diameter(&w[1]) - naive_diameter(w[1].blocks())).abs() <= 1e-14);
        }
    }
}
