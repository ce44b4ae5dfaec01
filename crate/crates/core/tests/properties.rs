mod common;

use colsync::consensus::{consensus_derivative, consensus_derivative_stacked, ConsensusState};
use colsync::controller::{closed_loop_derivative, compute_u_full, compute_u_k, compute_v, control, AgentState, SwarmState};
use colsync::graph::{left_null_vector, DirectedWeightedGraph};
use colsync::matops::{complete_to_rotation, map_h, map_h_inv, orthogonality_defect, qr_positive, RotationMatrix, UpperTriPos};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (2usize..=6, 2usize..=4).prop_flat_map(|(n, d)| (Just(n), Just(d), 1..d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn u_full_is_exactly_skew((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, n, d, k);
        let g = random_qsc_graph(&mut r, n, 0.4);
        for i in 0..n {
            let u = compute_u_full(&compute_v(i, &swarm, &g).unwrap()).into_inner();
            prop_assert_eq!(&u + u.transpose(), DMatrix::zeros(d, d));
        }
    }

    #[test]
    fn u_k_is_leading_block_of_u_full((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, n, d, k);
        let g = random_qsc_graph(&mut r, n, 0.4);
        for i in 0..n {
            let v = compute_v(i, &swarm, &g).unwrap();
            let full = compute_u_full(&v).into_inner();
            prop_assert_eq!(full.columns(0, k).into_owned(), compute_u_k(&v));
        }
    }

    #[test]
    fn v_matches_explicit_inverse((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, n, d, k);
        let edges = random_qsc_edges(&mut r, n, 0.4);
        let g = DirectedWeightedGraph::from_edges(n, &edges).unwrap();
        for i in 0..n {
            let v = compute_v(i, &swarm, &g).unwrap();
            prop_assert!(rel_err(&v, &naive_v(i, &swarm, &edges)) <= 1e-10);
        }
    }

    #[test]
    fn product_rule_reproduces_consensus((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, n, d, k);
        let edges = random_qsc_edges(&mut r, n, 0.4);
        let g = DirectedWeightedGraph::from_edges(n, &edges).unwrap();
        let der = closed_loop_derivative(&swarm, &g).unwrap();
        let want = naive_consensus_derivative(&swarm.z_blocks(), &edges);
        for (i, a) in swarm.agents().iter().enumerate() {
            let got = product_rule(a.q.as_matrix(), a.r.as_matrix(), &der[i].dq, &der[i].dr);
            prop_assert!(rel_err(&got, &want[i]) <= 1e-10, "agent {}: {}", i, rel_err(&got, &want[i]));
        }
    }

    #[test]
    fn controller_is_frame_invariant((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, n, d, k);
        let g = random_qsc_graph(&mut r, n, 0.4);
        let frame = RotationMatrix::new(random_rotation(&mut r, d), 1e-12).unwrap();
        let turned = swarm.rotated(&frame);
        for i in 0..n {
            let a = control(i, &swarm, &g).unwrap();
            let b = control(i, &turned, &g).unwrap();
            prop_assert!((&a.v - &b.v).norm() <= 1e-12 * a.v.norm().max(1.0));
            prop_assert!((a.u_full.as_matrix() - b.u_full.as_matrix()).norm() <= 1e-12 * a.v.norm().max(1.0));
            prop_assert!((&a.r_dot - &b.r_dot).norm() <= 1e-12 * a.r_dot.norm().max(1.0));
        }
    }

    #[test]
    fn controller_is_local((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, n, d, k);
        let g = random_qsc_graph(&mut r, n, 0.3);
        let i = 0;
        let outsiders: Vec<usize> = (1..n).filter(|&j| g.weight(i, j).is_none()).collect();
        prop_assume!(!outsiders.is_empty());
        let mut agents = swarm.agents().to_vec();
        for &j in &outsiders {
            agents[j] = AgentState {
                q: RotationMatrix::new(random_rotation(&mut r, d), 1e-12).unwrap(),
                r: UpperTriPos::new(random_upper(&mut r, k)).unwrap(),
            };
        }
        let perturbed = SwarmState::new(agents).unwrap();
        prop_assert_eq!(control(i, &swarm, &g).unwrap(), control(i, &perturbed, &g).unwrap());
    }

    #[test]
    fn synchronized_states_are_equilibria((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = RotationMatrix::new(random_rotation(&mut r, d), 1e-12).unwrap();
        let rr = UpperTriPos::new(random_upper(&mut r, k)).unwrap();
        let swarm = SwarmState::new(vec![AgentState { q, r: rr }; n]).unwrap();
        let g = random_qsc_graph(&mut r, n, 0.5);
        for der in closed_loop_derivative(&swarm, &g).unwrap() {
            prop_assert!(der.dq.amax() <= 1e-12);
            prop_assert!(der.dr.amax() <= 1e-12);
        }
    }

    #[test]
    fn laplacian_matches_edge_list(n in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let edges = random_qsc_edges(&mut r, n, 0.4);
        let l = DirectedWeightedGraph::from_edges(n, &edges).unwrap().laplacian();
        prop_assert_eq!(&l, &naive_laplacian(n, &edges));
        for row in l.row_iter() {
            prop_assert!(row.sum().abs() <= 1e-14);
        }
    }

    #[test]
    fn qsc_survives_relabeling(n in 2usize..=8, seed in any::<u64>(), p in 0.0f64..0.5) {
        let mut r = rng(seed);
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .filter(|_| rand::Rng::random_bool(&mut r, p))
            .map(|(i, j)| (i, j, 1.0))
            .collect();
        let g = DirectedWeightedGraph::from_edges(n, &edges).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let h = g.permuted(&perm).unwrap();
        prop_assert_eq!(g.is_quasi_strongly_connected(), h.is_quasi_strongly_connected());
        prop_assert_eq!(g.is_strongly_connected(), h.is_strongly_connected());
    }

    #[test]
    fn left_null_vector_annihilates_laplacian(n in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_qsc_graph(&mut r, n, 0.3);
        let l = g.laplacian();
        let w = left_null_vector(&l).unwrap();
        prop_assert!((w.transpose() * &l).norm() <= 1e-12);
        prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= -1e-12));
    }

    #[test]
    fn qr_positive_and_map_h_agree(d in 2usize..=6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = 1 + (seed as usize) % (d - 1);
        let x = gaussian(&mut r, d, k);
        let (q1, r1) = qr_positive(&x).unwrap();
        let (q2, r2) = map_h(&x).unwrap();
        prop_assert!((q1.as_matrix() - q2.as_matrix()).norm() <= 1e-10);
        prop_assert!((r1.as_matrix() - r2.as_matrix()).norm() <= 1e-10 * x.norm().max(1.0));
        prop_assert!((map_h_inv(&q2, &r2) - &x).norm() <= 1e-12 * x.norm().max(1.0));
        let full = complete_to_rotation(&q1, &mut r).unwrap();
        prop_assert!(orthogonality_defect(full.as_matrix()) <= 1e-12);
        prop_assert!((full.as_matrix().determinant() - 1.0).abs() <= 1e-12);
        prop_assert!((full.columns(k) - q1.as_matrix()).norm() <= 1e-12);
    }

    #[test]
    fn consensus_forms_agree((n, d, k) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let edges = random_qsc_edges(&mut r, n, 0.4);
        let g = DirectedWeightedGraph::from_edges(n, &edges).unwrap();
        let z: Vec<_> = (0..n).map(|_| gaussian(&mut r, d, k)).collect();
        let state = ConsensusState::new(z.clone()).unwrap();
        let want = naive_consensus_derivative(&z, &edges);
        let a = consensus_derivative(&state, &g).unwrap();
        let b = consensus_derivative_stacked(&state, &g).unwrap();
        for i in 0..n {
            prop_assert!((&a[i] - &want[i]).norm() <= 1e-12);
            prop_assert!((&b[i] - &want[i]).norm() <= 1e-12);
        }
    }
}
