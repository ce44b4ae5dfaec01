mod common;

use colsync::cli::setup::{generate_graph, init_gaussian_qr};
use colsync::cli::{Generator, GraphSpec};
use colsync::consensus::{consensus_exact, long_horizon, ConsensusState};
use colsync::controller::{AgentState, SwarmState};
use colsync::integrator::{equivalence_run, integrate_closed_loop, integrate_consensus, IntegratorConfig};
use colsync::matops::{orthogonality_defect, RotationMatrix, UpperTriPos};
use colsync::metrics::{compute_report, detect_convergence, Trajectory};
use common::*;

fn cfg(t_final: f64) -> IntegratorConfig {
    IntegratorConfig {
        t_final,
        ..Default::default()
    }
}

#[test]
fn tighter_tolerance_gives_smaller_error() {
    let mut r = rng(5);
    let g = random_qsc_graph(&mut r, 5, 0.4);
    let z0 = ConsensusState::new((0..5).map(|_| gaussian(&mut r, 3, 2)).collect()).unwrap();
    let exact = consensus_exact(&z0, &g, 3.0).unwrap();
    let err = |rel_tol: f64| {
        let c = IntegratorConfig {
            rel_tol,
            abs_tol: rel_tol * 1e-3,
            ..cfg(3.0)
        };
        let rec = integrate_consensus(&z0, &g, &c).unwrap();
        let (_, last) = rec.last().unwrap();
        last.blocks()
            .iter()
            .zip(exact.blocks())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(1e-4), err(1e-8));
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn trajectories_stay_on_the_rotation_group() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let swarm = random_swarm(&mut r, 5, 3, 1 + seed as usize % 2);
        let g = random_qsc_graph(&mut r, 5, 0.3);
        let rec = integrate_closed_loop(&swarm, &g, &cfg(10.0)).unwrap();
        assert!(!rec.halted());
        for s in &rec.snapshots {
            for a in s.agents() {
                assert!(orthogonality_defect(a.q.as_matrix()) <= 1e-8);
                assert!((a.q.as_matrix().determinant() - 1.0).abs() <= 1e-8);
                let rr = a.r.as_matrix();
                assert!((0..rr.nrows()).all(|i| (0..i).all(|j| rr[(i, j)] == 0.0)));
            }
        }
    }
}

#[test]
fn synchronized_swarm_stays_put() {
    let mut r = rng(11);
    let q = RotationMatrix::new(random_rotation(&mut r, 4), 1e-12).unwrap();
    let rr = UpperTriPos::new(random_upper(&mut r, 2)).unwrap();
    let swarm = SwarmState::new(vec![AgentState { q, r: rr }; 4]).unwrap();
    let g = random_qsc_graph(&mut r, 4, 0.5);
    let rec = integrate_closed_loop(&swarm, &g, &cfg(10.0)).unwrap();
    for s in &rec.snapshots {
        for (a, b) in s.agents().iter().zip(swarm.agents()) {
            assert!((a.q.as_matrix() - b.q.as_matrix()).amax() <= 1e-10);
            assert!((a.r.as_matrix() - b.r.as_matrix()).amax() <= 1e-10);
        }
    }
}

#[test]
fn closed_loop_blocks_follow_consensus() {
    let mut r = rng(21);
    let g = random_qsc_graph(&mut r, 5, 0.4);
    let z0 = ConsensusState::new((0..5).map(|_| gaussian(&mut r, 4, 2)).collect()).unwrap();
    let run = equivalence_run(&z0, &g, &cfg(5.0), &mut r).unwrap();
    assert_eq!(run.deviation.len(), 101);
    assert!(run.max_deviation() <= 1e-4, "{}", run.max_deviation());
    for (&t, s) in run.closed_loop.times.iter().zip(&run.closed_loop.snapshots).step_by(20) {
        let exact = consensus_exact(&z0, &g, t).unwrap();
        for (a, z) in s.agents().iter().zip(exact.blocks()) {
            assert!((a.z() - z).norm() <= 1e-4);
        }
    }
}

#[test]
fn two_agents_in_the_plane_always_synchronize() {
    let spec = GraphSpec {
        generator: Some(Generator::Complete),
        ..Default::default()
    };
    let mut failures = Vec::new();
    for seed in 0..100 {
        let g = generate_graph(&spec, 2, seed).unwrap();
        let swarm = init_gaussian_qr(seed, 2, 2, 1).unwrap();
        let horizon = long_horizon(&g).unwrap().clamp(10.0, 1e3);
        let rec = integrate_closed_loop(&swarm, &g, &cfg(horizon)).unwrap();
        let report = compute_report(Trajectory::ClosedLoop(&rec), &g);
        if rec.halted() || detect_convergence(&report, 1e-6, 1.0).is_none() {
            failures.push(seed);
        }
    }
    assert!(failures.is_empty(), "seeds without convergence: {failures:?}");
}
