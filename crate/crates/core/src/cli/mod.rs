//! Experiment orchestration behind the `colsync` binary.
//!
//! Modes: a single closed-loop run, a consensus run, a paired equivalence run
//! and a Monte Carlo batch of closed-loop runs over consecutive seeds.

pub mod args;
pub mod config;
pub mod output;
pub mod setup;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::consensus::consensus_limit;
use crate::controller::SwarmState;
use crate::error::Error;
use crate::graph::DirectedWeightedGraph;
use crate::integrator::{equivalence_run, integrate_closed_loop, integrate_consensus, Event, TrajectoryRecord};
use crate::metrics::{compute_report, detect_convergence, SyncReport, Trajectory};

pub use config::{ExperimentConfig, Generator, GraphSpec, InitKind, Mode};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SINGULAR_R: i32 = 3;
pub const EXIT_INTEGRATOR: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Lib(Error::SingularR { .. }) => EXIT_SINGULAR_R,
            Self::Lib(Error::StepSizeUnderflow { .. }) => EXIT_INTEGRATOR,
            Self::Lib(_) => EXIT_CONFIG,
            Self::Io { .. } => 1,
        }
    }
}

/// Result of a completed run. `halted` is set when a closed-loop
/// integration stopped on a singular `R`; outputs are still written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Value,
    pub halted: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.halted {
            EXIT_SINGULAR_R
        } else {
            0
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    match cfg.mode {
        Mode::ClosedLoop => run_closed_loop(cfg, dir),
        Mode::Consensus => run_consensus(cfg, dir),
        Mode::Equivalence => run_equivalence(cfg, dir),
        Mode::MonteCarlo => run_monte_carlo(cfg, dir),
    }
}

fn events_json(events: &[Event]) -> Value {
    Value::Array(
        events
            .iter()
            .map(|e| json!({ "time": e.time, "kind": e.kind, "agent": e.agent.map(|a| a + 1) }))
            .collect(),
    )
}

fn graph_json(g: &DirectedWeightedGraph) -> Value {
    json!({ "n": g.n(), "edges": g.to_one_based() })
}

fn steps_json<S>(rec: &TrajectoryRecord<S>) -> Value {
    json!({
        "accepted": rec.accepted_steps,
        "rejected": rec.rejected_steps,
        "reprojections": rec.reprojections,
        "snapshots": rec.len(),
    })
}

fn final_errors(report: &SyncReport) -> Value {
    let Some(last) = report.times.len().checked_sub(1) else {
        return Value::Null;
    };
    json!({
        "t": report.times[last],
        "max_q_sync_error": report.max_q_error_at(last),
        "max_r_sync_error": report.max_r_error_at(last),
        "max_u_norm": report.max_u_norm_at(last),
        "max_r_dot_norm": report.max_r_dot_norm_at(last),
    })
}

fn closed_loop_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    g: &DirectedWeightedGraph,
    rec: &TrajectoryRecord<SwarmState>,
) -> Result<(SyncReport, Value), CliError> {
    let mut report = compute_report(Trajectory::ClosedLoop(rec), g);
    report.converged_at = detect_convergence(&report, cfg.tol, cfg.dwell);
    if report.converged_at.is_none() {
        report.limit_q_cols = None;
    } else if report.limit_q_cols.is_none() {
        report.limit_q_cols = rec.snapshots.last().map(|s| s.agent(0).q.columns(cfg.k));
    }
    output::write_swarm_trajectory(&dir.join("trajectory.csv"), rec)?;
    output::write_metrics(&dir.join("metrics.csv"), &report)?;
    let summary = json!({
        "converged_at": report.converged_at,
        "final": final_errors(&report),
        "limit_q_cols": report.limit_q_cols.as_ref().map(output::matrix_rows),
        "events": events_json(&rec.events),
        "steps": steps_json(rec),
    });
    Ok((report, summary))
}

fn finish(cfg: &ExperimentConfig, dir: &Path, g: &DirectedWeightedGraph, mut summary: Value, started: Instant) -> Result<Value, CliError> {
    let obj = summary.as_object_mut().expect("summary is an object");
    obj.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    obj.insert("graph".into(), graph_json(g));
    obj.insert("wall_clock_seconds".into(), json!(started.elapsed().as_secs_f64()));
    output::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_closed_loop(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let g = setup::build_graph(cfg)?;
    let swarm0 = setup::build_swarm(cfg)?;
    let rec = integrate_closed_loop(&swarm0, &g, &cfg.integrator)?;
    let (_, summary) = closed_loop_outputs(cfg, dir, &g, &rec)?;
    let summary = finish(cfg, dir, &g, summary, started)?;
    Ok(RunOutcome {
        summary,
        halted: rec.halted(),
    })
}

fn run_consensus(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let g = setup::build_graph(cfg)?;
    let z0 = setup::consensus_from_swarm(&setup::build_swarm(cfg)?);
    let rec = integrate_consensus(&z0, &g, &cfg.integrator)?;
    let report = compute_report(Trajectory::Consensus(&rec), &g);
    output::write_consensus_trajectory(&dir.join("trajectory.csv"), &rec)?;
    output::write_metrics(&dir.join("metrics.csv"), &report)?;
    let limit = consensus_limit(&z0, &g).ok();
    let final_gap = match (&limit, rec.snapshots.last()) {
        (Some(l), Some(last)) => Some(last.blocks().iter().map(|b| (b - l).norm()).fold(0.0, f64::max)),
        _ => None,
    };
    let summary = json!({
        "final": {
            "t": rec.times.last(),
            "z_diameter": report.z_diameter.as_ref().and_then(|z| z.last()),
            "max_distance_to_limit": final_gap,
        },
        "limit": limit.as_ref().map(output::matrix_rows),
        "events": events_json(&rec.events),
        "steps": steps_json(&rec),
    });
    let summary = finish(cfg, dir, &g, summary, started)?;
    Ok(RunOutcome { summary, halted: false })
}

fn run_equivalence(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let g = setup::build_graph(cfg)?;
    let z0 = setup::consensus_from_swarm(&setup::build_swarm(cfg)?);
    let mut rng = setup::stream_rng(cfg.seed, setup::COMPLETION_STREAM);
    let eq = equivalence_run(&z0, &g, &cfg.integrator, &mut rng)?;
    let (_, mut summary) = closed_loop_outputs(cfg, dir, &g, &eq.closed_loop)?;
    output::write_consensus_trajectory(&dir.join("consensus_trajectory.csv"), &eq.consensus)?;
    output::write_deviation(&dir.join("deviation.csv"), &eq.deviation)?;
    let limit_error = match (consensus_limit(&z0, &g), eq.closed_loop.snapshots.last()) {
        (Ok(l), Some(last)) => Some(last.agents().iter().map(|a| (a.z() - &l).norm()).fold(0.0, f64::max)),
        _ => None,
    };
    let obj = summary.as_object_mut().expect("object");
    obj.insert("max_deviation".into(), json!(eq.max_deviation()));
    obj.insert("final_distance_to_consensus_limit".into(), json!(limit_error));
    let summary = finish(cfg, dir, &g, summary, started)?;
    Ok(RunOutcome {
        summary,
        halted: eq.closed_loop.halted(),
    })
}

/// Per-seed configuration of a Monte Carlo batch: a closed-loop run writing
/// into `seed_<seed>/`.
pub fn seed_config(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        mode: Mode::ClosedLoop,
        seed,
        output_dir: dir.join(format!("seed_{seed}")),
        ..cfg.clone()
    }
}

fn run_monte_carlo(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let seeds: Vec<u64> = (0..cfg.num_seeds as u64).map(|s| cfg.seed.wrapping_add(s)).collect();
    let results: Vec<(u64, Result<RunOutcome, CliError>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let sub = seed_config(cfg, seed, dir);
                (seed, run(&sub))
            })
            .collect()
    });

    let mut per_seed = Vec::with_capacity(results.len());
    let mut converged_times = Vec::new();
    let (mut halted, mut failed) = (0usize, 0usize);
    for (seed, res) in &results {
        match res {
            Ok(outcome) => {
                let conv = outcome.summary["converged_at"].as_f64();
                if outcome.halted {
                    halted += 1;
                } else if let Some(t) = conv {
                    converged_times.push(t);
                }
                per_seed.push(json!({
                    "seed": seed,
                    "converged_at": conv,
                    "halted": outcome.halted,
                    "final": outcome.summary["final"],
                }));
            }
            Err(e) => {
                failed += 1;
                per_seed.push(json!({ "seed": seed, "error": e.to_string(), "exit_code": e.exit_code() }));
            }
        }
    }
    let converged = converged_times.len();
    let stats = if converged > 0 {
        let min = converged_times.iter().copied().fold(f64::INFINITY, f64::min);
        let max = converged_times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = converged_times.iter().sum::<f64>() / converged as f64;
        json!({ "min": min, "max": max, "mean": mean })
    } else {
        Value::Null
    };
    let aggregate = json!({
        "config": cfg,
        "num_seeds": cfg.num_seeds,
        "workers": workers,
        "converged": converged,
        "halted": halted,
        "failed": failed,
        "convergence_fraction": converged as f64 / cfg.num_seeds as f64,
        "converged_at": stats,
        "seeds": per_seed,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    output::write_json(&dir.join("aggregate.json"), &aggregate)?;
    Ok(RunOutcome {
        summary: aggregate,
        halted: false,
    })
}
