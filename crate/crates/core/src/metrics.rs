//! Synchronization diagnostics along recorded trajectories.
//!
//! Agent 1 (index 0) is the reference for the pairwise errors.

use nalgebra::DMatrix;

use crate::consensus::{hull_diameter, ConsensusState};
use crate::controller::{control, SwarmState};
use crate::graph::DirectedWeightedGraph;
use crate::integrator::TrajectoryRecord;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_DWELL: f64 = 1.0;

/// A recorded trajectory of either system.
#[derive(Debug, Clone, Copy)]
pub enum Trajectory<'a> {
    ClosedLoop(&'a TrajectoryRecord<SwarmState>),
    Consensus(&'a TrajectoryRecord<ConsensusState>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncReport {
    pub times: Vec<f64>,
    /// `q_sync_error[c][i][s] = ‖Q_i(:, :c+1) − Q_1(:, :c+1)‖_F` at sample `s`,
    /// for every column prefix that is meant to synchronize (all `d` columns
    /// when `k = d − 1`, otherwise the first `k`).
    pub q_sync_error: Option<Vec<Vec<Vec<f64>>>>,
    /// `r_sync_error[i][s] = ‖R_i − R_1‖_F`.
    pub r_sync_error: Option<Vec<Vec<f64>>>,
    /// `‖U_i(t, k)‖_F`; NaN where the controller is undefined.
    pub u_norm: Option<Vec<Vec<f64>>>,
    /// `‖Ṙ_i(t, k)‖_F`; NaN where the controller is undefined.
    pub r_dot_norm: Option<Vec<Vec<f64>>>,
    /// Largest pairwise distance between consensus blocks.
    pub z_diameter: Option<Vec<f64>>,
    pub converged_at: Option<f64>,
    /// Common first `k` columns at the end of a converged run.
    pub limit_q_cols: Option<DMatrix<f64>>,
}

impl SyncReport {
    /// Largest `q_sync_error` over column prefixes and agents at sample `s`.
    pub fn max_q_error_at(&self, s: usize) -> Option<f64> {
        self.q_sync_error
            .as_ref()
            .map(|q| q.iter().flatten().map(|series| series[s]).fold(0.0, f64::max))
    }

    fn max_series_at(series: &Option<Vec<Vec<f64>>>, s: usize) -> Option<f64> {
        series
            .as_ref()
            .map(|per_agent| per_agent.iter().map(|v| v[s]).fold(0.0, f64::max))
    }

    pub fn max_r_error_at(&self, s: usize) -> Option<f64> {
        Self::max_series_at(&self.r_sync_error, s)
    }

    pub fn max_u_norm_at(&self, s: usize) -> Option<f64> {
        Self::max_series_at(&self.u_norm, s)
    }

    pub fn max_r_dot_norm_at(&self, s: usize) -> Option<f64> {
        Self::max_series_at(&self.r_dot_norm, s)
    }
}

/// Number of leading columns whose synchronization is tracked.
pub fn tracked_columns(d: usize, k: usize) -> usize {
    if k + 1 == d {
        d
    } else {
        k
    }
}

pub fn compute_report(traj: Trajectory<'_>, g: &DirectedWeightedGraph) -> SyncReport {
    match traj {
        Trajectory::ClosedLoop(rec) => closed_loop_report(rec, g),
        Trajectory::Consensus(rec) => SyncReport {
            times: rec.times.clone(),
            q_sync_error: None,
            r_sync_error: None,
            u_norm: None,
            r_dot_norm: None,
            z_diameter: Some(rec.snapshots.iter().map(hull_diameter).collect()),
            converged_at: None,
            limit_q_cols: None,
        },
    }
}

fn closed_loop_report(rec: &TrajectoryRecord<SwarmState>, g: &DirectedWeightedGraph) -> SyncReport {
    let samples = rec.snapshots.len();
    let Some(first) = rec.snapshots.first() else {
        return SyncReport {
            times: Vec::new(),
            q_sync_error: Some(Vec::new()),
            r_sync_error: Some(Vec::new()),
            u_norm: Some(Vec::new()),
            r_dot_norm: Some(Vec::new()),
            z_diameter: None,
            converged_at: None,
            limit_q_cols: None,
        };
    };
    let (n, d, k) = (first.n(), first.d(), first.k());
    let cols = tracked_columns(d, k);
    let mut q_err = vec![vec![vec![0.0; samples]; n]; cols];
    let mut r_err = vec![vec![0.0; samples]; n];
    let mut u_norm = vec![vec![0.0; samples]; n];
    let mut r_dot_norm = vec![vec![0.0; samples]; n];

    for (s, swarm) in rec.snapshots.iter().enumerate() {
        let reference = swarm.agent(0);
        for (i, a) in swarm.agents().iter().enumerate() {
            let diff = a.q.as_matrix() - reference.q.as_matrix();
            let mut acc = 0.0;
            for (c, series) in q_err.iter_mut().enumerate() {
                acc += diff.column(c).norm_squared();
                series[i][s] = acc.sqrt();
            }
            r_err[i][s] = (a.r.as_matrix() - reference.r.as_matrix()).norm();
            match control(i, swarm, g) {
                Ok(out) => {
                    u_norm[i][s] = out.u_k.norm();
                    r_dot_norm[i][s] = out.r_dot.norm();
                }
                Err(_) => {
                    u_norm[i][s] = f64::NAN;
                    r_dot_norm[i][s] = f64::NAN;
                }
            }
        }
    }

    let mut report = SyncReport {
        times: rec.times.clone(),
        q_sync_error: Some(q_err),
        r_sync_error: Some(r_err),
        u_norm: Some(u_norm),
        r_dot_norm: Some(r_dot_norm),
        z_diameter: None,
        converged_at: None,
        limit_q_cols: None,
    };
    report.converged_at = detect_convergence(&report, DEFAULT_TOL, DEFAULT_DWELL);
    if report.converged_at.is_some() {
        report.limit_q_cols = rec.snapshots.last().map(|s| s.agent(0).q.columns(k));
    }
    report
}

/// Earliest snapshot time `t*` after which every tracked `q_sync_error`
/// stays at or below `tol` for all remaining samples, provided the record
/// extends at least `dwell` beyond `t*`.
pub fn detect_convergence(report: &SyncReport, tol: f64, dwell: f64) -> Option<f64> {
    assert!(tol > 0.0 && dwell > 0.0, "tol and dwell must be positive");
    report.q_sync_error.as_ref()?;
    let t_last = *report.times.last()?;
    let mut candidate = None;
    for s in (0..report.times.len()).rev() {
        let worst = report.max_q_error_at(s)?;
        if !(worst <= tol) {
            break;
        }
        candidate = Some(report.times[s]);
    }
    candidate.filter(|t| t_last - t >= dwell)
}
