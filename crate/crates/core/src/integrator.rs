//! Adaptive Dormand–Prince 5(4) integration of the closed loop and of the
//! consensus protocol.
//!
//! Closed-loop states are flattened agent by agent: `Q_i` in column-major
//! order, then the upper triangle of `R_i` in row-major order. The strictly
//! lower part of `R_i` is not stored, so it stays exactly zero. After every
//! accepted step each `Q_i` that drifted more than `reproject_threshold` off
//! `SO(d)` is replaced by its polar factor.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{derivative_blocks, ConsensusState};
use crate::controller::{check_r, derivative_raw, AgentState, SwarmState};
use crate::error::{Error, Result};
use crate::graph::DirectedWeightedGraph;
use crate::matops::{complete_to_rotation, map_h, orthogonality_defect, project_to_so, RotationMatrix, UpperTriPos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub t_final: f64,
    pub reproject_threshold: f64,
    /// Record every `record_stride`-th accepted step (the final state is
    /// always recorded).
    pub record_stride: usize,
    /// When set, steps are shortened to land on multiples of this interval
    /// and snapshots are taken exactly there instead of by stride.
    pub sample_interval: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1.0,
            t_final: 10.0,
            reproject_threshold: 1e-9,
            record_stride: 1,
            sample_interval: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("h_min", self.h_min),
            ("t_final", self.t_final),
            ("reproject_threshold", self.reproject_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.h_min < self.h_init && self.h_init <= self.h_max) {
            return Err(Error::Config(format!(
                "need h_min < h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        if let Some(dt) = self.sample_interval {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::Config(format!("sample_interval must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// An agent's `R` lost rank; integration stopped.
    SingularR,
    /// The graph has no center; integration continued.
    GraphNotQuasiStronglyConnected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// 0-based agent index, when the event concerns one agent.
    pub agent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<S> {
    pub times: Vec<f64>,
    pub snapshots: Vec<S>,
    pub events: Vec<Event>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub reprojections: usize,
}

impl<S> TrajectoryRecord<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &S)> {
        Some((*self.times.last()?, self.snapshots.last()?))
    }

    /// True when integration stopped on a singular `R`.
    pub fn halted(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::SingularR)
    }
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so the nodes
// c_i are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - BETA * 0.75;

/// Outcome of the post-step hook.
enum PostStep {
    Continue { modified: bool },
    Halt(Event),
}

struct RawTrajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    events: Vec<Event>,
    accepted: usize,
    rejected: usize,
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], cfg: &IntegratorConfig) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let sum: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((a, b), e)| {
            let scale = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / y.len() as f64).sqrt()
}

/// Adaptive Dormand–Prince loop with PI step-size control.
///
/// A failing right-hand side inside a step counts as a rejection; if the step
/// size then underflows the last such error is returned.
fn dopri5<F, P>(y0: Vec<f64>, cfg: &IntegratorConfig, mut rhs: F, mut post_step: P) -> Result<RawTrajectory>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    P: FnMut(f64, &mut [f64]) -> Result<PostStep>,
{
    cfg.validate()?;
    let dim = y0.len();
    let mut t = 0.0;
    let mut y = y0;
    let mut out = RawTrajectory {
        times: vec![0.0],
        states: vec![y.clone()],
        events: Vec::new(),
        accepted: 0,
        rejected: 0,
    };

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    rhs(&y, &mut k[0])?;
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];

    let mut h = cfg.h_init;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut stage_error: Option<Error> = None;
    let mut next_sample: Option<usize> = cfg.sample_interval.map(|_| 1);

    while t < cfg.t_final {
        if h < cfg.h_min {
            return Err(stage_error.unwrap_or(Error::StepSizeUnderflow { t, h }));
        }
        let mut step = h.min(cfg.h_max);
        let mut landing = None;
        if let (Some(idx), Some(dt)) = (next_sample, cfg.sample_interval) {
            let ts = idx as f64 * dt;
            if ts < cfg.t_final * (1.0 - 1e-12) && t + step >= ts {
                step = ts - t;
                landing = Some(ts);
            }
        }
        if t + step >= cfg.t_final {
            step = cfg.t_final - t;
            landing = Some(cfg.t_final);
        }

        let mut failed = None;
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (m, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += step * a * k[m][i];
                    }
                }
                stage[i] = acc;
            }
            if let Err(e) = rhs(&stage, &mut k[s]) {
                failed = Some(e);
                break;
            }
        }
        if let Some(e) = failed {
            stage_error = Some(e);
            out.rejected += 1;
            h = step * 0.25;
            last_rejected = true;
            continue;
        }
        // The last stage is evaluated at the 5th-order solution (FSAL).
        y_new.copy_from_slice(&stage);
        for i in 0..dim {
            let mut e = 0.0;
            for (m, c) in E.iter().enumerate() {
                if *c != 0.0 {
                    e += c * k[m][i];
                }
            }
            err[i] = step * e;
        }
        let en = error_norm(&y, &y_new, &err, cfg);

        if en > 1.0 {
            out.rejected += 1;
            h = step * (SAFETY * en.powf(-0.2)).max(FAC_MIN);
            last_rejected = true;
            continue;
        }

        stage_error = None;
        t = landing.unwrap_or(t + step);
        std::mem::swap(&mut y, &mut y_new);
        out.accepted += 1;
        let post = post_step(t, &mut y)?;

        let mut sample_hit = false;
        if let (Some(idx), Some(dt)) = (next_sample, cfg.sample_interval) {
            if landing == Some(idx as f64 * dt) {
                sample_hit = true;
                next_sample = Some(idx + 1);
            }
        }
        let finished = t >= cfg.t_final;
        let record = finished
            || match cfg.sample_interval {
                Some(_) => sample_hit,
                None => out.accepted.is_multiple_of(cfg.record_stride),
            };

        match post {
            PostStep::Halt(event) => {
                out.events.push(event);
                out.times.push(t);
                out.states.push(y.clone());
                return Ok(out);
            }
            PostStep::Continue { modified } => {
                if record {
                    out.times.push(t);
                    out.states.push(y.clone());
                }
                if modified {
                    rhs(&y, &mut k[0])?;
                } else {
                    k.swap(0, 6);
                }
            }
        }

        // A step shortened to hit a sample or the final time keeps the
        // controller's proposal.
        if landing.is_none() || step >= h {
            let fac = if en == 0.0 {
                FAC_MAX
            } else {
                SAFETY * en.powf(-ALPHA) * err_old.powf(BETA)
            };
            let fac_max = if last_rejected { 1.0 } else { FAC_MAX };
            h = step * fac.clamp(FAC_MIN, fac_max);
        }
        err_old = en.max(1e-4);
        last_rejected = false;
    }
    Ok(out)
}

/// Packs a swarm into the integrator's state vector.
pub fn flatten_swarm(swarm: &SwarmState) -> Vec<f64> {
    let k = swarm.k();
    let mut y = Vec::with_capacity(swarm.n() * (swarm.d() * swarm.d() + k * (k + 1) / 2));
    for a in swarm.agents() {
        y.extend_from_slice(a.q.as_matrix().as_slice());
        let r = a.r.as_matrix();
        for i in 0..k {
            for j in i..k {
                y.push(r[(i, j)]);
            }
        }
    }
    y
}

fn unflatten_raw(y: &[f64], n: usize, d: usize, k: usize) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let per = d * d + k * (k + 1) / 2;
    let mut qs = Vec::with_capacity(n);
    let mut rs = Vec::with_capacity(n);
    for a in 0..n {
        let chunk = &y[a * per..(a + 1) * per];
        qs.push(DMatrix::from_column_slice(d, d, &chunk[..d * d]));
        let mut r = DMatrix::zeros(k, k);
        let mut p = d * d;
        for i in 0..k {
            for j in i..k {
                r[(i, j)] = chunk[p];
                p += 1;
            }
        }
        rs.push(r);
    }
    (qs, rs)
}

/// Inverse of [`flatten_swarm`]. Component invariants are not re-validated.
pub fn unflatten_swarm(y: &[f64], n: usize, d: usize, k: usize) -> SwarmState {
    let (qs, rs) = unflatten_raw(y, n, d, k);
    let agents = qs
        .into_iter()
        .zip(rs)
        .map(|(q, r)| AgentState {
            q: RotationMatrix::from_raw(q),
            r: UpperTriPos::new(r.clone()).unwrap_or_else(|_| upper_unchecked(r)),
        })
        .collect();
    SwarmState::from_parts_unchecked(d, k, agents)
}

fn upper_unchecked(r: DMatrix<f64>) -> UpperTriPos {
    // A singular R only appears in the snapshot that triggered the halt.
    let k = r.nrows();
    let mut fixed = r;
    for i in 0..k {
        if !(fixed[(i, i)] > 0.0) {
            fixed[(i, i)] = f64::MIN_POSITIVE;
        }
    }
    UpperTriPos::new(fixed).expect("diagonal forced positive")
}

/// Integrates the closed loop from `swarm0`.
pub fn integrate_closed_loop(
    swarm0: &SwarmState,
    g: &DirectedWeightedGraph,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryRecord<SwarmState>> {
    let (n, d, k) = (swarm0.n(), swarm0.d(), swarm0.k());
    if g.n() != n {
        return Err(Error::Dimension(format!("graph has {} nodes but swarm has {n} agents", g.n())));
    }
    let mut events = Vec::new();
    if !g.is_quasi_strongly_connected() {
        events.push(Event {
            time: 0.0,
            kind: EventKind::GraphNotQuasiStronglyConnected,
            agent: None,
        });
    }
    let per = d * d + k * (k + 1) / 2;
    let threshold = cfg.reproject_threshold;
    let mut reprojections = 0usize;

    let rhs = |y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (qs, rs) = unflatten_raw(y, n, d, k);
        let derivs = derivative_raw(&qs, &rs, k, g)?;
        for (a, der) in derivs.iter().enumerate() {
            let chunk = &mut dy[a * per..(a + 1) * per];
            chunk[..d * d].copy_from_slice(der.dq.as_slice());
            let mut p = d * d;
            for i in 0..k {
                for j in i..k {
                    chunk[p] = der.dr[(i, j)];
                    p += 1;
                }
            }
        }
        Ok(())
    };

    let post = |t: f64, y: &mut [f64]| -> Result<PostStep> {
        let mut modified = false;
        for a in 0..n {
            let chunk = &mut y[a * per..(a + 1) * per];
            let q = DMatrix::from_column_slice(d, d, &chunk[..d * d]);
            if orthogonality_defect(&q) > threshold {
                let p = project_to_so(&q)?;
                chunk[..d * d].copy_from_slice(p.as_matrix().as_slice());
                reprojections += 1;
                modified = true;
            }
        }
        let (_, rs) = unflatten_raw(y, n, d, k);
        for (a, r) in rs.iter().enumerate() {
            if check_r(a, r).is_err() {
                return Ok(PostStep::Halt(Event {
                    time: t,
                    kind: EventKind::SingularR,
                    agent: Some(a),
                }));
            }
        }
        Ok(PostStep::Continue { modified })
    };

    let raw = match dopri5(flatten_swarm(swarm0), cfg, rhs, post) {
        Ok(raw) => raw,
        Err(Error::SingularR { agent, .. }) => {
            // Every step attempt from the current state hit a singular R.
            return Err(Error::SingularR { agent, ratio: 0.0 });
        }
        Err(e) => return Err(e),
    };
    events.extend(raw.events);
    Ok(TrajectoryRecord {
        snapshots: raw.states.iter().map(|y| unflatten_swarm(y, n, d, k)).collect(),
        times: raw.times,
        events,
        accepted_steps: raw.accepted,
        rejected_steps: raw.rejected,
        reprojections,
    })
}

fn flatten_blocks(z: &[DMatrix<f64>]) -> Vec<f64> {
    z.iter().flat_map(|b| b.as_slice().iter().copied()).collect()
}

fn unflatten_blocks(y: &[f64], n: usize, d: usize, k: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|i| DMatrix::from_column_slice(d, k, &y[i * d * k..(i + 1) * d * k]))
        .collect()
}

/// Integrates the consensus protocol from `z0`.
pub fn integrate_consensus(
    z0: &ConsensusState,
    g: &DirectedWeightedGraph,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryRecord<ConsensusState>> {
    let (n, d, k) = (z0.n(), z0.d(), z0.k());
    if g.n() != n {
        return Err(Error::Dimension(format!("graph has {} nodes but state has {n} blocks", g.n())));
    }
    let rhs = |y: &[f64], dy: &mut [f64]| -> Result<()> {
        let z = unflatten_blocks(y, n, d, k);
        for (i, b) in derivative_blocks(&z, g).iter().enumerate() {
            dy[i * d * k..(i + 1) * d * k].copy_from_slice(b.as_slice());
        }
        Ok(())
    };
    let post = |_: f64, _: &mut [f64]| Ok(PostStep::Continue { modified: false });
    let raw = dopri5(flatten_blocks(z0.blocks()), cfg, rhs, post)?;
    Ok(TrajectoryRecord {
        snapshots: raw
            .states
            .iter()
            .map(|y| ConsensusState::new(unflatten_blocks(y, n, d, k)).expect("uniform blocks"))
            .collect(),
        times: raw.times,
        events: raw.events,
        accepted_steps: raw.accepted,
        rejected_steps: raw.rejected,
        reprojections: 0,
    })
}

/// Builds the closed-loop initial state whose `Q_i[:, :k] R_i` reproduces the
/// blocks of `z0`.
pub fn swarm_from_consensus<R: Rng + ?Sized>(z0: &ConsensusState, rng: &mut R) -> Result<SwarmState> {
    let agents = z0
        .blocks()
        .iter()
        .map(|z| {
            let (q, r) = map_h(z)?;
            Ok(AgentState {
                q: complete_to_rotation(&q, rng)?,
                r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SwarmState::new(agents)
}

/// Paired integration of the closed loop and the consensus protocol.
#[derive(Debug, Clone)]
pub struct EquivalenceRun {
    pub closed_loop: TrajectoryRecord<SwarmState>,
    pub consensus: TrajectoryRecord<ConsensusState>,
    /// `(t, max_i ‖Q_i[:, :k] R_i − Z_i‖_F)` on the shared sample grid.
    pub deviation: Vec<(f64, f64)>,
}

impl EquivalenceRun {
    pub fn max_deviation(&self) -> f64 {
        self.deviation.iter().map(|&(_, d)| d).fold(0.0, f64::max)
    }
}

/// Number of samples on the shared grid when the config does not set one.
pub const DEFAULT_EQUIVALENCE_SAMPLES: usize = 100;

/// Integrates both systems from the same initial blocks and measures how far
/// the closed loop's `Q_i[:, :k] R_i` strays from `Z_i`.
pub fn equivalence_run<R: Rng + ?Sized>(
    z0: &ConsensusState,
    g: &DirectedWeightedGraph,
    cfg: &IntegratorConfig,
    rng: &mut R,
) -> Result<EquivalenceRun> {
    let swarm0 = swarm_from_consensus(z0, rng)?;
    let mut grid_cfg = cfg.clone();
    if grid_cfg.sample_interval.is_none() {
        grid_cfg.sample_interval = Some(cfg.t_final / DEFAULT_EQUIVALENCE_SAMPLES as f64);
    }
    let closed_loop = integrate_closed_loop(&swarm0, g, &grid_cfg)?;
    let consensus = integrate_consensus(z0, g, &grid_cfg)?;
    let deviation = closed_loop
        .times
        .iter()
        .zip(&closed_loop.snapshots)
        .zip(consensus.times.iter().zip(&consensus.snapshots))
        .map(|((&t, swarm), (&tc, z))| {
            debug_assert_eq!(t, tc);
            let dev = swarm
                .agents()
                .iter()
                .zip(z.blocks())
                .map(|(a, zb)| (a.z() - zb).norm())
                .fold(0.0, f64::max);
            (t, dev)
        })
        .collect();
    Ok(EquivalenceRun {
        closed_loop,
        consensus,
        deviation,
    })
}
