//! The dynamic feedback controller.
//!
//! Each agent `i` keeps an auxiliary upper-triangular `R_i` next to its
//! attitude `Q_i`. From the relative rotations `Q_ij(k) = Q_iᵀ Q_j[:, :k]` and
//! the neighbors' `R_j` it forms
//!
//! ```text
//! V_i  = Σ_j a_ij (Q_ij(k) R_j R_i⁻¹ − [I_k, 0]ᵀ)
//! U_i  = [low(V_i), 0] − [low(V_i), 0]ᵀ          (d×d, skew)
//! U_ik = low(V_i) − [I_k, 0]ᵀ (low(V_i)ᵀ [I_k, 0]ᵀ)  (first k columns of U_i)
//! Ṙ_i  = up((V_i − U_ik) R_i)
//! ```
//!
//! and moves as `Q̇_i = Q_i U_i`. Along this flow `Z_i = Q_i[:, :k] R_i`
//! follows the linear consensus protocol exactly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::DirectedWeightedGraph;
use crate::matops::{embed_identity, low, solve_right_upper, up, RotationMatrix, SkewMatrix, UpperTriPos};

/// `R` is declared singular when `min diag ≤ SINGULAR_R_TOL · max diag`.
pub const SINGULAR_R_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub q: RotationMatrix,
    pub r: UpperTriPos,
}

impl AgentState {
    /// Tall block `Z_i = Q_i[:, :k] R_i`.
    pub fn z(&self) -> DMatrix<f64> {
        let k = self.r.as_matrix().nrows();
        self.q.as_matrix().columns(0, k) * self.r.as_matrix()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    n: usize,
    d: usize,
    k: usize,
    agents: Vec<AgentState>,
}

impl SwarmState {
    pub fn new(agents: Vec<AgentState>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::Dimension("swarm needs at least one agent".into()))?;
        let d = first.q.dim();
        let k = first.r.as_matrix().nrows();
        if d < 2 || k < 1 || k > d - 1 {
            return Err(Error::Dimension(format!("need d >= 2 and 1 <= k <= d-1, got d = {d}, k = {k}")));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.q.dim() != d || a.r.as_matrix().nrows() != k {
                return Err(Error::Dimension(format!("agent {} has inconsistent dimensions", i + 1)));
            }
            check_r(i, a.r.as_matrix())?;
        }
        Ok(Self {
            n: agents.len(),
            d,
            k,
            agents,
        })
    }

    /// Every agent at `Q = I`, `R = I`.
    pub fn synchronized_identity(n: usize, d: usize, k: usize) -> Result<Self> {
        Self::new(
            (0..n)
                .map(|_| AgentState {
                    q: RotationMatrix::identity(d),
                    r: UpperTriPos::identity(k),
                })
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentState {
        &self.agents[i]
    }

    pub fn z_blocks(&self) -> Vec<DMatrix<f64>> {
        self.agents.iter().map(AgentState::z).collect()
    }

    /// Applies `Q_i ← G·Q_i` to every agent.
    pub fn rotated(&self, g: &RotationMatrix) -> Self {
        let agents = self
            .agents
            .iter()
            .map(|a| AgentState {
                q: RotationMatrix::from_raw(g.as_matrix() * a.q.as_matrix()),
                r: a.r.clone(),
            })
            .collect();
        Self { agents, ..*self }
    }

    pub(crate) fn from_parts_unchecked(d: usize, k: usize, agents: Vec<AgentState>) -> Self {
        Self {
            n: agents.len(),
            d,
            k,
            agents,
        }
    }
}

/// Per-agent controller quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub v: DMatrix<f64>,
    pub u_full: SkewMatrix,
    pub u_k: DMatrix<f64>,
    pub r_dot: DMatrix<f64>,
}

/// Time derivative of one agent's state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDerivative {
    pub dq: DMatrix<f64>,
    pub dr: DMatrix<f64>,
}

fn r_ratio(r: &DMatrix<f64>) -> f64 {
    let diag = r.diagonal();
    let max = diag.max();
    if !(max > 0.0) {
        return 0.0;
    }
    diag.min() / max
}

pub(crate) fn check_r(agent: usize, r: &DMatrix<f64>) -> Result<()> {
    let ratio = r_ratio(r);
    if !(ratio > SINGULAR_R_TOL) {
        return Err(Error::SingularR { agent, ratio });
    }
    Ok(())
}

/// `Q_iᵀ · Q_j[:, :k]`.
pub fn relative_rotation_cols(qi: &RotationMatrix, qj: &RotationMatrix, k: usize) -> DMatrix<f64> {
    qi.as_matrix().tr_mul(&qj.as_matrix().columns(0, k))
}

/// `R_j · R_i⁻¹` by triangular substitution against `R_i`. The agent index in
/// a `SingularR` error is unknown here and reported as `usize::MAX`.
pub fn relative_r(ri: &UpperTriPos, rj: &UpperTriPos) -> Result<DMatrix<f64>> {
    check_r(usize::MAX, ri.as_matrix())?;
    Ok(solve_right_upper(rj.as_matrix(), ri.as_matrix()))
}

pub(crate) fn compute_v_raw(
    i: usize,
    qs: &[DMatrix<f64>],
    rs: &[DMatrix<f64>],
    k: usize,
    g: &DirectedWeightedGraph,
) -> Result<DMatrix<f64>> {
    let d = qs[i].nrows();
    check_r(i, &rs[i])?;
    let eye = embed_identity(d, k);
    let mut v = DMatrix::zeros(d, k);
    for &(j, a) in g.neighbors(i) {
        let q_ij = qs[i].tr_mul(&qs[j].columns(0, k));
        let r_ji = solve_right_upper(&rs[j], &rs[i]);
        v += (q_ij * r_ji - &eye) * a;
    }
    Ok(v)
}

/// `V_i` from relative information of agent `i`'s neighbors. Neighbors are
/// summed in ascending index order.
pub fn compute_v(i: usize, swarm: &SwarmState, g: &DirectedWeightedGraph) -> Result<DMatrix<f64>> {
    check_graph(swarm, g)?;
    let k = swarm.k;
    let mut v = DMatrix::zeros(swarm.d, k);
    check_r(i, swarm.agents[i].r.as_matrix())?;
    let me = &swarm.agents[i];
    let eye = embed_identity(swarm.d, k);
    for &(j, a) in g.neighbors(i) {
        let other = &swarm.agents[j];
        let q_ij = relative_rotation_cols(&me.q, &other.q, k);
        let r_ji = relative_r(&me.r, &other.r)?;
        v += (q_ij * r_ji - &eye) * a;
    }
    Ok(v)
}

/// `[low(V), 0] − [low(V), 0]ᵀ`, padded with `d − k` zero columns.
pub fn compute_u_full(v: &DMatrix<f64>) -> SkewMatrix {
    let (d, k) = v.shape();
    let lv = low(v).expect("V is tall");
    let mut p = DMatrix::zeros(d, d);
    p.columns_mut(0, k).copy_from(&lv);
    SkewMatrix::from_generator(&p)
}

/// First `k` columns of [`compute_u_full`], evaluated directly.
pub fn compute_u_k(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, k) = v.shape();
    let lv = low(v).expect("V is tall");
    let top_t = lv.rows(0, k).transpose();
    let mut upper = DMatrix::zeros(d, k);
    upper.rows_mut(0, k).copy_from(&top_t);
    lv - upper
}

/// `up((V − U_k)·R)`.
pub fn compute_r_dot(v: &DMatrix<f64>, u_k: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    up(&((v - u_k) * r)).expect("V is tall")
}

/// All controller quantities for agent `i`.
pub fn control(i: usize, swarm: &SwarmState, g: &DirectedWeightedGraph) -> Result<ControlOutput> {
    let v = compute_v(i, swarm, g)?;
    let u_full = compute_u_full(&v);
    let u_k = compute_u_k(&v);
    let r_dot = compute_r_dot(&v, &u_k, swarm.agents[i].r.as_matrix());
    Ok(ControlOutput { v, u_full, u_k, r_dot })
}

pub(crate) fn derivative_raw(
    qs: &[DMatrix<f64>],
    rs: &[DMatrix<f64>],
    k: usize,
    g: &DirectedWeightedGraph,
) -> Result<Vec<AgentDerivative>> {
    (0..qs.len())
        .map(|i| {
            let v = compute_v_raw(i, qs, rs, k, g)?;
            let u_full = compute_u_full(&v);
            let u_k = compute_u_k(&v);
            Ok(AgentDerivative {
                dq: &qs[i] * u_full.as_matrix(),
                dr: compute_r_dot(&v, &u_k, &rs[i]),
            })
        })
        .collect()
}

/// Closed-loop vector field: `Q̇_i = Q_i U_i`, `Ṙ_i` as above.
pub fn closed_loop_derivative(swarm: &SwarmState, g: &DirectedWeightedGraph) -> Result<Vec<AgentDerivative>> {
    check_graph(swarm, g)?;
    let qs: Vec<_> = swarm.agents.iter().map(|a| a.q.as_matrix().clone()).collect();
    let rs: Vec<_> = swarm.agents.iter().map(|a| a.r.as_matrix().clone()).collect();
    derivative_raw(&qs, &rs, swarm.k, g)
}

fn check_graph(swarm: &SwarmState, g: &DirectedWeightedGraph) -> Result<()> {
    if g.n() != swarm.n {
        return Err(Error::Dimension(format!(
            "graph has {} nodes but swarm has {} agents",
            g.n(),
            swarm.n
        )));
    }
    Ok(())
}
