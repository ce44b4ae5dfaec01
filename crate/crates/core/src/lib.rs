//! Distributed synchronization of the first `k` columns of `n` rotation
//! matrices over a directed graph.
//!
//! The closed-loop controller lives in [`controller`]; [`consensus`] holds
//! the linear consensus protocol whose per-agent QR factors the closed loop
//! tracks exactly, so every trajectory of one system can be checked against
//! the other. [`integrator`] drives both with an adaptive Dormand–Prince
//! scheme and [`metrics`] turns trajectories into synchronization reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod consensus;
pub mod controller;
pub mod error;
pub mod expm;
pub mod graph;
pub mod integrator;
pub mod matops;
pub mod metrics;

pub use consensus::ConsensusState;
pub use controller::{AgentState, SwarmState};
pub use error::{Error, Result};
pub use graph::DirectedWeightedGraph;
pub use integrator::{IntegratorConfig, TrajectoryRecord};
