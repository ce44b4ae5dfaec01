//! Seeded construction of initial states and graphs.
//!
//! All randomness comes from ChaCha8 keyed by the experiment seed. Agent `i`
//! (0-based) draws from stream `i`; graph weights and rotation completion use
//! the dedicated streams below, so adding agents never perturbs the graph.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cli::config::{ExperimentConfig, Generator, GraphFile, GraphSpec, InitKind};
use crate::consensus::ConsensusState;
use crate::controller::{AgentState, SwarmState};
use crate::error::{Error, Result};
use crate::graph::{self, DirectedWeightedGraph};
use crate::matops::{qr_positive, RotationMatrix, ORTH_TOL_FRESH};

pub const GRAPH_STREAM: u64 = 1 << 40;
pub const COMPLETION_STREAM: u64 = (1 << 40) + 1;

const MAX_REDRAWS: usize = 16;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Per agent: QR-factorize a standard Gaussian `d×d` draw, flip the last
/// column of the orthogonal factor if its determinant is negative, and take
/// the triangular factor of a Gaussian `k×k` draw as `R`.
pub fn init_gaussian_qr(seed: u64, n: usize, d: usize, k: usize) -> Result<SwarmState> {
    let agents = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let q = redraw(|| {
                let (q, _) = qr_positive(&gaussian(&mut rng, d, d))?;
                let mut q = q.into_inner();
                if q.determinant() < 0.0 {
                    q.column_mut(d - 1).neg_mut();
                }
                RotationMatrix::new(q, ORTH_TOL_FRESH)
            })?;
            let r = redraw(|| Ok(qr_positive(&gaussian(&mut rng, k, k))?.1))?;
            Ok(AgentState { q, r })
        })
        .collect::<Result<Vec<_>>>()?;
    SwarmState::new(agents)
}

fn redraw<T>(mut draw: impl FnMut() -> Result<T>) -> Result<T> {
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        match draw() {
            Ok(v) => return Ok(v),
            Err(e @ Error::RankDeficient { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// Uniform weight on the open interval `(lo, hi)`.
fn open_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let w = rng.random_range(lo..hi);
        if w > lo && w > 0.0 {
            return w;
        }
    }
}

pub fn generate_graph(spec: &GraphSpec, n: usize, seed: u64) -> Result<DirectedWeightedGraph> {
    let mut rng = stream_rng(seed, GRAPH_STREAM);
    let (lo, hi) = (spec.weight_min, spec.weight_max);
    match spec.generator {
        Some(Generator::Complete) => graph::complete(n, |_, _| open_uniform(&mut rng, lo, hi)),
        Some(Generator::Chain) => graph::chain(n, |_, _| open_uniform(&mut rng, lo, hi)),
        Some(Generator::UnobservedLeader) => graph::unobserved_leader(n, |_, _| open_uniform(&mut rng, lo, hi)),
        Some(Generator::RandomQsc) => {
            for _ in 0..spec.max_retries.max(1) {
                let mut g = DirectedWeightedGraph::empty(n);
                for i in 0..n {
                    for j in 0..n {
                        if i != j && rng.random_bool(spec.edge_probability) {
                            g.add_edge(i, j, open_uniform(&mut rng, lo, hi))?;
                        }
                    }
                }
                if g.is_quasi_strongly_connected() {
                    return Ok(g);
                }
            }
            Err(Error::Config(format!(
                "random_qsc produced no quasi-strongly connected graph in {} attempts",
                spec.max_retries
            )))
        }
        None => unreachable!("caller dispatches non-generator specs"),
    }
}

/// Resolves the configured graph.
pub fn build_graph(cfg: &ExperimentConfig) -> Result<DirectedWeightedGraph> {
    let spec = &cfg.graph;
    let g = if let Some(edges) = &spec.edges {
        DirectedWeightedGraph::from_one_based(cfg.n, edges)?
    } else if let Some(path) = &spec.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read graph file {}: {e}", path.display())))?;
        let file: GraphFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if file.n != cfg.n {
            return Err(Error::Config(format!(
                "graph file has n = {} but the experiment has n = {}",
                file.n, cfg.n
            )));
        }
        DirectedWeightedGraph::from_one_based(file.n, &file.edges)?
    } else {
        generate_graph(spec, cfg.n, cfg.seed)?
    };
    Ok(g)
}

/// Resolves the configured initial swarm.
pub fn build_swarm(cfg: &ExperimentConfig) -> Result<SwarmState> {
    match cfg.init {
        InitKind::GaussianQr => init_gaussian_qr(cfg.seed, cfg.n, cfg.d, cfg.k),
        InitKind::Identity => SwarmState::synchronized_identity(cfg.n, cfg.d, cfg.k),
        InitKind::FromFile => {
            let path = cfg.init_file.as_ref().expect("validated");
            crate::cli::output::read_initial_swarm(path, cfg.n, cfg.d, cfg.k)
        }
    }
}

/// Consensus blocks `Z_i = Q_i[:, :k] R_i` of a swarm.
pub fn consensus_from_swarm(swarm: &SwarmState) -> ConsensusState {
    ConsensusState::new(swarm.z_blocks()).expect("swarm blocks share a shape")
}
