//! Experiment configuration: a TOML document whose every field can also be
//! overridden from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::metrics::{DEFAULT_DWELL, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClosedLoop,
    Consensus,
    Equivalence,
    MonteCarlo,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_loop" => Ok(Self::ClosedLoop),
            "consensus" => Ok(Self::Consensus),
            "equivalence" => Ok(Self::Equivalence),
            "monte_carlo" => Ok(Self::MonteCarlo),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GaussianQr,
    Identity,
    FromFile,
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_qr" => Ok(Self::GaussianQr),
            "identity" => Ok(Self::Identity),
            "from_file" => Ok(Self::FromFile),
            other => Err(Error::Config(format!("unknown init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Every ordered pair is an edge.
    Complete,
    /// `1 → 2 → … → n`.
    Chain,
    /// Each ordered pair independently with `edge_probability`, redrawn until
    /// quasi-strongly connected.
    RandomQsc,
    /// Complete except that nobody observes node 1: quasi-strongly connected
    /// but not strongly connected.
    UnobservedLeader,
}

impl Generator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "complete" => Some(Self::Complete),
            "chain" => Some(Self::Chain),
            "random_qsc" => Some(Self::RandomQsc),
            "unobserved_leader" => Some(Self::UnobservedLeader),
            _ => None,
        }
    }
}

/// Where the interaction graph comes from. Exactly one of `generator`,
/// `file` and `edges` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub generator: Option<Generator>,
    pub file: Option<PathBuf>,
    /// 1-based `[i, j, a_ij]` triples.
    pub edges: Option<Vec<[f64; 3]>>,
    /// Generated weights are uniform on the open interval
    /// `(weight_min, weight_max)`.
    pub weight_min: f64,
    pub weight_max: f64,
    pub edge_probability: f64,
    pub max_retries: usize,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self {
            generator: Some(Generator::UnobservedLeader),
            file: None,
            edges: None,
            weight_min: 0.0,
            weight_max: 1.0,
            edge_probability: 0.5,
            max_retries: 1000,
        }
    }
}

impl GraphSpec {
    /// Interprets a `--graph` argument: a generator name or a file path.
    pub fn from_arg(arg: &str, base: &GraphSpec) -> Self {
        let mut spec = base.clone();
        spec.edges = None;
        match Generator::parse(arg) {
            Some(g) => {
                spec.generator = Some(g);
                spec.file = None;
            }
            None => {
                spec.generator = None;
                spec.file = Some(PathBuf::from(arg));
            }
        }
        spec
    }

    fn validate(&self) -> Result<()> {
        let sources = self.generator.is_some() as u8 + self.file.is_some() as u8 + self.edges.is_some() as u8;
        if sources != 1 {
            return Err(Error::Config(
                "graph needs exactly one of `generator`, `file` or `edges`".into(),
            ));
        }
        if self.generator.is_some() {
            if !(self.weight_min >= 0.0 && self.weight_max > self.weight_min && self.weight_max.is_finite()) {
                return Err(Error::Config(format!(
                    "need 0 <= weight_min < weight_max, got ({}, {})",
                    self.weight_min, self.weight_max
                )));
            }
            if !(self.edge_probability > 0.0 && self.edge_probability <= 1.0) {
                return Err(Error::Config(format!(
                    "edge_probability must lie in (0, 1], got {}",
                    self.edge_probability
                )));
            }
        }
        Ok(())
    }
}

/// Contents of a standalone graph file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    /// Monte Carlo runs use seeds `seed, seed + 1, …, seed + num_seeds − 1`.
    pub num_seeds: usize,
    pub init: InitKind,
    /// Trajectory CSV whose first row supplies the initial swarm.
    pub init_file: Option<PathBuf>,
    pub graph: GraphSpec,
    pub integrator: IntegratorConfig,
    pub tol: f64,
    pub dwell: f64,
    pub output_dir: PathBuf,
    /// Monte Carlo worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ClosedLoop,
            n: 5,
            d: 3,
            k: 2,
            seed: 24,
            num_seeds: 100,
            init: InitKind::GaussianQr,
            init_file: None,
            graph: GraphSpec::default(),
            integrator: IntegratorConfig::default(),
            tol: DEFAULT_TOL,
            dwell: DEFAULT_DWELL,
            output_dir: PathBuf::from("out"),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("d must be at least 2, got {}", self.d)));
        }
        if self.k < 1 || self.k > self.d - 1 {
            return Err(Error::Config(format!("k must lie in 1..={}, got {}", self.d - 1, self.k)));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.mode == Mode::MonteCarlo && self.num_seeds < 1 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        if self.init == InitKind::FromFile && self.init_file.is_none() {
            return Err(Error::Config("init = from_file needs init_file".into()));
        }
        if !(self.tol > 0.0) || !(self.dwell > 0.0) {
            return Err(Error::Config("tol and dwell must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.graph.validate()?;
        self.integrator.validate()
    }
}
