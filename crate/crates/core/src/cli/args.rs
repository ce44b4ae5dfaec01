//! Command-line flags. Each flag overrides the field of the same name in the
//! configuration file (or the built-in default when no file is given).

use std::path::PathBuf;

use clap::Parser;

use crate::cli::config::{ExperimentConfig, GraphSpec};
use crate::error::Result;

#[derive(Debug, Clone, Default, Parser)]
#[command(
    name = "colsync",
    version,
    about = "Simulate distributed column synchronization of rotation matrices"
)]
pub struct Args {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// closed_loop | consensus | equivalence | monte_carlo
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long = "d")]
    pub d: Option<usize>,
    #[arg(long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_seeds: Option<usize>,
    /// gaussian_qr | identity | from_file
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    /// Generator name (complete, chain, random_qsc, unobserved_leader) or a
    /// graph file.
    #[arg(long)]
    pub graph: Option<String>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub h_init: Option<f64>,
    #[arg(long)]
    pub h_min: Option<f64>,
    #[arg(long)]
    pub h_max: Option<f64>,
    #[arg(long)]
    pub reproject_threshold: Option<f64>,
    #[arg(long)]
    pub record_stride: Option<usize>,
    #[arg(long)]
    pub sample_interval: Option<f64>,
    /// Convergence tolerance on the column errors.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Time the errors must stay below `tol`.
    #[arg(long)]
    pub dwell: Option<f64>,
    #[arg(long = "out")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

impl Args {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.mode {
            cfg.mode = m.parse()?;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        set!(
            n => n, d => d, k => k, seed => seed, num_seeds => num_seeds,
            t_final => integrator.t_final, rel_tol => integrator.rel_tol,
            abs_tol => integrator.abs_tol, h_init => integrator.h_init,
            h_min => integrator.h_min, h_max => integrator.h_max,
            reproject_threshold => integrator.reproject_threshold,
            record_stride => integrator.record_stride,
            tol => tol, dwell => dwell, out => output_dir,
        );
        if let Some(i) = &self.init {
            cfg.init = i.parse()?;
        }
        if let Some(p) = &self.init_file {
            cfg.init_file = Some(p.clone());
        }
        if let Some(dt) = self.sample_interval {
            cfg.integrator.sample_interval = Some(dt);
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(g) = &self.graph {
            cfg.graph = GraphSpec::from_arg(g, &cfg.graph);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
