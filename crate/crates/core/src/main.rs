use std::process::ExitCode;

use clap::Parser;
use colsync::cli::{self, args::Args, CliError, EXIT_CONFIG};

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match args.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if args.print_config {
        print!("{}", cfg.to_toml_string());
        return ExitCode::SUCCESS;
    }
    match cli::run(&cfg) {
        Ok(outcome) => {
            if outcome.halted {
                eprintln!("integration halted: R became numerically singular");
            }
            if let Some(t) = outcome.summary.get("converged_at").and_then(|v| v.as_f64()) {
                eprintln!("converged at t = {t}");
            }
            if let Some(f) = outcome.summary.get("convergence_fraction").and_then(|v| v.as_f64()) {
                eprintln!("convergence fraction {f}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e @ CliError::Lib(_)) | Err(e @ CliError::Io { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
