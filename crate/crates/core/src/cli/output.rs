//! CSV and JSON writers. Floats are written with 17 significant digits so
//! every value survives a text round trip bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::cli::CliError;
use crate::consensus::ConsensusState;
use crate::controller::{AgentState, SwarmState};
use crate::error::{Error, Result};
use crate::integrator::TrajectoryRecord;
use crate::matops::{RotationMatrix, UpperTriPos, ORTH_TOL_STATE};
use crate::metrics::SyncReport;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> std::result::Result<(), CliError> {
    let mut w = create(path)?;
    let body = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let line: Vec<String> = row.into_iter().map(fmt_f64).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()
    };
    body().map_err(|e| CliError::io(path, e))
}

pub fn swarm_header(n: usize, d: usize, k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for a in 1..=n {
        for c in 1..=d {
            for r in 1..=d {
                h.push(format!("q{a}_{r}_{c}"));
            }
        }
        for r in 1..=k {
            for c in r..=k {
                h.push(format!("r{a}_{r}_{c}"));
            }
        }
    }
    h
}

fn swarm_row(t: f64, s: &SwarmState) -> Vec<f64> {
    let mut row = vec![t];
    row.extend(crate::integrator::flatten_swarm(s));
    row
}

/// One row per snapshot: time, then per agent `Q` column-major and the upper
/// triangle of `R` row-major.
pub fn write_swarm_trajectory(path: &Path, rec: &TrajectoryRecord<SwarmState>) -> std::result::Result<(), CliError> {
    let Some(first) = rec.snapshots.first() else {
        return write_rows(path, &["t".to_string()], std::iter::empty());
    };
    let header = swarm_header(first.n(), first.d(), first.k());
    write_rows(
        path,
        &header,
        rec.times.iter().zip(&rec.snapshots).map(|(&t, s)| swarm_row(t, s)),
    )
}

pub fn write_consensus_trajectory(path: &Path, rec: &TrajectoryRecord<ConsensusState>) -> std::result::Result<(), CliError> {
    let Some(first) = rec.snapshots.first() else {
        return write_rows(path, &["t".to_string()], std::iter::empty());
    };
    let mut header = vec!["t".to_string()];
    for a in 1..=first.n() {
        for c in 1..=first.k() {
            for r in 1..=first.d() {
                header.push(format!("z{a}_{r}_{c}"));
            }
        }
    }
    write_rows(
        path,
        &header,
        rec.times.iter().zip(&rec.snapshots).map(|(&t, s)| {
            let mut row = vec![t];
            for b in s.blocks() {
                row.extend_from_slice(b.as_slice());
            }
            row
        }),
    )
}

pub fn metrics_header(report: &SyncReport) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    if let Some(q) = &report.q_sync_error {
        for (c, per_agent) in q.iter().enumerate() {
            for a in 1..=per_agent.len() {
                h.push(format!("q_err_k{}_a{a}", c + 1));
            }
        }
    }
    for (name, series) in [
        ("r_err", &report.r_sync_error),
        ("u_norm", &report.u_norm),
        ("rdot_norm", &report.r_dot_norm),
    ] {
        if let Some(s) = series {
            for a in 1..=s.len() {
                h.push(format!("{name}_a{a}"));
            }
        }
    }
    if report.z_diameter.is_some() {
        h.push("z_diameter".into());
    }
    h
}

pub fn metrics_rows(report: &SyncReport) -> Vec<Vec<f64>> {
    (0..report.times.len())
        .map(|s| {
            let mut row = vec![report.times[s]];
            if let Some(q) = &report.q_sync_error {
                for per_agent in q {
                    row.extend(per_agent.iter().map(|v| v[s]));
                }
            }
            for series in [&report.r_sync_error, &report.u_norm, &report.r_dot_norm].into_iter().flatten() {
                row.extend(series.iter().map(|v| v[s]));
            }
            if let Some(z) = &report.z_diameter {
                row.push(z[s]);
            }
            row
        })
        .collect()
}

pub fn write_metrics(path: &Path, report: &SyncReport) -> std::result::Result<(), CliError> {
    write_rows(path, &metrics_header(report), metrics_rows(report).into_iter())
}

pub fn write_deviation(path: &Path, deviation: &[(f64, f64)]) -> std::result::Result<(), CliError> {
    write_rows(
        path,
        &["t".to_string(), "deviation".to_string()],
        deviation.iter().map(|&(t, d)| vec![t, d]),
    )
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> std::result::Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Parses a CSV of floats with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .map_err(|e| Error::Config(e.to_string()))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), no + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Config(format!(
                "{} line {}: expected {} fields, got {}",
                path.display(),
                no + 2,
                header.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Parses a trajectory CSV back into `(t, swarm)` pairs. States are taken
/// as written, without re-validation.
pub fn read_swarm_trajectory(path: &Path, n: usize, d: usize, k: usize) -> Result<Vec<(f64, SwarmState)>> {
    let (header, rows) = read_csv(path)?;
    if header != swarm_header(n, d, k) {
        return Err(Error::Config(format!(
            "{} does not hold a trajectory with n = {n}, d = {d}, k = {k}",
            path.display()
        )));
    }
    Ok(rows
        .into_iter()
        .map(|row| (row[0], crate::integrator::unflatten_swarm(&row[1..], n, d, k)))
        .collect())
}

/// First row of a trajectory CSV, validated as an initial swarm.
pub fn read_initial_swarm(path: &Path, n: usize, d: usize, k: usize) -> Result<SwarmState> {
    let rows = read_swarm_trajectory(path, n, d, k)?;
    let (_, swarm) = rows
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config(format!("{} has no data rows", path.display())))?;
    let agents = swarm
        .agents()
        .iter()
        .map(|a| {
            Ok(AgentState {
                q: RotationMatrix::new(a.q.as_matrix().clone(), ORTH_TOL_STATE)?,
                r: UpperTriPos::new(a.r.as_matrix().clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SwarmState::new(agents)
}

/// Column block as nested rows, for JSON.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
