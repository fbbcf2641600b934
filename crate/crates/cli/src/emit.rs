//! Trace and summary emission. The CSV schema is one row per iteration
//! record per run; the JSON document mirrors the records and carries the
//! full experiment configuration for provenance.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use enksgd::optimizer::{IterationRecord, RunResult};

use crate::config::{ExperimentConfig, TraceFormat};
use crate::runner::{derive_seed, log10_clamped, SummaryStats};
use crate::CliError;

pub const CSV_HEADER: &str = "run,iter,phi_mean,log10_phi,dt,backtracks,cum_evals";

/// JSON trace document. Round-trips through serde with full float precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub config: ExperimentConfig,
    pub runs: Vec<TraceRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRun {
    pub run: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord<f64>>,
    pub terminal_phi: f64,
    pub total_evals: u64,
}

/// Summary document written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub config: ExperimentConfig,
    pub summary: SummaryStats,
}

pub fn trace_document(config: &ExperimentConfig, results: &[RunResult<f64>]) -> TraceDocument {
    TraceDocument {
        config: config.clone(),
        runs: results
            .iter()
            .enumerate()
            .map(|(run, result)| TraceRun {
                run,
                seed: derive_seed(config.seed, run as u64),
                records: result.trace.clone(),
                terminal_phi: result.terminal_phi,
                total_evals: result.total_evals,
            })
            .collect(),
    }
}

pub fn render_csv(results: &[RunResult<f64>]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (run, result) in results.iter().enumerate() {
        for record in &result.trace {
            out.push_str(&format!(
                "{run},{},{:?},{:?},{:?},{},{}\n",
                record.n,
                record.phi_mean,
                log10_clamped(record.phi_mean),
                record.dt,
                record.backtracks,
                record.cumulative_evals
            ));
        }
    }
    out
}

/// Writes the per-iteration traces of every run to `path` in the requested
/// format.
pub fn emit_trace(
    results: &[RunResult<f64>],
    format: TraceFormat,
    path: &Path,
    config: &ExperimentConfig,
) -> Result<(), CliError> {
    let payload = match format {
        TraceFormat::Csv => render_csv(results),
        TraceFormat::Json => serde_json::to_string_pretty(&trace_document(config, results))?,
    };
    write_file(path, &payload)
}

/// Writes the summary JSON (statistics plus the resolved configuration).
pub fn emit_summary(
    stats: &SummaryStats,
    path: &Path,
    config: &ExperimentConfig,
) -> Result<(), CliError> {
    let doc = SummaryDocument {
        config: config.clone(),
        summary: stats.clone(),
    };
    write_file(path, &serde_json::to_string_pretty(&doc)?)
}

fn write_file(path: &Path, payload: &str) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    file.write_all(payload.as_bytes())
        .map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    Ok(())
}
