//! Benchmark harness around the `enksgd` library: experiment configuration,
//! seeded parallel runs, summary statistics, and trace emission.

pub mod config;
pub mod emit;
pub mod runner;

pub use config::{parse_cli, ExperimentConfig, Method, TraceFormat};
pub use emit::{emit_summary, emit_trace, TraceDocument};
pub use runner::{
    build_problem, derive_seed, log10_clamped, run_experiment, run_experiment_on, summarize,
    summarize_runs, SummaryStats,
};

/// Harness-level errors. Usage problems exit with code 2, everything else
/// with code 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    HelpRequested(String),

    #[error("run {run} (seed {seed}) failed: {source}")]
    Run {
        run: usize,
        seed: u64,
        source: enksgd::Error,
    },

    #[error("cannot summarize an empty sample")]
    EmptySample,

    #[error(transparent)]
    Core(#[from] enksgd::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Full CLI entry point: parse, run, emit, report. Returns the process exit
/// code.
pub fn run_main(args: &[String]) -> i32 {
    let config = match parse_cli(args) {
        Ok(config) => config,
        Err(CliError::HelpRequested(text)) => {
            println!("{text}");
            return 0;
        }
        Err(err) => {
            eprintln!("{err}");
            return 2;
        }
    };
    match execute(&config) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn execute(config: &ExperimentConfig) -> Result<(), CliError> {
    let problem = build_problem(config)?;
    if let Some(dir) = &config.dump_data {
        match problem.dataset() {
            Some(dataset) => {
                dataset.write_csv_dir(dir)?;
                println!("dataset written to {}", dir.display());
            }
            None => println!(
                "problem '{}' has no simulated dataset; nothing dumped",
                config.problem
            ),
        }
    }

    let (results, stats) = run_experiment_on(&problem, config)?;

    if let Some(out) = &config.out {
        emit_trace(&results, config.format, out, config)?;
        let summary_path = summary_path_for(out);
        emit_summary(&stats, &summary_path, config)?;
        println!(
            "trace written to {}; summary to {}",
            out.display(),
            summary_path.display()
        );
    }

    println!(
        "problem={} method={} runs={} particles={} beta={:e} delta={:e} budget={} max-iters={}",
        config.problem,
        config.method,
        config.runs,
        config.particles,
        config.beta,
        config.delta,
        config
            .budget
            .map_or_else(|| "none".to_string(), |b| b.to_string()),
        config.max_iters,
    );
    println!(
        "log10(phi): mean={:.6} median={:.6} var={:.6e} ({})",
        stats.mean_log10_phi,
        stats.median_log10_phi,
        stats.var_log10_phi,
        stats.variance_convention
    );
    println!("mean forward evaluations: {:.1}", stats.mean_total_evals);
    Ok(())
}

/// `<out>.summary.json` next to the trace file.
pub fn summary_path_for(out: &std::path::Path) -> std::path::PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".summary.json");
    out.with_file_name(name)
}
