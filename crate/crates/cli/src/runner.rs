//! Experiment execution: seed derivation, parallel independent runs, and the
//! summary statistics reported for each experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use enksgd::optimizer::{cfd_gd_minimize, enksgd_minimize, OptimizerConfig, RunResult};
use enksgd::problems::{NoiseModel, ProblemRegistry, ProblemSpec};
use enksgd::transform::UpdateVariant;

use crate::config::{ExperimentConfig, Method};
use crate::CliError;

/// Index used to derive the dataset seed from the master seed, outside the
/// range of run indices so datasets stay fixed while runs vary.
pub const DATASET_SEED_INDEX: u64 = u64::MAX;

/// Stable seed derivation (splitmix64 of master and index): distinct indices
/// give distinct, order-independent seeds, so run `i`'s trace does not
/// change when the number of runs grows.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `log10` with the argument clamped to the smallest positive double, so a
/// run that lands exactly on the minimizer yields a large negative number
/// instead of poisoning the statistics.
pub fn log10_clamped(phi: f64) -> f64 {
    phi.max(f64::MIN_POSITIVE).log10()
}

/// Mean, median, and sample variance of a non-empty sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryCore {
    pub mean: f64,
    pub median: f64,
    pub variance: f64,
}

/// Summarizes a sample: arithmetic mean, median (average of the central pair
/// for even lengths), and sample variance (divisor `n - 1`; zero for a
/// single value).
pub fn summarize(values: &[f64]) -> Result<SummaryCore, CliError> {
    if values.is_empty() {
        return Err(CliError::EmptySample);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let variance = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(SummaryCore {
        mean,
        median,
        variance,
    })
}

/// Cross-run statistics of `log10 Phi` at the terminal mean, plus the mean
/// evaluation count. The variance convention is recorded alongside the
/// numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub runs: usize,
    pub mean_log10_phi: f64,
    pub median_log10_phi: f64,
    pub var_log10_phi: f64,
    pub mean_total_evals: f64,
    pub variance_convention: String,
}

pub fn summarize_runs(results: &[RunResult<f64>]) -> Result<SummaryStats, CliError> {
    let logs: Vec<f64> = results
        .iter()
        .map(|r| log10_clamped(r.terminal_phi))
        .collect();
    let core = summarize(&logs)?;
    let mean_total_evals =
        results.iter().map(|r| r.total_evals as f64).sum::<f64>() / results.len() as f64;
    Ok(SummaryStats {
        runs: results.len(),
        mean_log10_phi: core.mean,
        median_log10_phi: core.median,
        var_log10_phi: core.variance,
        mean_total_evals,
        variance_convention: "sample (n-1)".to_string(),
    })
}

/// Builds the problem named by the experiment, with the dataset seed derived
/// from the master seed and the configured observation noise applied.
pub fn build_problem(config: &ExperimentConfig) -> Result<ProblemSpec<f64>, CliError> {
    let registry = ProblemRegistry::<f64>::with_builtins();
    build_problem_from(&registry, config)
}

/// Same as [`build_problem`] but against a caller-extended registry.
pub fn build_problem_from(
    registry: &ProblemRegistry<f64>,
    config: &ExperimentConfig,
) -> Result<ProblemSpec<f64>, CliError> {
    let dataset_seed = derive_seed(config.seed, DATASET_SEED_INDEX);
    let problem = registry.build(&config.problem, dataset_seed)?;
    Ok(problem.with_noise(NoiseModel::new(config.noise_sigma)?))
}

fn optimizer_config(config: &ExperimentConfig, run_seed: u64) -> OptimizerConfig<f64> {
    OptimizerConfig {
        k_particles: config.particles,
        beta: config.beta,
        delta: config.delta,
        n_max: config.max_iters,
        budget: config.budget,
        seed: run_seed,
        variant: config.method.variant().unwrap_or(UpdateVariant::EnKsgd),
        ..OptimizerConfig::default()
    }
}

/// Executes `runs` independent optimizations in parallel workers with
/// per-run derived seeds and identical budget accounting for every method.
/// Results come back in run-index order; the first failing run aborts the
/// experiment with its index and seed.
pub fn run_experiment(
    config: &ExperimentConfig,
) -> Result<(Vec<RunResult<f64>>, SummaryStats), CliError> {
    let problem = build_problem(config)?;
    run_experiment_on(&problem, config)
}

/// Runs an experiment against an already-built problem (used by callers that
/// share one problem across several method configurations).
pub fn run_experiment_on(
    problem: &ProblemSpec<f64>,
    config: &ExperimentConfig,
) -> Result<(Vec<RunResult<f64>>, SummaryStats), CliError> {
    let x0 = problem.initial_mean().to_owned();
    let outcomes: Vec<Result<RunResult<f64>, CliError>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derive_seed(config.seed, run as u64);
            let opt = optimizer_config(config, run_seed);
            let result = match config.method {
                Method::Enksgd | Method::Enkf => enksgd_minimize(problem, &x0.view(), &opt),
                Method::CfdGd => cfd_gd_minimize(problem, &x0.view(), &opt, config.stencil),
            };
            result.map_err(|source| CliError::Run {
                run,
                seed: run_seed,
                source,
            })
        })
        .collect();

    let mut results = Vec::with_capacity(config.runs);
    for outcome in outcomes {
        results.push(outcome?);
    }
    let stats = summarize_runs(&results)?;
    Ok((results, stats))
}
