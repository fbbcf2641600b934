//! Experiment configuration: CLI flags, config-file loading, and the
//! precedence rule (defaults, then file values, then flags).

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Arg, ArgAction, Command};
use serde::{Deserialize, Serialize};

use enksgd::problems::ProblemRegistry;
use enksgd::transform::UpdateVariant;

use crate::CliError;

/// Optimization method driven by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Enksgd,
    Enkf,
    CfdGd,
}

impl Method {
    /// The ensemble update variant; `None` for the finite-difference
    /// baseline, which has no ensemble.
    pub fn variant(&self) -> Option<UpdateVariant> {
        match self {
            Method::Enksgd => Some(UpdateVariant::EnKsgd),
            Method::Enkf => Some(UpdateVariant::EnKf),
            Method::CfdGd => None,
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enksgd" => Ok(Method::Enksgd),
            "enkf" => Ok(Method::Enkf),
            "cfd-gd" => Ok(Method::CfdGd),
            other => Err(format!("unknown method '{other}' (expected {METHODS})")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Enksgd => write!(f, "enksgd"),
            Method::Enkf => write!(f, "enkf"),
            Method::CfdGd => write!(f, "cfd-gd"),
        }
    }
}

/// Trace output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Json,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

pub const METHODS: &str = "enksgd, enkf, cfd-gd";

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: String,
    pub method: Method,
    pub particles: usize,
    pub beta: f64,
    pub delta: f64,
    pub runs: usize,
    pub seed: u64,
    pub budget: Option<u64>,
    pub max_iters: usize,
    pub noise_sigma: f64,
    /// CFD stencil size; only the cfd-gd method reads it.
    pub stencil: f64,
    pub out: Option<PathBuf>,
    pub format: TraceFormat,
    pub dump_data: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: String::new(),
            method: Method::Enksgd,
            particles: 20,
            beta: 1e-8,
            delta: 1.0,
            runs: 1,
            seed: 0,
            budget: None,
            max_iters: 100,
            noise_sigma: 0.0,
            stencil: 1e-4,
            out: None,
            format: TraceFormat::Csv,
            dump_data: None,
        }
    }
}

fn command() -> Command {
    Command::new("enksgd")
        .about("Seeded multi-run benchmark driver for ensemble Kalman-Stein gradient descent")
        .arg(
            Arg::new("problem")
                .long("problem")
                .value_name("NAME")
                .help("Benchmark problem (see the list below)"),
        )
        .arg(
            Arg::new("method")
                .long("method")
                .value_name("METHOD")
                .value_parser(["enksgd", "enkf", "cfd-gd"])
                .help("Optimization method"),
        )
        .arg(
            Arg::new("particles")
                .long("particles")
                .value_name("K")
                .value_parser(clap::value_parser!(usize))
                .help("Ensemble size (ignored by cfd-gd)"),
        )
        .arg(
            Arg::new("beta")
                .long("beta")
                .value_name("BETA")
                .value_parser(clap::value_parser!(f64))
                .help("Perturbation strength"),
        )
        .arg(
            Arg::new("delta")
                .long("delta")
                .value_name("DELTA")
                .value_parser(clap::value_parser!(f64))
                .help("Covariance scale parameter"),
        )
        .arg(
            Arg::new("runs")
                .long("runs")
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("Number of independent runs"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .value_name("SEED")
                .value_parser(clap::value_parser!(u64))
                .help("Master seed; per-run seeds are derived from it"),
        )
        .arg(
            Arg::new("budget")
                .long("budget")
                .value_name("EVALS")
                .value_parser(clap::value_parser!(u64))
                .help("Forward-map evaluation cap per run"),
        )
        .arg(
            Arg::new("max-iters")
                .long("max-iters")
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("Iteration cap per run"),
        )
        .arg(
            Arg::new("noise-sigma")
                .long("noise-sigma")
                .value_name("SIGMA")
                .value_parser(clap::value_parser!(f64))
                .help("Std dev of Gaussian noise added to every forward evaluation"),
        )
        .arg(
            Arg::new("stencil")
                .long("stencil")
                .value_name("H")
                .value_parser(clap::value_parser!(f64))
                .help("CFD stencil size (cfd-gd only)"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Trace output path; a .summary.json is written next to it"),
        )
        .arg(
            Arg::new("format")
                .long("format")
                .value_name("FORMAT")
                .value_parser(["csv", "json"])
                .help("Trace format"),
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key=value file; explicit flags override file values"),
        )
        .arg(
            Arg::new("dump-data")
                .long("dump-data")
                .value_name("DIR")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Write the problem's simulated dataset as CSV files"),
        )
        .arg(
            Arg::new("help")
                .long("help")
                .short('h')
                .action(ArgAction::Help)
                .help("Print help"),
        )
        .disable_help_flag(true)
        .after_help(usage_listing())
}

fn usage_listing() -> String {
    let registry = ProblemRegistry::<f64>::with_builtins();
    format!(
        "problems: {}\nmethods:  {METHODS}",
        registry.names().join(", ")
    )
}

/// Parses a full argv (program name included). Flags override config-file
/// values, which override built-in defaults.
pub fn parse_cli(args: &[String]) -> Result<ExperimentConfig, CliError> {
    let matches = command()
        .try_get_matches_from(args)
        .map_err(|e| match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                CliError::HelpRequested(e.to_string())
            }
            _ => CliError::Usage(format!("{e}\n{}", usage_listing())),
        })?;

    let mut config = ExperimentConfig::default();
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        apply_config_file(&mut config, path)?;
    }

    if let Some(v) = matches.get_one::<String>("problem") {
        config.problem = v.clone();
    }
    if let Some(v) = matches.get_one::<String>("method") {
        config.method = v.parse().map_err(CliError::Usage)?;
    }
    if let Some(&v) = matches.get_one::<usize>("particles") {
        config.particles = v;
    }
    if let Some(&v) = matches.get_one::<f64>("beta") {
        config.beta = v;
    }
    if let Some(&v) = matches.get_one::<f64>("delta") {
        config.delta = v;
    }
    if let Some(&v) = matches.get_one::<usize>("runs") {
        config.runs = v;
    }
    if let Some(&v) = matches.get_one::<u64>("seed") {
        config.seed = v;
    }
    if let Some(&v) = matches.get_one::<u64>("budget") {
        config.budget = Some(v);
    }
    if let Some(&v) = matches.get_one::<usize>("max-iters") {
        config.max_iters = v;
    }
    if let Some(&v) = matches.get_one::<f64>("noise-sigma") {
        config.noise_sigma = v;
    }
    if let Some(&v) = matches.get_one::<f64>("stencil") {
        config.stencil = v;
    }
    if let Some(v) = matches.get_one::<PathBuf>("out") {
        config.out = Some(v.clone());
    }
    if let Some(v) = matches.get_one::<String>("format") {
        config.format = v.parse().map_err(CliError::Usage)?;
    }
    if let Some(v) = matches.get_one::<PathBuf>("dump-data") {
        config.dump_data = Some(v.clone());
    }

    validate(&config)?;
    Ok(config)
}

fn validate(config: &ExperimentConfig) -> Result<(), CliError> {
    if config.problem.is_empty() {
        return Err(CliError::Usage(format!(
            "a --problem is required\n{}",
            usage_listing()
        )));
    }
    if config.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    if config.method != Method::CfdGd && config.particles < 2 {
        return Err(CliError::Usage(
            "--particles must be at least 2 for ensemble methods".into(),
        ));
    }
    Ok(())
}

/// Applies a flat `key=value` config file. Keys match the flag names with
/// dashes removed (both `max-iters` and `maxiters` are accepted); `#` starts
/// a comment.
pub fn apply_config_file(
    config: &mut ExperimentConfig,
    path: &std::path::Path,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    for (line_no, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key=value, got '{raw_line}'",
                path.display(),
                line_no + 1
            ))
        })?;
        let key_norm: String = key
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect();
        let value = value.trim();
        let bad_value = |what: &str| {
            CliError::Usage(format!(
                "{}:{}: invalid {what} value '{value}'",
                path.display(),
                line_no + 1
            ))
        };
        match key_norm.as_str() {
            "problem" => config.problem = value.to_string(),
            "method" => config.method = value.parse().map_err(CliError::Usage)?,
            "particles" => config.particles = value.parse().map_err(|_| bad_value("particles"))?,
            "beta" => config.beta = value.parse().map_err(|_| bad_value("beta"))?,
            "delta" => config.delta = value.parse().map_err(|_| bad_value("delta"))?,
            "runs" => config.runs = value.parse().map_err(|_| bad_value("runs"))?,
            "seed" => config.seed = value.parse().map_err(|_| bad_value("seed"))?,
            "budget" => config.budget = Some(value.parse().map_err(|_| bad_value("budget"))?),
            "maxiters" => config.max_iters = value.parse().map_err(|_| bad_value("max-iters"))?,
            "noisesigma" => {
                config.noise_sigma = value.parse().map_err(|_| bad_value("noise-sigma"))?
            }
            "stencil" => config.stencil = value.parse().map_err(|_| bad_value("stencil"))?,
            "out" => config.out = Some(PathBuf::from(value)),
            "format" => config.format = value.parse().map_err(CliError::Usage)?,
            "dumpdata" => config.dump_data = Some(PathBuf::from(value)),
            other => {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown config key '{other}'",
                    path.display(),
                    line_no + 1
                )))
            }
        }
    }
    Ok(())
}
