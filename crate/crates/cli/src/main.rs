//! Command-line front end: parses one JSON experiment config, runs the
//! requested pipeline stage, and emits a versioned report envelope to
//! stdout plus optional JSON/CSV files. Exit codes are a stable contract:
//! 0 success or consistent, 1 inconsistent, 2 invalid config, 3
//! inconclusive, 4 synthesis or module failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::output::{write_outputs, Envelope, Profiler};

#[derive(Debug, Error)]
pub enum CliError {
    /// Rejected before any computation; exits 2.
    #[error("invalid config: {0}")]
    Config(String),
    /// A pipeline module refused the inputs; exits 4.
    #[error("{0}")]
    Module(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Module(_) | CliError::Io(_) => 4,
        }
    }
}

macro_rules! module_error_from {
    ($($ty:ty),+ $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Module(e.to_string())
            }
        }
    )+};
}

module_error_from!(
    assoc_clt::BlockingError,
    assoc_clt::CltError,
    assoc_clt::CovarianceError,
    assoc_clt::FieldError,
    assoc_clt::LatticeError,
    assoc_clt::SlowVarError,
);

#[derive(Parser)]
#[command(
    name = "assoc-clt",
    about = "Simulation and verification laboratory for CLT behavior of \
             positively associated stationary lattice fields",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed (and ASSOC_CLT_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker pool size; default all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for the report JSON and CSV exports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print per-stage wall times to stderr.
    #[arg(long, global = true)]
    profile: bool,
}

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Exact box-sum variance against its susceptibility normalization.
    Variance,
    /// Susceptibility tables over rectangles and balls.
    Kfun,
    /// Slow-variation ratio probe along a dyadic grid.
    Svcheck,
    /// One explicit block/corridor partition.
    Blocking,
    /// Replicated box sums with summary statistics.
    Simulate,
    /// Full normality pipeline: sample, normalize, test, judge.
    Clt,
    /// Blocking schedule and per-box error certificates.
    Certify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Variance => "variance",
            Command::Kfun => "kfun",
            Command::Svcheck => "svcheck",
            Command::Blocking => "blocking",
            Command::Simulate => "simulate",
            Command::Clt => "clt",
            Command::Certify => "certify",
        }
    }
}

const SEED_ENV: &str = "ASSOC_CLT_SEED";

/// Flag beats environment beats config; absent everywhere means 0.
fn resolve_seed(flag: Option<u64>, cfg: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text.parse().map_err(|_| {
            CliError::Config(format!("env var {SEED_ENV} must be a u64, got `{text}`"))
        }),
        Err(_) => Ok(cfg.unwrap_or(0)),
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("flag `--threads` must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Module(format!("thread pool: {e}")))?;
    }

    let mut profiler = Profiler::new(cli.profile);
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("flag `--config` is required".into()))?;
    let text = profiler.time("read-config", || std::fs::read_to_string(path))
        .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
    let mut cfg = profiler.time("parse-config", || ExperimentConfig::from_json(&text))?;

    let seed = resolve_seed(cli.seed, cfg.seed)?;
    // The envelope echoes the effective seed so a report reproduces itself.
    cfg.seed = Some(seed);

    let name = cli.command.name();
    let outcome = match cli.command {
        Command::Variance => commands::variance(&cfg, &mut profiler)?,
        Command::Kfun => commands::kfun(&cfg, &mut profiler)?,
        Command::Svcheck => commands::svcheck(&cfg, &mut profiler)?,
        Command::Blocking => commands::blocking(&cfg, &mut profiler)?,
        Command::Simulate => commands::simulate(&cfg, seed, &mut profiler)?,
        Command::Clt => commands::clt(&cfg, seed, &mut profiler)?,
        Command::Certify => commands::certify(&cfg, seed, &mut profiler)?,
    };

    let envelope = Envelope::new(name, &cfg, outcome.report);
    let rendered = profiler.time("render-report", || {
        serde_json::to_string_pretty(&envelope)
            .map_err(|e| CliError::Io(format!("serializing report: {e}")))
    })?;
    println!("{rendered}");

    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from));
    if let Some(dir) = out_dir {
        profiler.time("write-outputs", || {
            write_outputs(&dir, name, &rendered, &outcome.csv)
        })?;
    }

    profiler.report();
    Ok(outcome.exit)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
