//! Experiment runner: every module behind one binary with reproducible JSON
//! configs and machine-readable outputs.
//!
//! Exit codes: 0 all checks pass, 1 a non-trend check failed (or a runtime
//! error), 2 the config did not parse or validate. Outputs are a manifest
//! (the only file carrying timestamps), CSV data files, and a summary JSON
//! with one entry per check; rerunning any subcommand with the same config
//! and seed reproduces the CSVs byte for byte.

mod commands;
pub mod config;
mod suite;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::asymptotics::AsymError;
use crate::branching::BranchError;
use crate::duality::DualityError;
use crate::field::FieldError;
use crate::offspring::OffspringError;
use crate::oracle::OracleError;
use crate::pde::PdeError;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown functional '{0}'")]
    UnknownFunctional(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Offspring(#[from] OffspringError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Asym(#[from] AsymError),
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error(transparent)]
    Duality(#[from] DualityError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownFunctional(_) => 2,
            _ => 1,
        }
    }
}

/// One verdict in the summary. Trend-only checks are reported but do not
/// affect the exit code.
#[derive(Debug, Clone)]
pub struct Check {
    pub key: String,
    pub pass: bool,
    pub trend_only: bool,
    pub detail: serde_json::Value,
}

impl Check {
    pub fn new(key: &str, pass: bool) -> Self {
        Self {
            key: key.to_string(),
            pass,
            trend_only: false,
            detail: serde_json::Value::Null,
        }
    }

    pub fn trend(key: &str, pass: bool) -> Self {
        Self {
            trend_only: true,
            ..Self::new(key, pass)
        }
    }

    pub fn detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "branchflow",
    version,
    about = "Reaction-diffusion solver and branching particle laboratory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandKind,
    /// JSON config; defaults are the shipped standard problem.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override single config entries: key.path=value (JSON values).
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub overrides: Vec<String>,
    /// Worker threads for replica batteries (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default: runs/<subcommand>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CommandKind {
    /// Integrate the evolution equation and dump the trajectory.
    Solve,
    /// Extract the asymptotic mass with profile and comparison diagnostics.
    Mass,
    /// Run one Monte Carlo replica battery.
    Simulate,
    /// Cross-validate the particle system against the solver.
    Duality,
    /// Convergence table of the source/semigroup splitting.
    Splitting,
    /// Scalar occupation-time limit traces.
    Occupation,
    /// The full verification battery, one line per criterion.
    Suite,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Solve => "solve",
            CommandKind::Mass => "mass",
            CommandKind::Simulate => "simulate",
            CommandKind::Duality => "duality",
            CommandKind::Splitting => "splitting",
            CommandKind::Occupation => "occupation",
            CommandKind::Suite => "suite",
        }
    }
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    if let Some(jobs) = cli.jobs {
        // Ignore failure: the global pool may already exist (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let mut config = match RunConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    match run_command(cli.command, &config, &out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand into `out`, writing manifest and summary.
pub fn run_command(
    command: CommandKind,
    config: &RunConfig,
    out: &Path,
) -> Result<i32, CliError> {
    let started = Instant::now();
    let checks = match command {
        CommandKind::Solve => commands::cmd_solve(config, out)?,
        CommandKind::Mass => commands::cmd_mass(config, out)?,
        CommandKind::Simulate => commands::cmd_simulate(config, out)?,
        CommandKind::Duality => commands::cmd_duality(config, out)?,
        CommandKind::Splitting => commands::cmd_splitting(config, out)?,
        CommandKind::Occupation => commands::cmd_occupation(config, out)?,
        CommandKind::Suite => suite::cmd_suite(config, out)?,
    };

    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_seconds": started.elapsed().as_secs_f64(),
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "config": serde_json::to_value(config)?,
    });
    commands::write_file(out, "manifest.json", &serde_json::to_string_pretty(&manifest)?)?;

    let failed = checks.iter().filter(|c| !c.pass && !c.trend_only).count();
    let summary = json!({
        "command": command.name(),
        "failed": failed,
        "checks": checks.iter().map(|c| json!({
            "key": c.key,
            "pass": c.pass,
            "trend_only": c.trend_only,
            "detail": c.detail,
        })).collect::<Vec<_>>(),
    });
    commands::write_file(out, "summary.json", &serde_json::to_string_pretty(&summary)?)?;

    Ok(if failed == 0 { 0 } else { 1 })
}
