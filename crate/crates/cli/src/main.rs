//! `gne`: solve, track, validate and inspect monotone games from the command line.
//!
//! Exit codes: 0 on success or convergence, 2 when a solver hit its iteration cap before
//! the residual tolerance, 1 on any error (with a JSON error object on stderr).

mod artifacts;
mod market;
mod opts;
mod oracle;
mod solve;
mod track;
mod validate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use gne_core::GneError;

use crate::artifacts::Artifacts;
use crate::opts::Opts;

#[derive(Parser, Debug)]
#[command(name = "gne", version, about = "Optimal equilibrium selection for monotone generalized Nash games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Select the optimal equilibrium of a game file (FBF or pFB with hybrid steepest descent).
    Solve,
    /// Track the optimal equilibrium of a time-varying scenario or real-time market.
    Track,
    /// Check the structural assumptions of a game or market network.
    Validate,
    /// Reference solution for the constructed game families.
    Oracle,
    /// Day-ahead market: plain FBF against the selection run, with line flows.
    Market,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Track => "track",
            Command::Validate => "validate",
            Command::Oracle => "oracle",
            Command::Market => "market",
        }
    }
}

/// How a command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    /// Ran out of iterations before the residual tolerance.
    MaxIter,
    /// A report-only command found a failing check.
    Failed,
}

/// Errors surfaced to the user: solver errors keep their kind, everything else is an I/O or usage error.
#[derive(Debug)]
pub enum CliError {
    Core(GneError),
    Usage(String),
}

impl From<GneError> for CliError {
    fn from(e: GneError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(GneError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(GneError::from(e))
    }
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Core(e) => json!({"error": e.kind(), "message": e.to_string()}),
            CliError::Usage(m) => json!({"error": "UsageError", "message": m}),
        }
    }
}

fn run(cli: &Cli) -> Result<Status, CliError> {
    let config = cli
        .opts
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let art = Artifacts::new(&cli.opts.out, cli.command.name(), config, cli.opts.seed)?;
    match cli.command {
        Command::Solve => solve::run(&cli.opts, config, &art),
        Command::Track => track::run(&cli.opts, config, &art),
        Command::Validate => validate::run(&cli.opts, config, &art),
        Command::Oracle => oracle::run(config, &art),
        Command::Market => market::run(&cli.opts, config, &art),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string().trim().to_string()).to_json());
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::MaxIter) => ExitCode::from(2),
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
