//! Command-line front end: loads a run configuration and dispatches to the
//! library. Exit codes are 0 on pass, 1 on usage or configuration errors and
//! 2 when a comparison or check fails.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use bicontact::evolution1::EvolutionError;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, Loaded};
use crate::output::Outputs;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "BICONTACT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Run(String),
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        CliError::Run(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Parser)]
#[command(name = "bicontact", version, about = "Correlation dynamics of a two-type continuum contact process")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Long-time verdicts, limit constants and limit spectra.
    Limits(RunArgs),
    /// Correlation constants (and optional field profiles) over time.
    Evolve(RunArgs),
    /// Monte Carlo replicas of the particle system.
    Simulate(RunArgs),
    /// Monte Carlo estimates scored against the closed forms.
    Compare(RunArgs),
    /// Numerical checks of the supporting lemmas.
    Check(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Configuration file.
    pub config: PathBuf,
    /// Output directory, overriding `[output] directory`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer (got {raw:?})")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

type Handler = fn(&Loaded, &mut Outputs) -> Result<Status, CliError>;

pub fn execute(cli: &Cli) -> Result<Status, CliError> {
    configure_threads()?;
    let (args, run): (&RunArgs, Handler) = match &cli.command {
        Command::Limits(a) => (a, commands::cmd_limits),
        Command::Evolve(a) => (a, commands::cmd_evolve),
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Compare(a) => (a, commands::cmd_compare),
        Command::Check(a) => (a, commands::cmd_check),
    };
    let loaded = Loaded::from_path(&args.config).map_err(|e| match e.line {
        Some(line) => ConfigError {
            line: None,
            message: format!("{}:{line}: {}", args.config.display(), e.message),
        },
        None => e,
    })?;
    let mut out = Outputs::new(&loaded, args.out.as_deref());
    let status = run(&loaded, &mut out)?;
    for name in out.written() {
        eprintln!("wrote {name}");
    }
    Ok(status)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Status::Pass) => 0,
        Ok(Status::Fail) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
