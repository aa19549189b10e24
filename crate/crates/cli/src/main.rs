mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::commands::Context;
use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<qmix::Error> for CliError {
    fn from(e: qmix::Error) -> Self {
        use qmix::Error::*;
        match e {
            Config(_) | Domain(_) | Range(_) | Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Refused(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "qmix", version, about = "Linear and nonlinear Landau damping diagnostics for the Hartree equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run even when the stability pre-check fails.
    #[arg(long)]
    force: bool,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Penrose margin scan and Nyquist curves.
    Penrose(Common),
    /// Linearized density by the Volterra and Green routes.
    Linear(Common),
    /// Nonlinear run with monitors and scattering analysis.
    Simulate(Common),
    /// Repeat a simulation over hbar_sweep and compare with hbar = 0.
    SweepHbar(Common),
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("QMIX_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("QMIX_THREADS: not a thread count: {v}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("QMIX_THREADS: {e}")))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (command, common) = match &cli.command {
        Command::Penrose(c) => (commands::penrose as fn(&Context) -> _, c),
        Command::Linear(c) => (commands::linear as fn(&Context) -> _, c),
        Command::Simulate(c) => (commands::simulate_cmd as fn(&Context) -> _, c),
        Command::SweepHbar(c) => (commands::sweep_hbar as fn(&Context) -> _, c),
    };
    let (config, hash) = RunConfig::load(&common.config)?;
    let out = common
        .output
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    command(&Context {
        config: &config,
        hash: &hash,
        out: &out,
        force: common.force,
    })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qmix: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
