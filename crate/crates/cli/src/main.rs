//! `umoe`: prepare uncertain datasets, fit and apply models, and run the
//! evaluation protocols from a JSON config.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "UMOE_WORKERS";

#[derive(Parser)]
#[command(name = "umoe", version, about = "Uncertainty-aware mixture of experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Io {
    /// JSON run config, or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Mask, impute and build the uncertain dataset bundle.
    Prepare(Io),
    /// Fit a model on a prepared bundle.
    Fit(Io),
    /// Predict certain instances with a saved model.
    Predict(Io),
    /// Nested cross-validation over all configured methods.
    Ncv(Io),
    /// Cross-validated metric per subspace count.
    SubspaceSweep(Io),
    /// Nested cross-validation per threshold p.
    ThresholdSweep(Io),
}

fn init_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_workers()?;
    let (io, f): (&Io, fn(&RunConfig, &std::path::Path) -> Result<(), CliError>) = match &cli.command {
        Command::Prepare(io) => (io, commands::prepare),
        Command::Fit(io) => (io, commands::fit),
        Command::Predict(io) => (io, commands::predict),
        Command::Ncv(io) => (io, commands::ncv),
        Command::SubspaceSweep(io) => (io, commands::subspace_sweep_cmd),
        Command::ThresholdSweep(io) => (io, commands::threshold_sweep_cmd),
    };
    let cfg = RunConfig::load(&io.config)?;
    f(&cfg, &io.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("umoe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
