//! Command-line front end for the simulation engine.
//!
//! Two subcommands: `simulate` runs a configured model and writes state
//! probabilities, discounted values, and condensed cost-effectiveness tables
//! to the output directory; `cea` turns those tables into decision measures
//! (ICER table, acceptability curves and frontier, expected value of perfect
//! information). Exit codes: 0 on success, 1 when the config or an input
//! table is invalid, 2 when the run itself fails.

mod config;
mod run;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "qalysim", version, about = "Health-economic decision model simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured model and write result files.
    Simulate(CommonArgs),
    /// Compute decision measures from a prior run's tables.
    Cea(CommonArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory the result files are written to.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all available cores. The thread count
    /// never changes the results.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Failures split by exit code: validation problems (bad config or input
/// tables) exit 1, runtime problems (simulation or output writing) exit 2.
pub enum AppError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

/// Tags a result with the phase it failed in.
pub trait Phase<T> {
    fn validation(self) -> Result<T, AppError>;
    fn runtime(self) -> Result<T, AppError>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn validation(self) -> Result<T, AppError> {
        self.map_err(|e| AppError::Validation(e.into()))
    }

    fn runtime(self) -> Result<T, AppError> {
        self.map_err(|e| AppError::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Simulate(args) => run::run_simulate(args),
        Cmd::Cea(args) => run::run_cea(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
