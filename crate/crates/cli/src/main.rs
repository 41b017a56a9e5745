//! `coaglab`: simulate, solve, predict and validate coagulation experiments.
//!
//! Exit codes: 0 pass, 1 usage or config error, 2 validation failure,
//! 3 internal error.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coaglab_core::{ConfigError, KernelError};
use thiserror::Error;

use crate::commands::Outcome;
use crate::config::{Loaded, Overrides};

/// Errors the user can fix by changing the command line or config.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
}

#[derive(Parser)]
#[command(name = "coaglab", version, about = "Stochastic coagulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Run R replicas; write per-replica trajectories and ensemble statistics.
    Simulate,
    /// Integrate the truncated Smoluchowski equation.
    Solve,
    /// Predict fluctuation covariances by both routes and cross-check them.
    FluctPredict,
    /// Compare an ensemble's fluctuations with the predicted covariances.
    FluctEmpirical,
    /// Compare ensemble means with the exact finite-n chain.
    OracleCheck,
    /// Run the full acceptance suite from the `[validation]` table.
    Validate,
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = Loaded::load(&cli.overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Solve => commands::solve_cmd(&cfg),
        Command::FluctPredict => commands::fluct_predict(&cfg),
        Command::FluctEmpirical => commands::fluct_empirical(&cfg),
        Command::OracleCheck => commands::oracle_check(&cfg),
        Command::Validate => commands::validate(&cfg),
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.is::<CliError>() || c.is::<ConfigError>() || c.is::<KernelError>())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => {
            eprintln!("validation failed");
            ExitCode::from(2)
        }
        Err(e) if is_config_error(&e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}
