//! Command-line front end for the forecast-combination library.
//!
//! Three workflows share one binary: `simulate` runs the seeded synthetic
//! studies and writes summary plus plot-data tables, `combine` runs one or
//! more online combiners over expert quantile forecasts read from CSV, and
//! `evaluate` scores previously produced forecast files against each other.
//!
//! All inputs and outputs are long-format CSV with a header row; every
//! configuration key can live in a JSON config file and every key is
//! overridable by a command-line flag (the flag wins). Exit codes: 0 on
//! success, 1 for data or computation errors, 2 for usage and I/O errors.

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;

/// Errors surfaced to the user, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Wrong invocation or unusable environment: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Well-formed invocation but bad data or a failed computation: exit
    /// code 1.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

/// Dispatches a parsed invocation to its workflow.
pub fn run(cli: config::Cli) -> Result<(), CliError> {
    match cli.command {
        config::Command::Simulate(args) => commands::cmd_simulate(args),
        config::Command::Combine(args) => commands::cmd_combine(args),
        config::Command::Evaluate(args) => commands::cmd_evaluate(args),
    }
}
