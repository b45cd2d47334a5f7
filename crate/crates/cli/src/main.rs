//! `horecon`: synthetic data, registration, reconstruction and evaluation
//! from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 numerical failure. Errors are also printed to stderr as one JSON line.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use commands::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] horecon_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(_) => "data",
        }
    }
}

fn report(err: &CliError) -> ExitCode {
    let line = serde_json::json!({
        "error": err.kind(),
        "code": err.code(),
        "message": err.to_string(),
    });
    eprintln!("{line}");
    ExitCode::from(err.code())
}

fn main() -> ExitCode {
    let args = match config::expand(&Cli::command(), std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return report(&CliError::Usage(e.kind().to_string()));
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
