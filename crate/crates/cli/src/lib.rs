//! Library half of the `rabifit` command-line workbench: configuration
//! parsing, spectrum file formats, synthetic-data generation, result
//! reports, and SVG plots. The binary in `main.rs` is a thin dispatcher
//! over [`commands`].
//!
//! Every fallible path maps onto one of four exit classes so scripts can
//! branch on the process status alone: configuration problems, input data
//! problems, fits that ran but did not converge, and internal failures.

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;
pub mod spectrum_io;
pub mod synth;

use std::process::ExitCode;

/// One error class per exit code. The message is already fully formatted
/// for stderr; variants exist only to carry the status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing, malformed, or inconsistent configuration. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable or malformed input data, or data the extraction stage
    /// rejects. Exit code 3.
    #[error("data error: {0}")]
    Data(String),
    /// The fit ran out of iterations before meeting its tolerances. The
    /// report is still written so the partial result can be inspected.
    /// Exit code 4.
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    /// Anything that should not happen under valid usage, such as an
    /// unwritable output directory. Exit code 5.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Internal(_) => 5,
        })
    }

    /// Wraps a library error raised while validating configured values.
    pub fn config_from(err: impl std::fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    /// Wraps a library error raised while reading or reducing input data.
    pub fn data_from(err: impl std::fmt::Display) -> Self {
        CliError::Data(err.to_string())
    }

    /// Wraps a filesystem error on an output path.
    pub fn write_failed(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Internal(format!("cannot write {}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
