//! Experiment orchestration behind the `erpcal` binary: configuration,
//! on-disk layout, the four pipeline commands and the report.

pub mod commands;
pub mod experiment;
pub mod layout;
pub mod report;

use std::fmt;

pub use commands::{cmd_attribute, cmd_calibrate, cmd_gen, cmd_train, RunOptions};
pub use experiment::{AttributeConfig, DataSource, ExperimentConfig};
pub use report::{cmd_report, Report, ReportRow};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad configuration or usage; exit code 2.
    Config(String),
    /// Failure while running; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<erpcal_core::Error> for CliError {
    fn from(e: erpcal_core::Error) -> Self {
        match e {
            erpcal_core::Error::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<erpcal_core::config::ConfigError> for CliError {
    fn from(e: erpcal_core::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
