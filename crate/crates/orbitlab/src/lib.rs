//! Experiment runner around `orbitlab-core`: TOML configs, CSV/JSON
//! artifacts and the `orbitlab` command line.

pub mod config;
pub mod output;
pub mod run;
pub mod validate;

use orbitlab_core::error::ErrorCategory;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHART_ESCAPE: i32 = 3;
pub const EXIT_UNCONVERGED: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] orbitlab_core::Error),
    #[error("orbit failed verification: {0}")]
    Verification(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => category_code(e.category()),
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Io(_) | CliError::Output(_) => EXIT_IO,
        }
    }
}

pub fn category_code(c: ErrorCategory) -> i32 {
    match c {
        ErrorCategory::Config => EXIT_CONFIG,
        ErrorCategory::ChartEscape => EXIT_CHART_ESCAPE,
        ErrorCategory::Unconverged => EXIT_UNCONVERGED,
        ErrorCategory::Verification => EXIT_VERIFICATION,
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
