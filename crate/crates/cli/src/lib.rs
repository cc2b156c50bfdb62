//! Command implementations behind the `mtsci` binary.

pub mod args;
pub mod commands;
pub mod data;
pub mod table;

use std::path::PathBuf;

pub use args::{Cli, Command};

/// Exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DIVERGENCE: i32 = 2;
    pub const CHECKPOINT_MISMATCH: i32 = 3;
    pub const JOIN_FAILURE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mtsci::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),

    #[error("join failed: no prediction for {0}")]
    Join(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(mtsci::Error::Divergence { .. }) => exit::DIVERGENCE,
            CliError::Core(mtsci::Error::CheckpointMismatch(_)) => exit::CHECKPOINT_MISMATCH,
            CliError::Join(_) => exit::JOIN_FAILURE,
            _ => exit::USAGE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a).map(|_| ()),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Impute(a) => commands::impute(&a).map(|_| ()),
        Command::Evaluate(a) => commands::evaluate(&a).map(|_| ()),
    }
}
