use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("diffusion step {k} outside 1..={max}")]
    StepOutOfRange { k: usize, max: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("training diverged at epoch {epoch}, batch {batch}, diffusion step {k}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        k: usize,
        loss: f64,
    },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("sampling failed for window {window}: {message}")]
    Sampling { window: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
