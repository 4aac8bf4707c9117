//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by the coarse-graining pipeline.
///
/// Variants are grouped by how a caller should react: `InvalidInput` and
/// `Config` mean the inputs or parameters are wrong, `Numerics` means a
/// solver or iteration failed, and `Diagnostic` means a consistency check
/// on otherwise well-formed data failed (e.g. renewal inversion detecting
/// non-renewal input). The CLI maps `Diagnostic` to exit code 2 and
/// everything else to exit code 1.
#[derive(Debug, Error)]
pub enum CgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("point {index} at ({x}, {y}) is outside all macrostates")]
    PointOutsideGeometry { index: usize, x: f64, y: f64 },

    #[error("trajectory diverged at step {step} ({x}, {y}); decrease dt")]
    TrajectoryDiverged { step: usize, x: f64, y: f64 },

    #[error("no macrostate equilibrated; decrease tau_I or lengthen the trajectory")]
    NoResidence,

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("consistency diagnostic failed: {0}")]
    Diagnostic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CgError>;
