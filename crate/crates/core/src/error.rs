use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed or truncated grid/data file, or a record that cannot be written.
    #[error("format error: {0}")]
    Format(String),

    /// Shapes, indices or sizes that do not fit together.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A value outside the admissible domain (nonpositive velocity, negative weight, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Factorization hit a pivot it could not use.
    #[error("singular matrix: no usable pivot at row {row}")]
    Singular { row: usize },

    /// Divergence, non-finite iterates or other numerical breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Cached state does not belong to the model it is queried with.
    #[error("state error: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Failure reported by a (possibly external) denoiser.
    #[error("denoiser error: {0}")]
    Denoiser(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
