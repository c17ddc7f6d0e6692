//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by meshing, assembly, solves, and configuration handling.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter was outside its documented range.
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// Mesh construction or queries failed (zero extents, bad tags, ...).
    #[error("mesh error: {0}")]
    Mesh(String),

    /// A linear system was rejected before factorization (not symmetric
    /// positive definite, empty, inconsistent sizes).
    #[error("linear system rejected: {0}")]
    BadSystem(String),

    /// Factorization or the post-solve residual check failed.
    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    /// Configuration file could not be read or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
