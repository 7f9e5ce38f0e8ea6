//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by grid, metric, loss, model, dynamics, and tracking code.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array dimensions do not agree.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// Two fields live on different grids.
    #[error("grid mismatch: {a} vs {b}")]
    GridMismatch { a: String, b: String },

    /// Latitude weights cannot be normalized (every row sits on a pole).
    #[error("degenerate latitude weights: all rows have zero cos(lat)")]
    DegenerateWeights,

    /// Anomaly correlation is undefined (zero anomaly variance).
    #[error("undefined ACC: zero anomaly variance in {0} field")]
    UndefinedAcc(&'static str),

    /// Spread-skill ratio is undefined (zero RMSE).
    #[error("undefined SSR: RMSE is zero")]
    UndefinedSsr,

    /// Along/cross-track decomposition is undefined (zero best-track motion).
    #[error("undefined track decomposition: best-track motion vector is zero")]
    UndefinedDecomposition,

    /// A climatology stratum has no samples.
    #[error("missing climatology for stratum {0}")]
    MissingClimatology(String),

    /// A forward pass produced a non-finite value.
    #[error("numeric fault in {context}")]
    NumericFault { context: String },

    /// The integrator blew up.
    #[error("integration fault: {0}")]
    IntegrationFault(String),

    /// A persisted artifact could not be decoded.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
