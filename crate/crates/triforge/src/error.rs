//! Crate-wide error type.
//!
//! Numeric code favors panics for programmer errors caught in tests (index
//! arithmetic, internal invariants) but returns [`Error`] for everything a
//! caller can plausibly trigger: shape mismatches between tensors, malformed
//! or truncated files, checkpoints that do not match the model, and non-finite
//! values surfacing under strict checking.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected signature) disagree on shape.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        /// Operation that rejected the operands.
        op: &'static str,
        /// Shape of the first operand.
        lhs: Vec<usize>,
        /// Shape of the second operand (or the expected shape).
        rhs: Vec<usize>,
    },

    /// An operation produced or received a NaN/Inf under strict checking.
    #[error("non-finite value in {op}")]
    NonFinite {
        /// Operation whose output failed the finiteness check.
        op: &'static str,
    },

    /// A file had the wrong magic, a bad field, or ended early.
    #[error("malformed {format} data: {detail}")]
    Format {
        /// Short name of the format ("TPF1", "MVB1", "manifest", ...).
        format: &'static str,
        /// Human-readable description of what was wrong.
        detail: String,
    },

    /// A checkpoint entry does not match the destination model.
    #[error("checkpoint mismatch for {name}: {detail}")]
    Checkpoint {
        /// Parameter name in the checkpoint or model.
        name: String,
        /// What disagreed (unknown name, shape, ...).
        detail: String,
    },

    /// A gradient contained NaN/Inf when the optimizer went to apply it.
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad {
        /// Name of the parameter whose gradient failed the check.
        name: String,
    },

    /// Invalid configuration or argument value.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure for manifests and pose files.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for a [`Error::Format`] with an owned detail string.
    pub fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }
}
