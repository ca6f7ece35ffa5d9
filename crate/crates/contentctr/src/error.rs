//! Crate-wide error type. Library code never panics on bad input; every
//! fallible path reports a variant here and the binary maps variants to
//! process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape for an op that needs exact agreement.
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An op received a tensor whose rank or extents it cannot handle.
    #[error("{op}: {msg}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        msg: String,
        shape: Vec<usize>,
    },

    /// An axis or index argument is out of bounds for the given shape.
    #[error("{op}: index {index} out of bounds for extent {extent}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    /// A tensor created on one tape was fed to an op on a different tape.
    #[error("{op}: tensor belongs to a different tape")]
    TapeMismatch { op: &'static str },

    /// Backward was requested from a non-scalar tensor.
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// A softmax row contained no finite entry, so the distribution is undefined.
    #[error("softmax: row {row} is fully masked (all -inf)")]
    DegenerateSoftmaxRow { row: usize },

    /// A label left the closed unit interval.
    #[error("label out of range at index {index}: {value}")]
    LabelOutOfRange { index: usize, value: f64 },

    /// An input sequence is too short for the requested operation.
    #[error("{op}: sequence of length {len} is too short (need at least {min})")]
    SequenceTooShort {
        op: &'static str,
        len: usize,
        min: usize,
    },

    /// Rank correlation is undefined because one input is constant.
    #[error("kendall tau undefined: all pairs tied in s or in y")]
    UndefinedTau,

    /// A numeric probe produced NaN or infinity where a finite value is required.
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    /// A config field failed validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A data or checkpoint file is malformed.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    /// Training produced a non-finite loss; the last good checkpoint is kept.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    /// A gradient check exceeded its tolerance.
    #[error("gradient check failed for {target}: max relative error {err:.3e} > {tol:.3e}")]
    GradCheckFailed {
        target: String,
        err: f64,
        tol: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attaches a path to a raw io error.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }
}
