use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("non-finite values in parameter block `{block}`")]
    NonFinite { block: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate channel `{channel}`: min == max == {value}")]
    DegenerateChannel { channel: String, value: f64 },

    #[error("corrupt data in {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("metric `{metric}` undefined for parameter {parameter}: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        parameter: &'static str,
        reason: String,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("hyperparameter search failed: {0}")]
    SearchFailed(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corruption {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (divergence, non-finite parameters, failed
    /// searches) as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::Divergence { .. }
            | Error::Calibration(_)
            | Error::SearchFailed(_) => true,
            Error::Fold { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::InvalidState(_) => "invalid_state",
            Error::NonFinite { .. } => "non_finite",
            Error::Divergence { .. } => "divergence",
            Error::Config(_) => "config",
            Error::DegenerateChannel { .. } => "degenerate_channel",
            Error::Corruption { .. } => "corruption",
            Error::Ingestion(_) => "ingestion",
            Error::UndefinedMetric { .. } => "undefined_metric",
            Error::Calibration(_) => "calibration",
            Error::SearchFailed(_) => "search_failed",
            Error::Fold { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
