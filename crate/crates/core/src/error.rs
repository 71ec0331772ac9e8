use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("cannot encode row {row}: value {value} outside the domain of `{attribute}`")]
    Encoding { attribute: String, row: usize, value: u32 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("attribute `{0}` has no numeric values")]
    NonNumericMeasure(String),

    #[error("threshold calibration did not converge after {iterations} iterations (p-values {p_values:?})")]
    CalibrationFailed { iterations: usize, p_values: Vec<f64> },

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
