use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("binarize input {0} is outside [0, 1]")]
    BinarizeDomain(f64),

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty sequence")]
    EmptySequence,

    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid tag sequence at index {index}: {reason}")]
    InvalidTagSequence { index: usize, reason: String },

    #[error("invalid span {0}")]
    InvalidSpan(String),

    #[error("overlapping spans: {0}")]
    OverlappingSpans(String),

    #[error("missing gold tags")]
    MissingGold,

    #[error("no remained tokens in sequence")]
    NoRemainedTokens,

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("invalid config value for `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("model incompatible: {0}")]
    ModelIncompatible(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("infeasible synthetic geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 config, 3 data,
    /// 4 model compatibility, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownConfigKey(_) | Error::InvalidConfig { .. } => 2,
            Error::Parse { .. }
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::InvalidSpan(_)
            | Error::OverlappingSpans(_)
            | Error::InvalidTagSequence { .. }
            | Error::InfeasibleGeometry(_) => 3,
            Error::ModelIncompatible(_) => 4,
            _ => 1,
        }
    }
}
