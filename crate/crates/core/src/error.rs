use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Loss or gradient overflowed; `index` is the parameter that carried it.
    #[error("non-finite value in {what} at parameter index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("undefined frame at t = {t}: {reason}")]
    UndefinedFrame { t: f64, reason: String },

    #[error("sampler diagnostic: {0}")]
    Sampler(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("stale artifact {path}: manifest hash {expected}, file hash {actual}")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit status used by the command-line tool: 2 for
    /// configuration problems, 3 for data and file problems, 4 for stale
    /// artifacts and 1 for numerical or sampling failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) => 2,
            Error::Schema(_)
            | Error::Data { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Dimension { .. } => 3,
            Error::StaleArtifact { .. } => 4,
            Error::NonFinite { .. }
            | Error::Degenerate(_)
            | Error::UndefinedFrame { .. }
            | Error::Sampler(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
