use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure category; the CLI maps each one to an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown rating code {value:?}")]
    UnknownRating { value: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column {column:?}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("transform error: {0}")]
    Transform(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fold {fold} failed for model {model}: {source}")]
    Fold {
        model: String,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Artifact(_) | Error::Json(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Fold { source, .. } => source.kind(),
            Error::UnknownRating { .. }
            | Error::Schema(_)
            | Error::Cell { .. }
            | Error::Fit(_)
            | Error::Transform(_)
            | Error::Bounds(_)
            | Error::State(_)
            | Error::Io { .. }
            | Error::Csv(_) => ErrorKind::Data,
        }
    }
}
