use thiserror::Error;

/// Errors surfaced by the library. Shape and numeric failures carry enough
/// context to name the offending operation in diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {lhs:?}, right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("numeric failure in {op}: {msg}")]
    NumericFailure { op: &'static str, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub fn numeric(op: &'static str, msg: impl Into<String>) -> Self {
        Error::NumericFailure { op, msg: msg.into() }
    }

    /// Stable one-word category used by the CLI for machine-parsable output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::InvalidShape { .. }
            | Error::InvalidArgument { .. } => "usage",
            Error::NumericFailure { .. } => "numeric",
            Error::Parse { .. } | Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "schema",
        }
    }
}
