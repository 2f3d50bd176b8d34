use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("sum of Lagrange multipliers must be positive, got {0}")]
    DegenerateMultiplier(f64),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("degenerate evaluation: {0}")]
    DegenerateEvaluation(String),

    #[error("log-domain underflow: {0}")]
    Underflow(String),

    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Index { .. } => "index",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Numeric(_) => "numeric",
            Error::Data(_) => "data",
            Error::DegenerateMultiplier(_) => "degenerate_multiplier",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::DegenerateEvaluation(_) => "degenerate_evaluation",
            Error::Underflow(_) => "underflow",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric(format!(
            "{what}: non-finite value {} at position {i}",
            values[i]
        ))),
    }
}
