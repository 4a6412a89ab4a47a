use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),

    #[error("filter design error: {0}")]
    Design(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no opening detected: no frame reaches threshold {threshold}")]
    NoOpeningDetected { threshold: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Size(_) => "SizeError",
            Error::Design(_) => "DesignError",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::Numerical(_) => "NumericalError",
            Error::Config(_) => "ConfigError",
            Error::NoOpeningDetected { .. } => "NoOpeningDetected",
            Error::Format { .. } => "FormatError",
            Error::Validation(_) => "ValidationError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
