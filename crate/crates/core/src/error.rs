use std::fmt;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("non-finite loss {loss} at step {step} (tile {tile})")]
    NonFinite { step: u64, tile: String, loss: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_) => ErrorKind::Dimension,
            Error::Config(_) => ErrorKind::Config,
            Error::Degenerate(_) => ErrorKind::Degenerate,
            Error::Format { .. } => ErrorKind::Format,
            Error::Data(_) => ErrorKind::Data,
            Error::Undefined(_) => ErrorKind::Undefined,
            Error::NonFinite { .. } => ErrorKind::NonFinite,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Dimension,
    Config,
    Degenerate,
    Format,
    Data,
    Undefined,
    NonFinite,
    Io,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Dimension => "dimension",
            ErrorKind::Config => "config",
            ErrorKind::Degenerate => "degenerate",
            ErrorKind::Format => "format",
            ErrorKind::Data => "data",
            ErrorKind::Undefined => "undefined",
            ErrorKind::NonFinite => "non_finite",
            ErrorKind::Io => "io",
        };
        f.write_str(s)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
