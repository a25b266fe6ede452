use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while building, planning or running dataflow programs.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("unsupported in stream mode: {0}")]
    UnsupportedInStream(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("kernel `{kernel}` failed: {message}")]
    Kernel { kernel: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("runtime stalled: {0}")]
    Stall(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn type_error(msg: impl Into<String>) -> Self {
        Error::Type(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
