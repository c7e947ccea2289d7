use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WdmError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("statistical error: {0}")]
    Statistical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),

    #[error("checkpoint version {found} cannot be read by this build (expects version {expected}); migrate the file first")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for WdmError {
    fn from(e: std::io::Error) -> Self {
        WdmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WdmError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(WdmError::Dimension(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(WdmError::Parameter(msg.into()))
}
