use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or parameter block has the wrong dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value was produced or supplied.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An operation was called on an object in the wrong state
    /// (empty buffer, stepping a finished episode, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// Bad configuration: unknown key, unparsable value, unknown task id.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint or dump file is malformed or truncated.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
