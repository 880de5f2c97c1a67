use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Tabular input failed to parse; coordinates are 1-based.
    #[error("{path}:{row}:{column}: {message}")]
    Csv {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    /// A configuration file or key/value override could not be interpreted.
    #[error("config: {0}")]
    Config(String),

    /// The objective left the representable range mid-fit.
    #[error("objective became non-finite at iteration {iteration}: {diagnostic}")]
    NonFinite { iteration: usize, diagnostic: String },

    /// A checkpoint container was malformed or of an unsupported version.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
