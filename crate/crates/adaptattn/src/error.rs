use std::path::PathBuf;

/// Errors surfaced by corpus handling, the numeric core, the model and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (thresholds, head counts, hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Malformed or out-of-range input data (ids, labels, empty documents).
    #[error("data error: {0}")]
    Data(String),

    /// An internal API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// I/O failure, always naming the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to: 2 for usage/config/data
    /// problems, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
