use std::path::PathBuf;

/// Errors raised across the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument is outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A numeric quantity left the finite reals.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    /// A structural invariant of a domain type does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
    /// A communication graph or mixing matrix does not contract.
    #[error("degenerate topology: {0}")]
    DegenerateTopology(String),
    /// The run configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
