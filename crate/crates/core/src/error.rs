use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The allocation iteration left the finite/bounded region.
    #[error("negotiation diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("mitigation unavailable for agent {agent}: {reason}")]
    MitigationUnavailable { agent: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
