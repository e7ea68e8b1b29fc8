use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),

    #[error("rudder command {0} deg is outside [-5, 5]")]
    RudderOutOfRange(f64),

    #[error("episode is finished; reset before stepping again")]
    EpisodeFinished,

    #[error("ship count changed mid-episode: expected {expected}, found {found}")]
    ShipCountChanged { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("tape was recorded against a different network state")]
    StaleTape,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at env step {step}: non-finite {what}")]
    Diverged { step: u64, what: String },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
