use std::path::PathBuf;

use gameirl_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("episode finished")]
    EpisodeFinished,
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid file field `{field}`: {msg}")]
    Format { field: String, msg: String },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("missing inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),
    #[error("threshold not reached: {0}")]
    ThresholdUnmet(String),
    #[error("stage `{stage}` failed (log: {}): {source}", log.display())]
    Stage {
        stage: String,
        log: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("image: {0}")]
    Image(String),
}

impl Error {
    pub fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format { field: field.into(), msg: msg.into() }
    }

    /// Innermost error, unwrapping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self.root(), Error::Divergence(_) | Error::Nn(NnError::NonFinite(_)))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
