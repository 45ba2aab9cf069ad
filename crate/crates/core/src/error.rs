use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("invalid frame manifest: {0}")]
    Manifest(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("transport error on {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("backend {endpoint} returned status {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },

    #[error("protocol violation on {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    #[error("could not parse model reply for {task}: {reply:?}")]
    Unparseable { task: String, reply: String },

    #[error("style tree is invalid: {}", .0.join("; "))]
    Tree(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint corrupted: {0}")]
    Checkpoint(String),

    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Errors worth resubmitting the same request for.
    pub fn is_transient(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
