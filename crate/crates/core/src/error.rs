use std::path::PathBuf;

/// Errors produced anywhere in the solver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} in layer {layer}")]
    NonFinite { what: &'static str, layer: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("too few usable samples: {usable} (need at least {needed})")]
    TooFewSamples { usable: usize, needed: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
