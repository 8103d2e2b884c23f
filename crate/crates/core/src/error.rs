use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index out of bounds: {0}")]
    Index(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at {0}")]
    Diverged(String),
    #[error("registration error: {0}")]
    Registration(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("fusion error: {0}")]
    Fusion(String),
    #[error("invalid fault spec: {0}")]
    InvalidFault(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("missing input file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.into(),
        }
    }
}
