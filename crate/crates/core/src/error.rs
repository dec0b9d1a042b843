use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("ingestion error in {path}: {message} (byte offset {offset})")]
    Ingest {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("no batch files found in {0}")]
    NoBatchFiles(PathBuf),

    #[error("invalid architecture: {0}")]
    Spec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("composition error: {0}")]
    Compose(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("class space mismatch: {0}")]
    ClassSpace(String),

    #[error("heads failed to train: best validation accuracy {best:.4} after {epochs} epochs")]
    HeadsFailed { best: f64, epochs: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Short machine-readable tag used in structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Ingest { .. } | Error::NoBatchFiles(_) => "ingest",
            Error::Spec(_) => "spec",
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::Decode(_) => "decode",
            Error::Compose(_) => "compose",
            Error::Calibration(_) => "calibration",
            Error::ClassSpace(_) => "class_space",
            Error::HeadsFailed { .. } => "heads_failed",
            Error::Config(_) => "config",
            Error::Artifact(_) => "artifact",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
