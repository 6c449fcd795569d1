use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("taxonomy error: {0}")]
    Taxonomy(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown source id `{0}`")]
    UnknownSource(String),

    #[error("composition violates {rule}: {detail}")]
    InvalidComposition { rule: &'static str, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("ingest error in {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training fault at step {step}: non-finite {term}")]
    TrainingFault { step: u64, term: String },

    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
