use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse scene spec: {0}")]
    Parse(String),

    #[error("invalid scene spec: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed PLY: {0}")]
    Ply(String),

    #[error("malformed float dump: {0}")]
    FloatDump(String),

    #[error("unknown object id `{0}`")]
    UnknownObject(String),

    #[error("unresolvable prompt `{0}`")]
    UnknownPrompt(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("trace CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_) | Error::Validation(_) | Error::Config(_) | Error::UnknownObject(_)
        )
    }
}
