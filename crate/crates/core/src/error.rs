use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gaussian {gaussian}: parameter {param} is not finite")]
    NonFinite { gaussian: usize, param: usize },

    #[error("gaussian {gaussian}: quaternion has zero norm")]
    DegenerateRotation { gaussian: usize },

    #[error("scene is inconsistent: {0}")]
    InvalidScene(String),

    #[error("camera is invalid: {0}")]
    InvalidCamera(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Ply(#[from] crate::ply::PlyError),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("unknown scene recipe `{0}`")]
    UnknownRecipe(String),

    #[error("iteration {iteration}: loss term `{term}` is not finite")]
    NonFiniteLoss { iteration: usize, term: &'static str },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
