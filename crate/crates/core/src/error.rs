use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("need ≥ 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("model `{model}` cannot be used with inference mode `{mode}`")]
    IncompatibleMode { model: &'static str, mode: String },

    #[error("AUC undefined: need at least one correct and one misclassified record")]
    AucUndefined,

    #[error("ill-conditioned polynomial fit of degree {degree}; try a lower degree")]
    IllConditionedFit { degree: usize },

    #[error("no saturation point: maximum gain over the random baseline is {max_gap:.6}")]
    NoSaturation { max_gap: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
