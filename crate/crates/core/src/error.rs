use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: u32, height: u32, min: u32 },

    #[error("no usable face found: {0}")]
    NoFaceFound(String),

    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },

    #[error("{source_name}:{line}: component {component} = {value} is outside [0, 1]")]
    Range {
        source_name: String,
        line: usize,
        component: usize,
        value: f64,
    },

    #[error("invalid feature vector: {0}")]
    InvalidFeatures(String),

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset {}: {reason}", path.display())]
    Data { path: PathBuf, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("zero vector: cosine similarity is undefined")]
    ZeroVector,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
