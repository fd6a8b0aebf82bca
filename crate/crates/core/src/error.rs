use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("caption contains no tokens")]
    EmptyCaption,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("malformed alignment path: {0}")]
    MalformedPath(String),
    #[error("alignment paths do not describe the same caption pair")]
    CaptionMismatch,
    #[error("non-finite loss encountered during training")]
    NonFiniteLoss,
    #[error("invalid noise schedule bounds: {0}")]
    InvalidScheduleBounds(String),
    #[error("image dimensions {width}x{height} not divisible by codec factor {factor}")]
    BadDimensions {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("grounding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("mask selects no pixels")]
    EmptyMaskRegion,
    #[error("zero vector passed where a direction is required")]
    ZeroVector,
    #[error("no precomputed embedding for span {0:?}")]
    MissingEmbedding(String),
    #[error("no precomputed features for {0:?}")]
    MissingFeatures(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
