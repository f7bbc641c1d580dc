use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the re-identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("no point projects inside the view frustum (view {view}{})", frame.map(|f| format!(", frame {f}")).unwrap_or_default())]
    EmptyRender { view: usize, frame: Option<usize> },

    #[error("sequence has no frames")]
    EmptySequence,

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("label index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("identity `{identity}` has {available} gallery sequences, {required} required")]
    InsufficientGallery {
        identity: String,
        available: usize,
        required: usize,
    },

    #[error("evaluation received no records")]
    EmptyEvaluation,

    #[error("identity `{0}` has no role mapping")]
    MissingRoleMapping(String),

    #[error("probe identity `{0}` is not enrolled in the gallery")]
    UnknownIdentity(String),

    #[error(
        "non-finite loss at iteration {iteration} (lr {lr}, triplet {triplet}, ce {ce})"
    )]
    NonFiniteLoss {
        iteration: usize,
        lr: f64,
        triplet: f64,
        ce: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
