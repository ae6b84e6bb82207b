use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("stream `{0}` is empty")]
    EmptyStream(String),
    #[error("stream `{name}` is corrupt: {reason}")]
    CorruptStream { name: String, reason: String },
    #[error("recording has no {0} stream")]
    MissingStream(String),
    #[error("streams do not overlap in time")]
    NoOverlap,
    #[error("format error: {0}")]
    Format(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid frame transform: {0}")]
    InvalidTransform(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("sequence too short: need {needed} frames, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("invalid intervals: {0}")]
    InvalidIntervals(String),
    #[error("vocabulary mismatch: expected {expected} classes, got {got}")]
    VocabularyMismatch { expected: usize, got: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid pose at frame {frame}: {reason}")]
    InvalidPose { frame: usize, reason: String },
    #[error("labels required for {0}")]
    LabelsRequired(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes (frame {frame})")]
    Label {
        frame: usize,
        label: usize,
        classes: usize,
    },
    #[error("cache does not match the model state")]
    StaleCache,
    #[error("every training window was discarded by the idle filter")]
    NoTrainingWindows,
    #[error("frame {0} is not covered by any window")]
    CoverageGap(usize),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path.into());
        }
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }
}
