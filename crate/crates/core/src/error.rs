use std::path::PathBuf;

use thiserror::Error;

use crate::types::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path} could not be parsed: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("channel mismatch in {path}: expected {expected} columns, found {found} at row {row}")]
    ChannelMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
        row: usize,
    },

    #[error("unparseable label in {path} at row {row}: {value:?}")]
    LabelParse {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("unparseable value in {path} at row {row}: {value:?}")]
    ValueParse {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("task not applicable: {task} requires two modalities, got {modalities}")]
    TaskNotApplicable { task: TaskId, modalities: usize },

    #[error("unknown task: {0}")]
    UnknownTask(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rotation undefined for single channel")]
    RotationSingleChannel,

    #[error("not enough subjects: need {needed}, have {have}")]
    NotEnoughSubjects { needed: usize, have: usize },

    #[error("insufficient instances for class {class}: need {needed}, have {have}")]
    InsufficientInstances {
        class: usize,
        needed: usize,
        have: usize,
    },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("loss diverged at epoch {epoch}, step {step}: {value}")]
    Diverged { epoch: usize, step: usize, value: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("subject leakage: {0}")]
    Leakage(String),

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
}
