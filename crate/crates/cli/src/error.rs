use std::path::PathBuf;

use senselearn::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing required option --{0}")]
    MissingOption(&'static str),

    #[error("unknown protocol: {0}")]
    UnknownProtocol(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Process exit codes. Clap reports usage errors with 2 on its own.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INVALID_CONFIG: u8 = 3;
    pub const MISSING_FILE: u8 = 4;
    pub const UNKNOWN_NAME: u8 = 5;
    pub const NOT_APPLICABLE: u8 = 6;
    pub const LEAKAGE: u8 = 7;
    pub const DIVERGED: u8 = 8;
    pub const CHECKPOINT: u8 = 9;
    pub const BAD_DATA: u8 = 10;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InvalidConfig(_) => exit::INVALID_CONFIG,
            CliError::MissingOption(_) => exit::USAGE,
            CliError::UnknownProtocol(_) => exit::UNKNOWN_NAME,
            CliError::Write { .. } => exit::MISSING_FILE,
            CliError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::MissingFile(_) => exit::MISSING_FILE,
                CoreError::UnknownTask(_) => exit::UNKNOWN_NAME,
                CoreError::TaskNotApplicable { .. } | CoreError::RotationSingleChannel => exit::NOT_APPLICABLE,
                CoreError::Leakage(_) => exit::LEAKAGE,
                CoreError::Diverged { .. } => exit::DIVERGED,
                CoreError::Checkpoint(_) => exit::CHECKPOINT,
                CoreError::InvalidArgument(_) => exit::INVALID_CONFIG,
                CoreError::Manifest { .. }
                | CoreError::ChannelMismatch { .. }
                | CoreError::LabelParse { .. }
                | CoreError::ValueParse { .. }
                | CoreError::NotEnoughSubjects { .. }
                | CoreError::InsufficientInstances { .. }
                | CoreError::SingleClass => exit::BAD_DATA,
                CoreError::ShapeMismatch(_) | CoreError::Json(_) => exit::FAILURE,
            },
        }
    }
}
