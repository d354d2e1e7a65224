use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid camera `{camera}`: {reason}")]
    InvalidCamera { camera: String, reason: String },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown class `{name}` (accepted: {accepted})")]
    UnknownClass { name: String, accepted: String },

    #[error("calibration is missing required key `{0}`")]
    MissingKey(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("frame {got} does not follow frame {last}; frames must arrive in strictly increasing order")]
    Sequencing { last: u32, got: u32 },

    #[error("frame-count mismatch: ground truth has {gt} frames, hypotheses have {hyp}")]
    FrameMismatch { gt: usize, hyp: usize },

    #[error("frame index mismatch: ground truth frame {gt} is paired with hypothesis frame {hyp}")]
    FrameAlignment { gt: u32, hyp: u32 },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    /// Attach the offending file path to an error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File { path: path.into(), source: Box::new(self) }
    }
}
