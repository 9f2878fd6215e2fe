use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("segment {0} has no feature vector")]
    Undescribed(u64),

    #[error("segment {0} has too few points ({1}) for description")]
    TooFewPoints(u64, usize),

    #[error("training set must contain both matches and non-matches")]
    SingleClass,

    #[error("forest classifier selected but no model was provided")]
    MissingModel,

    #[error("incompatible model: expected {expected} features, file has {found}")]
    IncompatibleModel { expected: usize, found: usize },

    #[error("unsupported format version: {0}")]
    Version(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("trajectory has no pose for scan {0}")]
    MissingPose(usize),

    #[error("no revisit found: sequence produced no corresponding segment pairs")]
    NoRevisit,

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
