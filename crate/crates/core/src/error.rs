use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("directory does not exist: {0}")]
    MissingDirectory(PathBuf),

    #[error("{dir}: need at least 2 frames, found {found}")]
    TooFewFrames { dir: PathBuf, found: usize },

    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("not an IKA1 tensor file (magic bytes {0:02x?})")]
    BadMagic([u8; 4]),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid specification: {0}")]
    BadSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("frame contains non-binary pixel value {0}")]
    NonBinaryInput(f64),

    #[error("sequence has {len} frames, need at least {required}")]
    SequenceTooShort { len: usize, required: usize },

    #[error("no periodicity detected: {peaks} peak(s) survived suppression")]
    NoPeriodicity { peaks: usize },

    #[error("checkerboard split needs an even resolution, got {0}")]
    OddResolution(usize),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("degenerate cycle: every embedded frame is zero")]
    DegenerateCycle,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("eigenvalue {re}{im:+}i lies on the closed negative real axis")]
    BranchCut { re: f64, im: f64 },

    #[error("operator is not diagonalizable (eigenvector condition {condition:e})")]
    NotDiagonalizable { condition: f64 },

    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),

    #[error("classifier needs at least two distinct labels")]
    SingleClass,

    #[error("empty input")]
    EmptyInput,

    #[error("classifier has not been fitted")]
    UnfittedModel,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
