use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{record}: missing file {}", path.display())]
    MissingFile { record: String, path: PathBuf },
    #[error("{record}: malformed header: {reason}")]
    MalformedHeader { record: String, reason: String },
    #[error("{record}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        record: String,
        expected: usize,
        found: usize,
    },
    #[error("reference string is empty")]
    EmptyReference,
    #[error("empty list")]
    EmptyList,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("decode trace is empty")]
    EmptyTrace,
    #[error("non-positive probability {0} in decode trace")]
    NonPositiveProbability(f64),
    #[error("zero-norm embedding vector")]
    ZeroVector,
    #[error("corpus sample is empty")]
    EmptySample,
    #[error("encoder matrix has no rows")]
    EmptyMatrix,
    #[error("need at least 3 observations, got {0}")]
    TooFewObservations(usize),
    #[error("need at least 3 distinct sizes, got {0}")]
    DegenerateSizes(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("need at least {needed} training instances, got {got}")]
    TooFewInstances { needed: usize, got: usize },
    #[error("no source sample for size {0} and extrapolation is disabled")]
    MissingSample(u64),
    #[error("need at least 2 domains with gold curves, got {0}")]
    InsufficientDomains(usize),
    #[error("no gold labels for {0}")]
    NoGoldLabels(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("unknown domain {0}")]
    UnknownDomain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("held-out sentence {0} reached the training set")]
    Isolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn header(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::MalformedHeader {
            record: record.into(),
            reason: reason.into(),
        }
    }
}
