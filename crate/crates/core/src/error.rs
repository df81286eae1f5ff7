use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {file} line {line}: {message}")]
    Json {
        file: String,
        line: usize,
        message: String,
    },

    #[error("bad magic at blob offset {offset}: expected \"TPAB\"")]
    BadMagic { offset: u64 },

    #[error("activation offset {offset} out of range (blob is {len} bytes)")]
    OffsetOutOfRange { offset: u64, len: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invariant violated by record {record_id}: {violation}")]
    InvariantViolation {
        record_id: String,
        violation: String,
    },

    #[error("token offsets are inconsistent with the answer text: {0}")]
    InconsistentOffsets(String),

    #[error("span ({first}, {last}) out of range for {len} generated tokens")]
    SpanOutOfRange { first: usize, last: usize, len: usize },

    #[error("record {0} has no exact-answer span")]
    MissingSpan(String),

    #[error("record {0} has no generated tokens")]
    EmptyTokenList(String),

    #[error("record {0} has no P(True) score")]
    MissingPTrue(String),

    #[error("unknown detector name {0:?}")]
    UnknownDetector(String),

    #[error("training split contains a single class")]
    SingleClassTrainingSplit,

    #[error("labels contain a single class")]
    SingleClass,

    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("insufficient class counts: {positives} positive, {negatives} negative (need at least {needed} of each)")]
    InsufficientClassCounts {
        positives: usize,
        negatives: usize,
        needed: usize,
    },

    #[error("position {0:?} is not present in the dataset")]
    MissingPosition(String),

    #[error("layer {layer} out of range for {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("dataset has no resamples")]
    MissingResamples,

    #[error("missing activations: {0}")]
    MissingActivations(String),

    #[error("record {0} has an empty resample set")]
    EmptyResamples(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty grid")]
    EmptyGrid,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
