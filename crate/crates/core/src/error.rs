use crate::grid::Offset;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("offset {0} appears more than once in the neighbourhood structure")]
    DuplicateOffset(Offset),
    #[error("offset {0} and its negative are both present in the neighbourhood structure")]
    OppositeOffsetPresent(Offset),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("offset {0} is not part of the neighbourhood structure")]
    UnknownOffset(Offset),
    #[error("label set must contain between 1 and 256 labels, got {0}")]
    InvalidLabelCount(usize),
    #[error("label {label} is outside the label set of size {count}")]
    InvalidLabel { label: usize, count: usize },
    #[error("enumeration of {configurations:.3e} labellings exceeds the cap of {cap}")]
    DomainTooLarge { configurations: f64, cap: u64 },
    #[error("an image was supplied without an appearance model")]
    MissingAppearance,
    #[error("incompatible models: {0}")]
    IncompatibleModels(String),
    #[error("node ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: i64, y: i64 },
    #[error("initial labelling conflicts with the clamp at ({x}, {y})")]
    ClampConflict { x: usize, y: usize },
    #[error("image has {found} channels, appearance model expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("incompatible statistics: {0}")]
    IncompatibleStatistics(String),
    #[error("candidate offset {0} is already part of the structure")]
    CandidateInStructure(Offset),
    #[error("requested {requested} offsets but only {available} candidates exist")]
    RangeExhausted { requested: usize, available: usize },
    #[error("label mapping mismatch: {0}")]
    MappingMismatch(String),
    #[error("incompatible indexing: {0}")]
    IncompatibleIndexing(String),
    #[error("incompatible domains: {0}")]
    IncompatibleDomains(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("label value {value} out of range for {count} labels")]
    LabelOutOfRange { value: usize, count: usize },
    #[error("could not place {0} without overlap")]
    PlacementFailure(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid training event: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Format(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::PlacementFailure(_))
    }
}
