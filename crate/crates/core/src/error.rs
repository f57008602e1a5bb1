use thiserror::Error;

/// Every failure the library can report. Variant names double as the
/// diagnostic tag printed by the command line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("scenario has no target agent")]
    NoTargetAgent,
    #[error("target track has {got} frames, need at least {need}")]
    InsufficientFrames { got: usize, need: usize },
    #[error("sequence too short: {got} elements, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("rank-deficient least-squares design")]
    DegenerateDesign,
    #[error("empty sequence")]
    EmptySequence,
    #[error("forgetting factor {0} outside (0, 1)")]
    LambdaOutOfRange(f64),
    #[error("negative horizon {0} s")]
    NegativeHorizon(f64),
    #[error("nearest lane is {0:.2} m away")]
    NoLaneInRange(f64),
    #[error("no valid centerline")]
    NoValidCenterline,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("scene slices do not cover the node set: {0}")]
    SliceMismatch(String),
    #[error("hidden size {hidden} not divisible by {heads} heads")]
    IndivisibleHeads { hidden: usize, heads: usize },
    #[error("map variant requires a centerline prior")]
    MissingPrior,
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("empty evaluation set")]
    EmptySet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MalformedInput(_) => "MalformedInput",
            Error::NoTargetAgent => "NoTargetAgent",
            Error::InsufficientFrames { .. } => "InsufficientFrames",
            Error::TooShort { .. } => "TooShort",
            Error::DegenerateDesign => "DegenerateDesign",
            Error::EmptySequence => "EmptySequence",
            Error::LambdaOutOfRange(_) => "LambdaOutOfRange",
            Error::NegativeHorizon(_) => "NegativeHorizon",
            Error::NoLaneInRange(_) => "NoLaneInRange",
            Error::NoValidCenterline => "NoValidCenterline",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NotScalar(_) => "NotScalar",
            Error::SliceMismatch(_) => "SliceMismatch",
            Error::IndivisibleHeads { .. } => "IndivisibleHeads",
            Error::MissingPrior => "MissingPrior",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EmptySet => "EmptySet",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
