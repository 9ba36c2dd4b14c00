use thiserror::Error;

/// Errors raised by the lifecycle engine and its simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("skill id `{0}` already present in the bank")]
    DuplicateId(String),
    #[error("task-specific skill `{0}` has no task type")]
    MissingTaskType(String),
    #[error("general skill `{0}` must not carry a task type")]
    UnexpectedTaskType(String),
    #[error("expanded skill `{0}` must be task-specific")]
    ExpandedGeneral(String),
    #[error("skill `{0}` is not active")]
    NotActive(String),
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("embedding of `{0}` is not unit-norm (norm = {1})")]
    NotUnitNorm(String, f64),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no routed validation outcomes to score")]
    EmptySubset,
    #[error("failure bucket is empty")]
    EmptyBucket,
    #[error("generated skill duplicates `{existing}` (cosine {similarity:.4})")]
    Duplicate { existing: String, similarity: f64 },
    #[error("generated skill for bucket `{0}` covers no uncovered concept")]
    NothingUncovered(String),
    #[error("group of {0} rollouts is too small for group-relative advantages")]
    GroupTooSmall(usize),
    #[error("task `{0}` from a non-validation split reached lifecycle statistics")]
    SplitLeak(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown regime `{0}`")]
    UnknownRegime(String),
    #[error("replay diverged at event {index}: {reason}")]
    Replay { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
