use thiserror::Error;

/// Errors shared across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid token id {0}")]
    InvalidTokenId(u32),
    #[error("sequence too short")]
    SequenceTooShort,
    #[error("too many spans: {got} exceeds the {max} available sentinels")]
    TooManySpans { got: usize, max: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("generator not ready: {0}")]
    GeneratorNotReady(String),
    #[error("span count mismatch: mask has {mask}, generator produced {gen}")]
    SpanCountMismatch { mask: usize, gen: usize },
    #[error("mode mismatch: expected {expected}, got {got}")]
    ModeMismatch { expected: String, got: String },
    #[error("dataset not bucketized; run curriculum scoring first")]
    NotBucketized,
    #[error("bucket count {k} exceeds dataset size {n}")]
    BucketCountTooLarge { k: usize, n: usize },
    #[error("vocab mismatch: model expects {model}, got {got}")]
    VocabMismatch { model: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("external generator timeout")]
    ExternalTimeout,
    #[error("external generator: {0}")]
    ExternalProtocol(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
