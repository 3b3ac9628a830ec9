use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("corpus of {requested} contexts exceeds the cap of {cap}")]
    CorpusTooLarge { requested: String, cap: u64 },

    #[error("invalid context: {0}")]
    InvalidContext(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("agent {agent} is not in the active set")]
    InactiveAgent { agent: usize },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed instance: {0}")]
    MalformedInstance(String),

    #[error("config: {0}")]
    Config(String),

    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),

    #[error("run failed (iteration {iteration}, {mechanism}): {source}")]
    RunFailed {
        iteration: usize,
        mechanism: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
