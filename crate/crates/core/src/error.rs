use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParsError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numeric failure at step {step}: {msg}")]
    Numeric { step: usize, msg: String },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iteration {iteration}, direction {direction}: {source}")]
    Rollout {
        iteration: u64,
        direction: usize,
        #[source]
        source: Box<ParsError>,
    },

    #[error("non-finite reward in iteration {iteration}, direction {direction}")]
    NonFiniteReward { iteration: u64, direction: usize },

    #[error("oracle search space of {size} schedules exceeds the guard of {limit}")]
    OracleGuard { size: String, limit: u64 },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ParsError>;
