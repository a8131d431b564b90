use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("object unreachable for the scripted expert at {0:?}")]
    Unreachable([f64; 2]),

    #[error("demo generation gave up after {attempts} attempts with {successes}/{wanted} successes")]
    GenerationFailed {
        attempts: usize,
        successes: usize,
        wanted: usize,
    },

    #[error("dataset format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
