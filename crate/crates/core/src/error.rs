use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid demand: {0}")]
    InvalidDemand(String),

    #[error("incomplete observation: expected {expected} UE samples, got {got}")]
    IncompleteObservation { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
