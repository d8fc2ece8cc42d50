use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("audio is too short for analysis ({0:.3} s)")]
    TooShort(f64),
    #[error("audio is silent")]
    Silent,
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("input has zero variance")]
    Degenerate,
    #[error("feature schema mismatch: trained on {trained:?}, given {given:?}")]
    Schema { trained: Vec<String>, given: Vec<String> },
    #[error("non-finite value in column {0}")]
    NonFinite(usize),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;
