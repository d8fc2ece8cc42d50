use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid target for {emotion}: {reason}")]
    Target { emotion: String, reason: String },
    #[error("covariance is not symmetric positive definite")]
    Conditioning,
    #[error("no target for emotion {0}")]
    MissingTarget(String),
    #[error("state space of {states} points exceeds the oracle limit of {limit}")]
    TooLarge { states: usize, limit: usize },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Core(#[from] gsp_core::CoreError),
    #[error(transparent)]
    Render(#[from] gsp_render::RenderError),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
