use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("expected {expected} control weights, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid mapping file: {0}")]
    Mapping(String),
    #[error("sentence has no syllables: {0:?}")]
    EmptySentence(String),
    #[error("render backend failed: {0}")]
    Backend(String),
    #[error("renderer busy")]
    Busy,
    #[error("rendering failed at slider indices {indices:?}: {reason}")]
    Batch { indices: Vec<usize>, reason: String },
    #[error(transparent)]
    Audio(#[from] gsp_core::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RenderError> = std::result::Result<T, E>;
