use thiserror::Error;

use crate::config::ConfigReport;
use crate::types::{ChainId, ParticipantId, TrialId};

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unbalanced design: {n_chains} chains cannot be split evenly over {n_emotions} emotions x {n_sentences} sentences")]
    BalancedDesign {
        n_chains: usize,
        n_emotions: usize,
        n_sentences: usize,
    },

    #[error("unknown participant {0}")]
    Auth(ParticipantId),

    #[error("participant {0} has not passed prescreening")]
    NotPrescreened(ParticipantId),

    #[error("experiment is closed")]
    ExperimentClosed,

    #[error("unknown trial {0}")]
    UnknownTrial(TrialId),

    #[error("trial {0} was already answered")]
    DuplicateResponse(TrialId),

    #[error("trial {0} expired")]
    Expired(TrialId),

    #[error("slider index {index} outside grid of {n_positions} positions")]
    IndexOutOfRange { index: usize, n_positions: usize },

    #[error("aggregation needs {expected} responses, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("chain {0} is already complete")]
    ChainComplete(ChainId),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("no full chains to build a validation set from")]
    EmptyExperiment,

    #[error("wrong phase: {0}")]
    Phase(&'static str),

    #[error("rating {0} outside 1..=4")]
    RatingRange(u8),

    #[error("unknown rating assignment {0}")]
    UnknownRating(u64),

    #[error("duplicate rating: {0}")]
    DuplicateRating(String),

    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },

    #[error("{0}")]
    Config(ConfigReport),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
