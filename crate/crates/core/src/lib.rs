//! Core of the Gibbs-sampling-with-people platform.
//!
//! Participants each move one slider over a discrete grid; the median of a
//! group's choices is written into that dimension of the chain's point and the
//! next group works on the following dimension. This crate holds the
//! experiment state machine, its append-only event log, replay, and the
//! validation rating scheduler, plus the shared audio buffer type.

pub mod audio;
pub mod chain;
pub mod config;
pub mod error;
pub mod event;
pub mod experiment;
pub mod grid;
pub mod log;
pub mod replay;
pub mod stimulus;
pub mod types;
pub mod validation;

pub use audio::{AudioBuffer, AudioError, DEFAULT_SAMPLE_RATE};
pub use chain::{advance_chain, aggregate_iteration, ChainSpec, ChainState, ChainStatus};
pub use config::{parse_config, validate_config, validate_config_with, ExperimentConfig};
pub use error::{CoreError, Result};
pub use event::{Event, EventKind};
pub use experiment::{
    init_experiment, Experiment, ExperimentState, Phase, TerminationReason, TerminationStatus,
    TrialAssignment, TrialResponse,
};
pub use grid::{make_slider_grid, LatentPoint, SliderGrid};
pub use replay::{replay, replay_or_init};
pub use stimulus::{RendererIdentity, StimulusId};
pub use types::{ChainId, Emotion, ParticipantId, RatingId, Timestamp, TrialId};
pub use validation::{
    build_validation_set, RatingAssignment, RatingRecord, StimulusKind, ValidationItem,
};
