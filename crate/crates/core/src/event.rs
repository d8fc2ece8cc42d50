use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{TerminationReason, TrialAssignment};
use crate::grid::LatentPoint;
use crate::stimulus::RendererIdentity;
use crate::types::{ChainId, ParticipantId, Timestamp, TrialId};
use crate::validation::{RatingAssignment, RatingRecord, ValidationItem};

/// One entry of the append-only experiment log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum EventKind {
    ExperimentInitialized {
        config: ExperimentConfig,
        renderer: RendererIdentity,
    },
    SessionStarted {
        participant_id: ParticipantId,
        prescreened: bool,
    },
    TrialAssigned(TrialAssignment),
    ResponseRecorded {
        trial_id: TrialId,
        participant_id: ParticipantId,
        chain_id: ChainId,
        iteration: u32,
        slider_index: usize,
    },
    /// Median of the iteration's responses; applying it advances the chain.
    IterationAggregated {
        chain_id: ChainId,
        iteration: u32,
        responses: Vec<usize>,
        median: usize,
    },
    ChainAdvanced {
        chain_id: ChainId,
        iteration: u32,
        free_dimension: usize,
        point: LatentPoint,
    },
    ChainCompleted {
        chain_id: ChainId,
    },
    ExperimentTerminated {
        reason: TerminationReason,
        full_chains: Vec<ChainId>,
    },
    ValidationSetBuilt {
        items: Vec<ValidationItem>,
    },
    RatingAssigned(RatingAssignment),
    RatingRecorded(RatingRecord),
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ExperimentInitialized { .. } => "ExperimentInitialized",
            EventKind::SessionStarted { .. } => "SessionStarted",
            EventKind::TrialAssigned(_) => "TrialAssigned",
            EventKind::ResponseRecorded { .. } => "ResponseRecorded",
            EventKind::IterationAggregated { .. } => "IterationAggregated",
            EventKind::ChainAdvanced { .. } => "ChainAdvanced",
            EventKind::ChainCompleted { .. } => "ChainCompleted",
            EventKind::ExperimentTerminated { .. } => "ExperimentTerminated",
            EventKind::ValidationSetBuilt { .. } => "ValidationSetBuilt",
            EventKind::RatingAssigned(_) => "RatingAssigned",
            EventKind::RatingRecorded(_) => "RatingRecorded",
        }
    }
}
