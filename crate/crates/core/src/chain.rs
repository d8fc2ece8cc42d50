use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::LatentPoint;
use crate::types::{ChainId, Emotion, ParticipantId, Timestamp, TrialId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub chain_id: ChainId,
    pub emotion: Emotion,
    pub sentence: String,
    pub n_iterations: u32,
    pub participants_per_iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainStatus {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u32,
    pub point: LatentPoint,
}

/// A response accepted for the chain's current iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedResponse {
    pub trial_id: TrialId,
    pub participant_id: ParticipantId,
    pub slider_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub spec: ChainSpec,
    pub current_point: LatentPoint,
    pub iteration: u32,
    pub free_dimension: usize,
    /// Point after every iteration, starting with the initialization at 0.
    pub history: Vec<HistoryEntry>,
    pub status: ChainStatus,
    /// Responses collected for the current iteration.
    pub responses: Vec<AcceptedResponse>,
    /// Assignments issued for the current iteration and not yet answered
    /// (possibly expired).
    pub open_trials: Vec<TrialId>,
    pub last_update: Timestamp,
}

impl ChainState {
    pub fn new(spec: ChainSpec, start: LatentPoint, now: Timestamp) -> Self {
        ChainState {
            history: vec![HistoryEntry {
                iteration: 0,
                point: start.clone(),
            }],
            spec,
            current_point: start,
            iteration: 0,
            free_dimension: 0,
            status: ChainStatus::Active,
            responses: Vec::new(),
            open_trials: Vec::new(),
            last_update: now,
        }
    }

    pub fn id(&self) -> ChainId {
        self.spec.chain_id
    }

    pub fn is_complete(&self) -> bool {
        self.status == ChainStatus::Complete
    }

    pub fn dimensions(&self) -> usize {
        self.current_point.dimensions()
    }

    pub fn has_responded(&self, participant: &ParticipantId) -> bool {
        self.responses.iter().any(|r| &r.participant_id == participant)
    }

    /// Copy of the chain's position and status without its history or
    /// pending work; cheap for long chains.
    pub fn detached(&self) -> ChainState {
        ChainState {
            spec: self.spec.clone(),
            current_point: self.current_point.clone(),
            iteration: self.iteration,
            free_dimension: self.free_dimension,
            history: Vec::new(),
            status: self.status,
            responses: Vec::new(),
            open_trials: Vec::new(),
            last_update: self.last_update,
        }
    }

    /// Point at iteration `t`, if the chain got that far.
    pub fn point_at(&self, t: u32) -> Option<&LatentPoint> {
        self.history
            .iter()
            .find(|h| h.iteration == t)
            .map(|h| &h.point)
    }
}

/// Median of an odd number of grid indices. The result is always one of the
/// inputs.
pub fn aggregate_iteration(responses: &[usize], expected: usize) -> Result<usize> {
    if responses.len() != expected || expected.is_multiple_of(2) {
        return Err(CoreError::Arity {
            expected,
            got: responses.len(),
        });
    }
    let mut sorted = responses.to_vec();
    sorted.sort_unstable();
    Ok(sorted[sorted.len() / 2])
}

/// Write the aggregated value into the free dimension and move to the next
/// iteration, cycling through the dimensions.
pub fn advance_chain(chain: &mut ChainState, aggregated_index: usize, now: Timestamp) -> Result<()> {
    if chain.is_complete() {
        return Err(CoreError::ChainComplete(chain.id()));
    }
    let dims = chain.dimensions();
    chain.current_point = chain
        .current_point
        .with_index(chain.free_dimension, aggregated_index);
    chain.iteration += 1;
    chain.free_dimension = chain.iteration as usize % dims;
    chain.history.push(HistoryEntry {
        iteration: chain.iteration,
        point: chain.current_point.clone(),
    });
    chain.responses.clear();
    chain.open_trials.clear();
    chain.last_update = now;
    if chain.iteration >= chain.spec.n_iterations {
        chain.status = ChainStatus::Complete;
    }
    Ok(())
}
