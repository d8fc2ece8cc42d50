//! The GSP experiment state machine.
//!
//! Every mutation is expressed as a list of [`EventKind`]s that is first
//! decided against the current state and then applied. Applying events is the
//! only way state changes, so replaying a log reproduces the live state
//! exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{advance_chain, aggregate_iteration, AcceptedResponse, ChainSpec, ChainState};
use crate::config::ExperimentConfig;
use crate::error::{CoreError, Result};
use crate::event::{Event, EventKind};
use crate::grid::{LatentPoint, SliderGrid};
use crate::stimulus::RendererIdentity;
use crate::types::{ChainId, ParticipantId, RatingId, Timestamp, TrialId};
use crate::validation::{
    build_validation_set, RatingAssignment, RatingRecord, ValidationItem, ValidationState,
};

/// Stream reserved for the chain design shuffle; trial draws use streams
/// 0, 1, 2, ...
const DESIGN_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialAssignment {
    pub trial_id: TrialId,
    pub participant_id: ParticipantId,
    pub chain_id: ChainId,
    pub iteration: u32,
    pub free_dimension: usize,
    pub initial_slider_index: usize,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

impl TrialAssignment {
    pub fn is_expired(&self, now: Timestamp) -> bool {
        now >= self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResponse {
    pub trial_id: TrialId,
    pub chosen_slider_index: usize,
    pub submitted_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub assignment: TrialAssignment,
    pub answered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub prescreened: bool,
    pub joined_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    AllComplete,
    Deadline,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Phase {
    Running,
    Terminated {
        reason: TerminationReason,
        at: Timestamp,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationStatus {
    Running,
    Terminated(TerminationReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub config: ExperimentConfig,
    pub renderer: RendererIdentity,
    pub grid: SliderGrid,
    pub started_at: Timestamp,
    pub deadline: Timestamp,
    pub chains: Vec<ChainState>,
    pub participants: BTreeMap<ParticipantId, ParticipantRecord>,
    pub trials: BTreeMap<TrialId, TrialRecord>,
    pub next_trial_id: TrialId,
    /// Number of random draws consumed so far; draw `k` uses generator
    /// stream `k` of the experiment seed.
    pub rng_draws: u64,
    pub phase: Phase,
    pub validation: Option<ValidationState>,
    pub last_seq: u64,
}

impl ExperimentState {
    /// State right after `ExperimentInitialized`: balanced chains, all at
    /// iteration 0 on the all-zeros point.
    pub fn initial(
        config: ExperimentConfig,
        renderer: RendererIdentity,
        started_at: Timestamp,
    ) -> Result<Self> {
        let mut issues = config.check();
        if issues.iter().any(|i| i.key == "n_chains") {
            return Err(CoreError::BalancedDesign {
                n_chains: config.n_chains,
                n_emotions: config.emotions.len(),
                n_sentences: config.sentences.len(),
            });
        }
        if !issues.is_empty() {
            for issue in &mut issues {
                issue.line = None;
            }
            return Err(CoreError::Config(crate::config::ConfigReport {
                source: "ExperimentInitialized".into(),
                issues,
            }));
        }
        let grid = config.slider_grid()?;
        let chains = balanced_chains(&config, &grid, started_at);
        let deadline = started_at.plus_millis(config.duration_ms());
        Ok(ExperimentState {
            config,
            renderer,
            grid,
            started_at,
            deadline,
            chains,
            participants: BTreeMap::new(),
            trials: BTreeMap::new(),
            next_trial_id: 1,
            rng_draws: 0,
            phase: Phase::Running,
            validation: None,
            last_seq: 0,
        })
    }

    pub fn chain(&self, id: ChainId) -> Option<&ChainState> {
        self.chains.get(id as usize).filter(|c| c.id() == id)
    }

    fn chain_mut(&mut self, id: ChainId) -> Option<&mut ChainState> {
        self.chains.get_mut(id as usize).filter(|c| c.id() == id)
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self.phase, Phase::Terminated { .. })
    }

    pub fn full_chains(&self) -> impl Iterator<Item = &ChainState> {
        self.chains.iter().filter(|c| c.is_complete())
    }

    /// Unanswered, unexpired assignments for the chain's current iteration.
    pub fn outstanding(&self, chain: &ChainState, now: Timestamp) -> usize {
        chain
            .open_trials
            .iter()
            .filter_map(|id| self.trials.get(id))
            .filter(|t| !t.answered && !t.assignment.is_expired(now))
            .count()
    }

    fn open_trial_of(&self, participant: &ParticipantId, now: Timestamp) -> Option<&TrialAssignment> {
        self.chains
            .iter()
            .filter(|c| !c.is_complete())
            .flat_map(|c| c.open_trials.iter())
            .filter_map(|id| self.trials.get(id))
            .find(|t| {
                !t.answered
                    && &t.assignment.participant_id == participant
                    && !t.assignment.is_expired(now)
            })
            .map(|t| &t.assignment)
    }

    /// Pure termination check; does not change state.
    pub fn check_termination(&self, now: Timestamp) -> TerminationStatus {
        if let Phase::Terminated { reason, .. } = self.phase {
            return TerminationStatus::Terminated(reason);
        }
        if self.chains.iter().all(|c| c.is_complete()) {
            TerminationStatus::Terminated(TerminationReason::AllComplete)
        } else if now >= self.deadline {
            TerminationStatus::Terminated(TerminationReason::Deadline)
        } else {
            TerminationStatus::Running
        }
    }

    fn ensure_participant(&self, participant: &ParticipantId) -> Result<()> {
        let record = self
            .participants
            .get(participant)
            .ok_or_else(|| CoreError::Auth(participant.clone()))?;
        if self.config.require_prescreen && !record.prescreened {
            return Err(CoreError::NotPrescreened(participant.clone()));
        }
        Ok(())
    }

    fn decide_assign(
        &self,
        participant: &ParticipantId,
        now: Timestamp,
    ) -> Result<Option<TrialAssignment>> {
        if self.is_terminated() {
            return Err(CoreError::ExperimentClosed);
        }
        self.ensure_participant(participant)?;
        let ppi = self.config.participants_per_iteration;
        let chosen = self
            .chains
            .iter()
            .filter(|c| !c.is_complete() && !c.has_responded(participant))
            .map(|c| (c, self.outstanding(c, now)))
            .filter(|(c, open)| c.responses.len() + open < ppi)
            .min_by_key(|(c, open)| (*open, c.id()));
        let Some((chain, _)) = chosen else {
            return Ok(None);
        };
        let n = self.grid.n_positions();
        Ok(Some(TrialAssignment {
            trial_id: self.next_trial_id,
            participant_id: participant.clone(),
            chain_id: chain.id(),
            iteration: chain.iteration,
            free_dimension: chain.free_dimension,
            initial_slider_index: draw_index(self.config.seed, self.rng_draws, n),
            issued_at: now,
            expires_at: now.plus_millis(self.config.trial_timeout_ms()),
        }))
    }

    fn decide_response(&self, response: &TrialResponse) -> Result<Vec<EventKind>> {
        if self.is_terminated() {
            return Err(CoreError::ExperimentClosed);
        }
        let id = response.trial_id;
        let trial = self.trials.get(&id).ok_or(CoreError::UnknownTrial(id))?;
        if trial.answered {
            return Err(CoreError::DuplicateResponse(id));
        }
        let a = &trial.assignment;
        let chain = self.chain(a.chain_id).ok_or(CoreError::UnknownTrial(id))?;
        if a.is_expired(response.submitted_at) || chain.iteration != a.iteration || chain.is_complete()
        {
            return Err(CoreError::Expired(id));
        }
        if !self.grid.contains_index(response.chosen_slider_index) {
            return Err(CoreError::IndexOutOfRange {
                index: response.chosen_slider_index,
                n_positions: self.grid.n_positions(),
            });
        }
        let mut events = vec![EventKind::ResponseRecorded {
            trial_id: id,
            participant_id: a.participant_id.clone(),
            chain_id: a.chain_id,
            iteration: a.iteration,
            slider_index: response.chosen_slider_index,
        }];
        let ppi = self.config.participants_per_iteration;
        if chain.responses.len() + 1 == ppi {
            let mut indices: Vec<usize> = chain.responses.iter().map(|r| r.slider_index).collect();
            indices.push(response.chosen_slider_index);
            events.extend(aggregation_events(chain, indices, ppi)?);
            let completes = chain.iteration + 1 >= chain.spec.n_iterations;
            let others_done = self
                .chains
                .iter()
                .all(|c| c.id() == chain.id() || c.is_complete());
            if completes && others_done {
                events.push(self.termination_event(TerminationReason::AllComplete, Some(chain.id())));
            }
        }
        Ok(events)
    }

    fn termination_event(&self, reason: TerminationReason, also_full: Option<ChainId>) -> EventKind {
        let full_chains = self
            .chains
            .iter()
            .filter(|c| c.is_complete() || Some(c.id()) == also_full)
            .map(|c| c.id())
            .collect();
        EventKind::ExperimentTerminated {
            reason,
            full_chains,
        }
    }

    /// Apply one logged event. Inconsistencies surface as corrupt-log errors
    /// naming the event's sequence number.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        let seq = event.seq;
        let corrupt = |reason: String| CoreError::CorruptLog { seq, reason };
        if seq != self.last_seq + 1 {
            return Err(corrupt(format!("expected seq {}", self.last_seq + 1)));
        }
        let now = event.timestamp;
        match &event.kind {
            EventKind::ExperimentInitialized { .. } => {
                return Err(corrupt("experiment initialized twice".into()));
            }
            EventKind::SessionStarted {
                participant_id,
                prescreened,
            } => {
                if self.participants.contains_key(participant_id) {
                    return Err(corrupt(format!("participant {participant_id} registered twice")));
                }
                self.participants.insert(
                    participant_id.clone(),
                    ParticipantRecord {
                        prescreened: *prescreened,
                        joined_at: now,
                    },
                );
            }
            EventKind::TrialAssigned(a) => {
                if a.trial_id != self.next_trial_id {
                    return Err(corrupt(format!("unexpected trial id {}", a.trial_id)));
                }
                if !self.grid.contains_index(a.initial_slider_index) {
                    return Err(corrupt("initial slider index off grid".into()));
                }
                let chain = self
                    .chain_mut(a.chain_id)
                    .ok_or_else(|| corrupt(format!("unknown chain {}", a.chain_id)))?;
                if chain.iteration != a.iteration || chain.is_complete() {
                    return Err(corrupt(format!("chain {} not at iteration {}", a.chain_id, a.iteration)));
                }
                chain.open_trials.push(a.trial_id);
                self.trials.insert(
                    a.trial_id,
                    TrialRecord {
                        assignment: a.clone(),
                        answered: false,
                    },
                );
                self.next_trial_id += 1;
                self.rng_draws += 1;
            }
            EventKind::ResponseRecorded {
                trial_id,
                participant_id,
                chain_id,
                iteration,
                slider_index,
            } => {
                let ppi = self.config.participants_per_iteration;
                let trial = self
                    .trials
                    .get_mut(trial_id)
                    .ok_or_else(|| corrupt(format!("unknown trial {trial_id}")))?;
                if trial.answered {
                    return Err(corrupt(format!("trial {trial_id} answered twice")));
                }
                trial.answered = true;
                let chain = self
                    .chain_mut(*chain_id)
                    .ok_or_else(|| corrupt(format!("unknown chain {chain_id}")))?;
                if chain.iteration != *iteration || chain.responses.len() >= ppi {
                    return Err(corrupt(format!("chain {chain_id} cannot take a response")));
                }
                if chain.has_responded(participant_id) {
                    return Err(corrupt(format!("{participant_id} responded twice")));
                }
                chain.open_trials.retain(|t| t != trial_id);
                chain.responses.push(AcceptedResponse {
                    trial_id: *trial_id,
                    participant_id: participant_id.clone(),
                    slider_index: *slider_index,
                });
                chain.last_update = now;
            }
            EventKind::IterationAggregated {
                chain_id,
                iteration,
                median,
                ..
            } => {
                let ppi = self.config.participants_per_iteration;
                let chain = self
                    .chain_mut(*chain_id)
                    .ok_or_else(|| corrupt(format!("unknown chain {chain_id}")))?;
                if chain.iteration != *iteration {
                    return Err(corrupt(format!("chain {chain_id} already aggregated {iteration}")));
                }
                let indices: Vec<usize> = chain.responses.iter().map(|r| r.slider_index).collect();
                let expected = aggregate_iteration(&indices, ppi).map_err(|e| corrupt(e.to_string()))?;
                if expected != *median {
                    return Err(corrupt(format!("median {median} does not match responses")));
                }
                advance_chain(chain, *median, now).map_err(|e| corrupt(e.to_string()))?;
            }
            EventKind::ChainAdvanced {
                chain_id,
                iteration,
                free_dimension,
                point,
            } => {
                let chain = self
                    .chain(*chain_id)
                    .ok_or_else(|| corrupt(format!("unknown chain {chain_id}")))?;
                if chain.iteration != *iteration
                    || chain.free_dimension != *free_dimension
                    || &chain.current_point != point
                {
                    return Err(corrupt(format!("chain {chain_id} advance does not match aggregation")));
                }
            }
            EventKind::ChainCompleted { chain_id } => {
                let chain = self
                    .chain(*chain_id)
                    .ok_or_else(|| corrupt(format!("unknown chain {chain_id}")))?;
                if !chain.is_complete() {
                    return Err(corrupt(format!("chain {chain_id} is not complete")));
                }
            }
            EventKind::ExperimentTerminated { reason, .. } => {
                if self.is_terminated() {
                    return Err(corrupt("terminated twice".into()));
                }
                self.phase = Phase::Terminated {
                    reason: *reason,
                    at: now,
                };
            }
            EventKind::ValidationSetBuilt { items } => {
                if self.validation.is_some() {
                    return Err(corrupt("validation set built twice".into()));
                }
                self.validation = Some(ValidationState::new(
                    items.clone(),
                    self.config.emotions.clone(),
                    self.config.rating_target,
                ));
            }
            EventKind::RatingAssigned(a) => {
                let v = self
                    .validation
                    .as_mut()
                    .ok_or_else(|| corrupt("rating before validation".into()))?;
                v.apply_assigned(a).map_err(|e| corrupt(e.to_string()))?;
            }
            EventKind::RatingRecorded(r) => {
                let v = self
                    .validation
                    .as_mut()
                    .ok_or_else(|| corrupt("rating before validation".into()))?;
                v.apply_recorded(r).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    /// Structural invariants that hold in every reachable state.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let d = self.config.dimensions;
        let ppi = self.config.participants_per_iteration;
        for c in &self.chains {
            if c.free_dimension != c.iteration as usize % d {
                return Err(format!("chain {}: free dimension out of step", c.id()));
            }
            if c.responses.len() > ppi {
                return Err(format!("chain {}: too many responses", c.id()));
            }
            let mut seen: Vec<&ParticipantId> = c.responses.iter().map(|r| &r.participant_id).collect();
            seen.sort();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(format!("chain {}: participant answered twice", c.id()));
            }
            if c.history.first().map(|h| &h.point) != Some(&LatentPoint::zeros(d, &self.grid)) {
                return Err(format!("chain {}: bad initial point", c.id()));
            }
            for w in c.history.windows(2) {
                let dims = w[0].point.differing_dims(&w[1].point);
                let expected = (w[1].iteration as usize - 1) % d;
                if dims.len() > 1 || dims.first().is_some_and(|&x| x != expected) {
                    return Err(format!("chain {}: iteration {} moved the wrong dimension", c.id(), w[1].iteration));
                }
            }
            if c.history.len() != c.iteration as usize + 1 {
                return Err(format!("chain {}: history length", c.id()));
            }
            if c.is_complete() != (c.iteration >= c.spec.n_iterations) {
                return Err(format!("chain {}: completion status", c.id()));
            }
        }
        if let Some(v) = &self.validation {
            v.check_invariants()?;
        }
        Ok(())
    }
}

fn aggregation_events(chain: &ChainState, indices: Vec<usize>, ppi: usize) -> Result<Vec<EventKind>> {
    let median = aggregate_iteration(&indices, ppi)?;
    let mut after = chain.detached();
    advance_chain(&mut after, median, Timestamp(0))?;
    let mut events = vec![
        EventKind::IterationAggregated {
            chain_id: chain.id(),
            iteration: chain.iteration,
            responses: indices,
            median,
        },
        EventKind::ChainAdvanced {
            chain_id: chain.id(),
            iteration: after.iteration,
            free_dimension: after.free_dimension,
            point: after.current_point.clone(),
        },
    ];
    if after.is_complete() {
        events.push(EventKind::ChainCompleted {
            chain_id: chain.id(),
        });
    }
    Ok(events)
}

fn draw_index(seed: u64, draw: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng.random_range(0..n)
}

/// Every (emotion, sentence) pair replicated equally, in a seeded order.
fn balanced_chains(config: &ExperimentConfig, grid: &SliderGrid, now: Timestamp) -> Vec<ChainState> {
    let replicates = config.replicates().unwrap_or(0);
    let mut cells = Vec::with_capacity(config.n_chains);
    for _ in 0..replicates {
        for &emotion in &config.emotions {
            for sentence in &config.sentences {
                cells.push((emotion, sentence.clone()));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(DESIGN_STREAM);
    cells.shuffle(&mut rng);
    cells
        .into_iter()
        .enumerate()
        .map(|(i, (emotion, sentence))| {
            let spec = ChainSpec {
                chain_id: i as ChainId,
                emotion,
                sentence,
                n_iterations: config.n_iterations,
                participants_per_iteration: config.participants_per_iteration,
            };
            ChainState::new(spec, LatentPoint::zeros(config.dimensions, grid), now)
        })
        .collect()
}

/// An experiment together with the log of every event applied to it.
#[derive(Debug, Clone)]
pub struct Experiment {
    state: ExperimentState,
    log: Vec<Event>,
}

pub fn init_experiment(
    config: ExperimentConfig,
    renderer: RendererIdentity,
    now: Timestamp,
) -> Result<Experiment> {
    Experiment::init(config, renderer, now)
}

impl Experiment {
    pub fn init(config: ExperimentConfig, renderer: RendererIdentity, now: Timestamp) -> Result<Self> {
        let mut state = ExperimentState::initial(config.clone(), renderer.clone(), now)?;
        let event = Event {
            seq: 1,
            timestamp: now,
            kind: EventKind::ExperimentInitialized { config, renderer },
        };
        state.last_seq = 1;
        Ok(Experiment {
            state,
            log: vec![event],
        })
    }

    /// Rebuild from a log by folding every event.
    pub fn from_log(log: Vec<Event>) -> Result<Self> {
        let state = crate::replay::replay(&log)?;
        Ok(Experiment { state, log })
    }

    /// Continue from a snapshot of the state at `state.last_seq`; the log
    /// must contain at least that prefix.
    pub fn from_snapshot(mut state: ExperimentState, log: Vec<Event>) -> Result<Self> {
        let start = state.last_seq as usize;
        if log.len() < start {
            return Err(CoreError::CorruptLog {
                seq: log.len() as u64 + 1,
                reason: "log is shorter than snapshot".into(),
            });
        }
        for event in &log[start..] {
            state.apply(event)?;
        }
        Ok(Experiment { state, log })
    }

    pub fn state(&self) -> &ExperimentState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn into_events(self) -> Vec<Event> {
        self.log
    }

    fn emit(&mut self, now: Timestamp, kinds: Vec<EventKind>) -> Result<()> {
        for kind in kinds {
            let event = Event {
                seq: self.state.last_seq + 1,
                timestamp: now,
                kind,
            };
            self.state.apply(&event)?;
            self.log.push(event);
        }
        Ok(())
    }

    pub fn start_session(&mut self, participant: ParticipantId, prescreened: bool, now: Timestamp) -> Result<()> {
        if self.state.participants.contains_key(&participant) {
            return Ok(());
        }
        self.emit(
            now,
            vec![EventKind::SessionStarted {
                participant_id: participant,
                prescreened,
            }],
        )
    }

    /// Give the participant a slider trial. An unexpired open assignment is
    /// returned again instead of issuing a second one.
    pub fn assign_trial(&mut self, participant: &ParticipantId, now: Timestamp) -> Result<Option<TrialAssignment>> {
        self.check_termination(now)?;
        self.state.ensure_participant(participant)?;
        if self.state.is_terminated() {
            return Err(CoreError::ExperimentClosed);
        }
        if let Some(open) = self.state.open_trial_of(participant, now) {
            return Ok(Some(open.clone()));
        }
        let Some(assignment) = self.state.decide_assign(participant, now)? else {
            return Ok(None);
        };
        self.emit(now, vec![EventKind::TrialAssigned(assignment.clone())])?;
        Ok(Some(assignment))
    }

    pub fn record_response(&mut self, response: TrialResponse) -> Result<()> {
        let events = self.state.decide_response(&response)?;
        self.emit(response.submitted_at, events)
    }

    /// Emit the termination event when the deadline has passed or every chain
    /// is full.
    pub fn check_termination(&mut self, now: Timestamp) -> Result<TerminationStatus> {
        let status = self.state.check_termination(now);
        if let TerminationStatus::Terminated(reason) = status {
            if !self.state.is_terminated() {
                let event = self.state.termination_event(reason, None);
                self.emit(now, vec![event])?;
            }
        }
        Ok(status)
    }

    pub fn terminate(&mut self, now: Timestamp) -> Result<TerminationStatus> {
        if !self.state.is_terminated() {
            let event = self.state.termination_event(TerminationReason::Manual, None);
            self.emit(now, vec![event])?;
        }
        Ok(self.state.check_termination(now))
    }

    /// Finish aggregations whose final response was logged but whose
    /// aggregation was not (e.g. after a crash between the two writes).
    pub fn recover(&mut self, now: Timestamp) -> Result<usize> {
        let ppi = self.state.config.participants_per_iteration;
        let pending: Vec<ChainId> = self
            .state
            .chains
            .iter()
            .filter(|c| !c.is_complete() && c.responses.len() == ppi)
            .map(|c| c.id())
            .collect();
        for &id in &pending {
            let chain = self.state.chain(id).expect("pending chain exists");
            let indices = chain.responses.iter().map(|r| r.slider_index).collect();
            let events = aggregation_events(chain, indices, ppi)?;
            self.emit(now, events)?;
        }
        if !pending.is_empty() && !self.state.is_terminated() {
            self.check_termination(now)?;
        }
        Ok(pending.len())
    }

    /// Build and log the validation set from the full chains. Requires a
    /// terminated experiment.
    pub fn build_validation_set(&mut self, now: Timestamp) -> Result<&[ValidationItem]> {
        if !self.state.is_terminated() {
            return Err(CoreError::Phase("experiment is still running"));
        }
        if self.state.validation.is_some() {
            return Err(CoreError::Phase("validation set already built"));
        }
        let c = &self.state.config;
        let items = build_validation_set(&self.state, &c.novel_sentences, c.n_random, c.seed)?;
        self.emit(now, vec![EventKind::ValidationSetBuilt { items }])?;
        Ok(&self.state.validation.as_ref().expect("just built").items)
    }

    pub fn next_rating_trial(&mut self, participant: &ParticipantId, now: Timestamp) -> Result<Option<RatingAssignment>> {
        let v = self
            .state
            .validation
            .as_ref()
            .ok_or(CoreError::Phase("validation set not built"))?;
        if !self.state.participants.contains_key(participant) {
            return Err(CoreError::Auth(participant.clone()));
        }
        if let Some(open) = v.open_assignment_of(participant, now) {
            return Ok(Some(open.clone()));
        }
        let timeout = self.state.config.trial_timeout_ms();
        let Some(assignment) = v.decide_next(participant, now, timeout) else {
            return Ok(None);
        };
        self.emit(now, vec![EventKind::RatingAssigned(assignment.clone())])?;
        Ok(Some(assignment))
    }

    pub fn record_rating(&mut self, rating_id: RatingId, rating: u8, now: Timestamp) -> Result<RatingRecord> {
        let v = self
            .state
            .validation
            .as_ref()
            .ok_or(CoreError::Phase("validation set not built"))?;
        let record = v.decide_record(rating_id, rating, now)?;
        self.emit(now, vec![EventKind::RatingRecorded(record.clone())])?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Emotion;

    fn renderer() -> RendererIdentity {
        RendererIdentity::new("test", None)
    }

    fn config(n_chains: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_chains,
            ..ExperimentConfig::default()
        }
    }

    fn pid(i: usize) -> ParticipantId {
        ParticipantId::new(format!("p{i:03}"))
    }

    fn experiment(n_chains: usize) -> Experiment {
        let mut e = Experiment::init(config(n_chains), renderer(), Timestamp(0)).unwrap();
        for i in 0..200 {
            e.start_session(pid(i), true, Timestamp(0)).unwrap();
        }
        e
    }

    fn respond(e: &mut Experiment, trial: TrialId, k: usize, at: i64) -> Result<()> {
        e.record_response(TrialResponse {
            trial_id: trial,
            chosen_slider_index: k,
            submitted_at: Timestamp(at),
        })
    }

    #[test]
    fn balanced_45_chain_design() {
        let e = experiment(45);
        let mut counts: BTreeMap<(Emotion, String), usize> = BTreeMap::new();
        for c in &e.state().chains {
            *counts.entry((c.spec.emotion, c.spec.sentence.clone())).or_default() += 1;
            assert_eq!(c.iteration, 0);
            assert_eq!(c.free_dimension, 0);
            assert!(c.current_point.weights(&e.state().grid).iter().all(|&w| w == 0.0));
        }
        assert_eq!(counts.len(), 9);
        assert!(counts.values().all(|&n| n == 5));
    }

    #[test]
    fn nine_chains_one_per_cell() {
        let e = experiment(9);
        let mut cells: Vec<_> = e
            .state()
            .chains
            .iter()
            .map(|c| (c.spec.emotion, c.spec.sentence.clone()))
            .collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 9);
    }

    #[test]
    fn unbalanced_design_is_an_error() {
        let err = Experiment::init(config(10), renderer(), Timestamp(0)).unwrap_err();
        assert!(matches!(err, CoreError::BalancedDesign { n_chains: 10, .. }));
    }

    #[test]
    fn design_is_seed_deterministic() {
        let a = experiment(45);
        let b = experiment(45);
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn first_assignment_shape() {
        let mut e = experiment(45);
        let a = e.assign_trial(&pid(0), Timestamp(5)).unwrap().unwrap();
        assert_eq!(a.iteration, 0);
        assert_eq!(a.free_dimension, 0);
        assert!(a.initial_slider_index < 32);
        assert_eq!(a.expires_at, Timestamp(5 + 600_000));
    }

    #[test]
    fn unknown_participant_rejected() {
        let mut e = experiment(9);
        assert!(matches!(
            e.assign_trial(&ParticipantId::new("ghost"), Timestamp(0)),
            Err(CoreError::Auth(_))
        ));
    }

    #[test]
    fn prescreen_required() {
        let mut c = config(9);
        c.require_prescreen = true;
        let mut e = Experiment::init(c, renderer(), Timestamp(0)).unwrap();
        e.start_session(pid(0), false, Timestamp(0)).unwrap();
        assert!(matches!(
            e.assign_trial(&pid(0), Timestamp(0)),
            Err(CoreError::NotPrescreened(_))
        ));
    }

    #[test]
    fn open_assignment_is_reissued() {
        let mut e = experiment(9);
        let a = e.assign_trial(&pid(0), Timestamp(0)).unwrap().unwrap();
        let b = e.assign_trial(&pid(0), Timestamp(10)).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(e.state().trials.len(), 1);
    }

    #[test]
    fn participant_never_reassigned_same_slot() {
        let mut e = experiment(9);
        let mut answered = Vec::new();
        let mut t = 1;
        while let Some(b) = e.assign_trial(&pid(0), Timestamp(t)).unwrap() {
            assert!(!answered.contains(&(b.chain_id, b.iteration)));
            answered.push((b.chain_id, b.iteration));
            respond(&mut e, b.trial_id, 3, t).unwrap();
            t += 1;
        }
        // one answer per chain at iteration 0, then nothing left for p0
        assert_eq!(answered.len(), 9);
    }

    #[test]
    fn capacity_exhausted_returns_none() {
        let mut e = experiment(9);
        for i in 0..45 {
            assert!(e.assign_trial(&pid(i), Timestamp(0)).unwrap().is_some());
        }
        assert!(e.assign_trial(&pid(45), Timestamp(0)).unwrap().is_none());
        // after expiry the slots reopen
        assert!(e.assign_trial(&pid(45), Timestamp(600_000)).unwrap().is_some());
    }

    #[test]
    fn fifth_response_advances_chain() {
        let mut e = experiment(9);
        let picks = [4, 18, 9, 9, 30];
        let mut chain = None;
        for (i, &k) in picks.iter().enumerate() {
            let a = e.assign_trial(&pid(i), Timestamp(0)).unwrap().unwrap();
            chain.get_or_insert(a.chain_id);
            assert_eq!(Some(a.chain_id), chain);
            respond(&mut e, a.trial_id, k, 1).unwrap();
            let c = e.state().chain(a.chain_id).unwrap();
            if i < 4 {
                assert_eq!(c.iteration, 0);
            } else {
                assert_eq!(c.iteration, 1);
                assert_eq!(c.free_dimension, 1);
                assert_eq!(c.current_point.index(0), 9);
            }
        }
        let aggregated = e
            .events()
            .iter()
            .filter(|ev| matches!(ev.kind, EventKind::IterationAggregated { .. }))
            .count();
        assert_eq!(aggregated, 1);
    }

    #[test]
    fn expired_response_leaves_state_unchanged() {
        let mut e = experiment(9);
        let a = e.assign_trial(&pid(0), Timestamp(0)).unwrap().unwrap();
        let before = e.state().clone();
        assert!(matches!(
            respond(&mut e, a.trial_id, 3, 600_000),
            Err(CoreError::Expired(_))
        ));
        assert_eq!(&before, e.state());
    }

    #[test]
    fn duplicate_response_rejected() {
        let mut e = experiment(9);
        let a = e.assign_trial(&pid(0), Timestamp(0)).unwrap().unwrap();
        respond(&mut e, a.trial_id, 3, 1).unwrap();
        assert!(matches!(
            respond(&mut e, a.trial_id, 3, 2),
            Err(CoreError::DuplicateResponse(_))
        ));
        assert!(matches!(respond(&mut e, 999, 3, 2), Err(CoreError::UnknownTrial(999))));
    }

    #[test]
    fn off_grid_response_rejected() {
        let mut e = experiment(9);
        let a = e.assign_trial(&pid(0), Timestamp(0)).unwrap().unwrap();
        assert!(matches!(
            respond(&mut e, a.trial_id, 32, 1),
            Err(CoreError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn termination_rules() {
        let mut e = experiment(9);
        assert_eq!(e.check_termination(Timestamp(1)).unwrap(), TerminationStatus::Running);
        let deadline = e.state().deadline;
        assert_eq!(deadline, Timestamp(48 * 3_600_000));
        assert_eq!(
            e.check_termination(deadline).unwrap(),
            TerminationStatus::Terminated(TerminationReason::Deadline)
        );
        assert!(matches!(
            e.assign_trial(&pid(0), deadline),
            Err(CoreError::ExperimentClosed)
        ));
    }

    #[test]
    fn all_complete_terminates() {
        let mut c = config(9);
        c.n_iterations = 2;
        c.participants_per_iteration = 1;
        let mut e = Experiment::init(c, renderer(), Timestamp(0)).unwrap();
        e.start_session(pid(0), true, Timestamp(0)).unwrap();
        let mut t = 0;
        while let Some(a) = e.assign_trial(&pid(0), Timestamp(t)).unwrap() {
            respond(&mut e, a.trial_id, 7, t).unwrap();
            t += 1;
            if e.state().is_terminated() {
                break;
            }
        }
        assert_eq!(
            e.state().phase,
            Phase::Terminated {
                reason: TerminationReason::AllComplete,
                at: Timestamp(t - 1)
            }
        );
        match &e.events().last().unwrap().kind {
            EventKind::ExperimentTerminated { full_chains, .. } => assert_eq!(full_chains.len(), 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recover_finishes_pending_aggregation() {
        let mut e = experiment(9);
        for i in 0..5 {
            let a = e.assign_trial(&pid(i), Timestamp(0)).unwrap().unwrap();
            respond(&mut e, a.trial_id, i, 1).unwrap();
        }
        // drop the aggregation events as if the process crashed after the
        // fifth response was written
        let mut log = e.into_events();
        while !matches!(log.last().unwrap().kind, EventKind::ResponseRecorded { .. }) {
            log.pop();
        }
        let mut e = Experiment::from_log(log).unwrap();
        assert_eq!(e.state().chains.iter().map(|c| c.iteration).max(), Some(0));
        assert_eq!(e.recover(Timestamp(2)).unwrap(), 1);
        assert_eq!(e.state().chains.iter().map(|c| c.iteration).max(), Some(1));
        e.state().check_invariants().unwrap();
    }
}
