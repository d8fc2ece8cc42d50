//! Closed-loop simulation on a virtual clock.
//!
//! Participants from a fixed pool arrive one after another at a constant
//! interval, each taking one slider trial that lasts `trial_secs`. The
//! experiment ends at its deadline or when every chain is full, exactly as
//! it would with people.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use gsp_core::{
    Emotion, Experiment, ExperimentConfig, ParticipantId, RendererIdentity, Timestamp, TrialId, TrialResponse,
};
use gsp_render::{render_slider_batch, BuiltinRenderer, Renderer, StimulusCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{agent_choose, AgentPolicy, RatingAgent};
use crate::error::{Result, SimError};
use crate::target::{CompiledTarget, TargetSet};

const AGENT_STREAM: u64 = 1;
const RATING_STREAM: u64 = 2;

/// 2021-01-01T00:00:00Z; simulations run on a fixed virtual calendar.
pub const SIM_EPOCH: Timestamp = Timestamp(1_609_459_200_000);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub participants: usize,
    pub arrival_interval_secs: f64,
    pub trial_secs: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            participants: 130,
            arrival_interval_secs: 30.0,
            trial_secs: 60.0,
        }
    }
}

impl Timing {
    fn validate(&self) -> Result<()> {
        if self.participants == 0 {
            return Err(SimError::Scenario("timing.participants must be at least 1".into()));
        }
        for (name, v) in [
            ("arrival_interval_secs", self.arrival_interval_secs),
            ("trial_secs", self.trial_secs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Scenario(format!("timing.{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingSettings {
    pub raters: usize,
    pub agent: RatingAgent,
    pub secs_per_rating: f64,
}

impl Default for RatingSettings {
    fn default() -> Self {
        RatingSettings {
            raters: 82,
            agent: RatingAgent::default(),
            secs_per_rating: 8.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub arrivals: usize,
    pub trials: usize,
    pub responses: usize,
    /// Responses refused by the experiment (e.g. expired trials).
    pub rejected: usize,
    pub renders: usize,
    pub full_chains: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Arrive { k: u64 },
    Submit { trial: TrialId, choice: usize },
}

fn secs_to_ms(secs: f64) -> i64 {
    (secs * 1000.0).round() as i64
}

fn participant(i: usize) -> ParticipantId {
    ParticipantId::new(format!("sim-{i:04}"))
}

fn rater(i: usize) -> ParticipantId {
    ParticipantId::new(format!("rater-{i:04}"))
}

fn compiled_by_emotion(
    targets: &TargetSet,
    config: &ExperimentConfig,
) -> Result<BTreeMap<Emotion, CompiledTarget>> {
    let grid = config.slider_grid()?;
    config
        .emotions
        .iter()
        .map(|&e| {
            let t = targets.get(e)?;
            if t.dimensions() != config.dimensions {
                return Err(SimError::Target {
                    emotion: e.to_string(),
                    reason: format!("mu has {} coordinates, experiment has {}", t.dimensions(), config.dimensions),
                });
            }
            Ok((e, t.compile(&grid)?))
        })
        .collect()
}

/// Drive an experiment to termination with simulated participants.
///
/// With a cache, every new assignment renders (or reuses) the 32 slider
/// stimuli of its chain, as the live service would.
pub fn simulate(
    config: ExperimentConfig,
    targets: &TargetSet,
    policy: &AgentPolicy,
    timing: &Timing,
    seed: u64,
    cache: Option<&StimulusCache>,
) -> Result<(Experiment, SimStats)> {
    policy.validate()?;
    timing.validate()?;
    let compiled = compiled_by_emotion(targets, &config)?;
    let identity = match cache {
        Some(c) => c.identity().clone(),
        None => default_identity(),
    };
    let grid = config.slider_grid()?;
    let mut exp = Experiment::init(config, identity, SIM_EPOCH)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(AGENT_STREAM);
    let renders_before = cache.map_or(0, |c| c.renders());

    let mut stats = SimStats::default();
    let mut queue = BinaryHeap::new();
    let mut order = 0u64;
    let mut push = |queue: &mut BinaryHeap<_>, at: Timestamp, action: Action| {
        order += 1;
        queue.push(Reverse((at, order, action)));
    };
    push(&mut queue, SIM_EPOCH, Action::Arrive { k: 0 });
    let mut pending: HashSet<TrialId> = HashSet::new();

    while let Some(Reverse((now, _, action))) = queue.pop() {
        if exp.state().is_terminated() {
            break;
        }
        match action {
            Action::Arrive { k } => {
                if exp.check_termination(now)? != gsp_core::TerminationStatus::Running {
                    break;
                }
                stats.arrivals += 1;
                let next = SIM_EPOCH.plus_millis(secs_to_ms((k + 1) as f64 * timing.arrival_interval_secs));
                push(&mut queue, next, Action::Arrive { k: k + 1 });

                let who = participant(k as usize % timing.participants);
                exp.start_session(who.clone(), true, now)?;
                let Some(a) = exp.assign_trial(&who, now)? else {
                    continue;
                };
                if !pending.insert(a.trial_id) {
                    // Still busy with this trial.
                    continue;
                }
                stats.trials += 1;
                let chain = exp.state().chain(a.chain_id).expect("assigned chain exists");
                if let Some(cache) = cache {
                    render_slider_batch(cache, chain, &grid)?;
                }
                let x = chain.current_point.weights(&grid);
                let probs = compiled[&chain.spec.emotion].slice_probs(&x, a.free_dimension, &grid);
                let choice = agent_choose(policy, &probs, &mut rng);
                push(
                    &mut queue,
                    now.plus_millis(secs_to_ms(timing.trial_secs)),
                    Action::Submit {
                        trial: a.trial_id,
                        choice,
                    },
                );
            }
            Action::Submit { trial, choice } => {
                pending.remove(&trial);
                if exp.check_termination(now)? != gsp_core::TerminationStatus::Running {
                    break;
                }
                match exp.record_response(TrialResponse {
                    trial_id: trial,
                    chosen_slider_index: choice,
                    submitted_at: now,
                }) {
                    Ok(()) => stats.responses += 1,
                    Err(gsp_core::CoreError::Expired(_)) => stats.rejected += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    stats.renders = cache.map_or(0, |c| c.renders()) - renders_before;
    stats.full_chains = exp.state().full_chains().count();
    Ok((exp, stats))
}

/// Identity recorded when a simulation does not render.
pub fn default_identity() -> RendererIdentity {
    BuiltinRenderer::default().identity()
}

/// Simulate with the default timing and no rendering; returns the log.
pub fn run_simulation(
    config: ExperimentConfig,
    targets: &TargetSet,
    policy: &AgentPolicy,
    seed: u64,
) -> Result<Experiment> {
    Ok(simulate(config, targets, policy, &Timing::default(), seed, None)?.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationStats {
    pub items: usize,
    pub ratings: usize,
    pub renders: usize,
}

/// Build the validation set of a terminated experiment and collect ratings
/// from simulated raters until every (item, emotion) pair reaches its
/// target.
pub fn run_validation(
    exp: &mut Experiment,
    targets: &TargetSet,
    settings: &RatingSettings,
    seed: u64,
    cache: Option<&StimulusCache>,
) -> Result<ValidationStats> {
    if settings.raters == 0 {
        return Err(SimError::Scenario("rating.raters must be at least 1".into()));
    }
    let mut now = exp.events().last().map_or(SIM_EPOCH, |e| e.timestamp).plus_secs(1);
    let mu: BTreeMap<Emotion, Vec<f64>> = exp
        .state()
        .config
        .emotions
        .iter()
        .map(|&e| Ok((e, targets.get(e)?.mu.clone())))
        .collect::<Result<_>>()?;
    let renders_before = cache.map_or(0, |c| c.renders());
    let items = exp.build_validation_set(now)?.to_vec();
    let grid = exp.state().grid;
    if let Some(cache) = cache {
        for item in &items {
            cache.ensure(&item.point.weights(&grid), &item.sentence)?;
        }
    }
    let points: BTreeMap<u32, Vec<f64>> = items.iter().map(|i| (i.item_id, i.point.weights(&grid))).collect();
    let raters: Vec<ParticipantId> = (0..settings.raters).map(rater).collect();
    for r in &raters {
        exp.start_session(r.clone(), true, now)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RATING_STREAM);
    let step = secs_to_ms(settings.secs_per_rating / settings.raters as f64).max(1);
    let mut ratings = 0;
    loop {
        let mut progressed = false;
        for r in &raters {
            let Some(a) = exp.next_rating_trial(r, now)? else {
                continue;
            };
            let rating = settings.agent.rate(&points[&a.item_id], &mu[&a.probed_emotion], &mut rng);
            exp.record_rating(a.rating_id, rating, now)?;
            ratings += 1;
            progressed = true;
            now = now.plus_millis(step);
        }
        if !progressed {
            break;
        }
    }
    Ok(ValidationStats {
        items: items.len(),
        ratings,
        renders: cache.map_or(0, |c| c.renders()) - renders_before,
    })
}
