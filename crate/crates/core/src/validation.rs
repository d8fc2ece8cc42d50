//! Validation stimuli and the rating scheduler.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::experiment::ExperimentState;
use crate::grid::LatentPoint;
use crate::stimulus::StimulusId;
use crate::types::{ChainId, Emotion, ParticipantId, RatingId, Timestamp};

const RANDOM_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimulusKind {
    Trajectory,
    Random,
    Transfer,
}

/// One stimulus presented in the validation experiment.
///
/// Several items may share a `stimulus_id` (every chain starts from the same
/// point, and a median can repeat the previous value); ratings are kept per
/// item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationItem {
    pub item_id: u32,
    pub kind: StimulusKind,
    pub stimulus_id: StimulusId,
    pub point: LatentPoint,
    pub sentence: String,
    pub chain_id: Option<ChainId>,
    /// The chain's target emotion. Random items get a balanced round-robin
    /// assignment so contrast is defined for them too.
    pub emotion: Emotion,
    pub iteration: Option<u32>,
}

/// Every full chain at every iteration, `n_random` uniform grid points, and
/// every full chain's final point on each novel sentence.
pub fn build_validation_set(
    state: &ExperimentState,
    novel_sentences: &[String],
    n_random: usize,
    rng_seed: u64,
) -> Result<Vec<ValidationItem>> {
    let full: Vec<_> = state.full_chains().collect();
    if full.is_empty() {
        return Err(CoreError::EmptyExperiment);
    }
    let grid = &state.grid;
    let renderer = &state.renderer;
    let mut items = Vec::new();
    let mut push = |kind, point: LatentPoint, sentence: &str, chain_id, emotion, iteration| {
        let stimulus_id = renderer.stimulus_id(&point.weights(grid), sentence);
        items.push(ValidationItem {
            item_id: items.len() as u32,
            kind,
            stimulus_id,
            point,
            sentence: sentence.to_string(),
            chain_id,
            emotion,
            iteration,
        });
    };

    for chain in &full {
        for h in &chain.history {
            push(
                StimulusKind::Trajectory,
                h.point.clone(),
                &chain.spec.sentence,
                Some(chain.id()),
                chain.spec.emotion,
                Some(h.iteration),
            );
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(RANDOM_STREAM);
    let dims = state.config.dimensions;
    let sentences = &state.config.sentences;
    let emotions = &state.config.emotions;
    for r in 0..n_random {
        let indices = (0..dims)
            .map(|_| rng.random_range(0..grid.n_positions()))
            .collect();
        let point = LatentPoint::new(indices, grid)?;
        let sentence = &sentences[rng.random_range(0..sentences.len())];
        push(
            StimulusKind::Random,
            point,
            sentence,
            None,
            emotions[r % emotions.len()],
            None,
        );
    }

    for chain in &full {
        for sentence in novel_sentences {
            push(
                StimulusKind::Transfer,
                chain.current_point.clone(),
                sentence,
                Some(chain.id()),
                chain.spec.emotion,
                None,
            );
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingAssignment {
    pub rating_id: RatingId,
    pub participant_id: ParticipantId,
    pub item_id: u32,
    pub stimulus_id: StimulusId,
    pub probed_emotion: Emotion,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

impl RatingAssignment {
    pub fn is_expired(&self, now: Timestamp) -> bool {
        now >= self.expires_at
    }
}

/// One validation judgment on the four-point scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rating_id: RatingId,
    pub participant_id: ParticipantId,
    pub item_id: u32,
    pub stimulus_id: StimulusId,
    pub probed_emotion: Emotion,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSlot {
    pub assignment: RatingAssignment,
    pub recorded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationState {
    pub items: Vec<ValidationItem>,
    pub emotions: Vec<Emotion>,
    pub target: usize,
    /// Recorded ratings per `[item][emotion]`.
    pub counts: Vec<Vec<usize>>,
    /// Unrecorded assignments per `[item][emotion]` (possibly expired).
    pub open: Vec<Vec<Vec<RatingId>>>,
    pub assignments: BTreeMap<RatingId, RatingSlot>,
    /// (item, emotion index) pairs each participant was given.
    pub seen: BTreeMap<ParticipantId, BTreeSet<(u32, usize)>>,
    pub latest: BTreeMap<ParticipantId, RatingId>,
    pub ratings: Vec<RatingRecord>,
    pub next_rating_id: RatingId,
}

impl ValidationState {
    pub fn new(items: Vec<ValidationItem>, emotions: Vec<Emotion>, target: usize) -> Self {
        let e = emotions.len();
        ValidationState {
            counts: vec![vec![0; e]; items.len()],
            open: vec![vec![Vec::new(); e]; items.len()],
            items,
            emotions,
            target,
            assignments: BTreeMap::new(),
            seen: BTreeMap::new(),
            latest: BTreeMap::new(),
            ratings: Vec::new(),
            next_rating_id: 1,
        }
    }

    fn emotion_index(&self, e: Emotion) -> Option<usize> {
        self.emotions.iter().position(|&x| x == e)
    }

    pub fn open_assignment_of(&self, participant: &ParticipantId, now: Timestamp) -> Option<&RatingAssignment> {
        let id = self.latest.get(participant)?;
        let slot = self.assignments.get(id)?;
        (!slot.recorded && !slot.assignment.is_expired(now)).then_some(&slot.assignment)
    }

    fn outstanding(&self, item: usize, emotion: usize, now: Timestamp) -> usize {
        self.open[item][emotion]
            .iter()
            .filter(|id| !self.assignments[id].assignment.is_expired(now))
            .count()
    }

    /// Least-rated (item, emotion) pair this participant has not seen, if
    /// any pair is still below target.
    pub fn decide_next(&self, participant: &ParticipantId, now: Timestamp, timeout_ms: i64) -> Option<RatingAssignment> {
        let seen = self.seen.get(participant);
        let mut best: Option<(usize, usize, usize)> = None;
        for (i, per_emotion) in self.counts.iter().enumerate() {
            for (e, &count) in per_emotion.iter().enumerate() {
                if best.is_some_and(|(c, _, _)| count >= c) {
                    continue;
                }
                if seen.is_some_and(|s| s.contains(&(i as u32, e))) {
                    continue;
                }
                if count + self.outstanding(i, e, now) >= self.target {
                    continue;
                }
                best = Some((count, i, e));
            }
        }
        let (_, i, e) = best?;
        let item = &self.items[i];
        Some(RatingAssignment {
            rating_id: self.next_rating_id,
            participant_id: participant.clone(),
            item_id: item.item_id,
            stimulus_id: item.stimulus_id.clone(),
            probed_emotion: self.emotions[e],
            issued_at: now,
            expires_at: now.plus_millis(timeout_ms),
        })
    }

    pub fn decide_record(&self, rating_id: RatingId, rating: u8, now: Timestamp) -> Result<RatingRecord> {
        if !(1..=4).contains(&rating) {
            return Err(CoreError::RatingRange(rating));
        }
        let slot = self
            .assignments
            .get(&rating_id)
            .ok_or(CoreError::UnknownRating(rating_id))?;
        let a = &slot.assignment;
        if slot.recorded {
            return Err(CoreError::DuplicateRating(format!(
                "{} already rated item {} for {}",
                a.participant_id, a.item_id, a.probed_emotion
            )));
        }
        if a.is_expired(now) {
            return Err(CoreError::Expired(rating_id));
        }
        Ok(RatingRecord {
            rating_id,
            participant_id: a.participant_id.clone(),
            item_id: a.item_id,
            stimulus_id: a.stimulus_id.clone(),
            probed_emotion: a.probed_emotion,
            rating,
        })
    }

    pub(crate) fn apply_assigned(&mut self, a: &RatingAssignment) -> Result<()> {
        let e = self
            .emotion_index(a.probed_emotion)
            .ok_or(CoreError::Phase("probed emotion not in design"))?;
        let i = a.item_id as usize;
        if i >= self.items.len() || a.rating_id != self.next_rating_id {
            return Err(CoreError::UnknownRating(a.rating_id));
        }
        if !self
            .seen
            .entry(a.participant_id.clone())
            .or_default()
            .insert((a.item_id, e))
        {
            return Err(CoreError::DuplicateRating(format!(
                "{} assigned item {} for {} twice",
                a.participant_id, a.item_id, a.probed_emotion
            )));
        }
        self.open[i][e].push(a.rating_id);
        self.latest.insert(a.participant_id.clone(), a.rating_id);
        self.assignments.insert(
            a.rating_id,
            RatingSlot {
                assignment: a.clone(),
                recorded: false,
            },
        );
        self.next_rating_id += 1;
        Ok(())
    }

    pub(crate) fn apply_recorded(&mut self, r: &RatingRecord) -> Result<()> {
        if !(1..=4).contains(&r.rating) {
            return Err(CoreError::RatingRange(r.rating));
        }
        let slot = self
            .assignments
            .get_mut(&r.rating_id)
            .ok_or(CoreError::UnknownRating(r.rating_id))?;
        if slot.recorded {
            return Err(CoreError::DuplicateRating(format!("rating {}", r.rating_id)));
        }
        slot.recorded = true;
        let i = r.item_id as usize;
        let e = self
            .emotion_index(r.probed_emotion)
            .ok_or(CoreError::Phase("probed emotion not in design"))?;
        self.open[i][e].retain(|&id| id != r.rating_id);
        self.counts[i][e] += 1;
        self.ratings.push(r.clone());
        Ok(())
    }

    /// True once every (item, emotion) pair has reached the target.
    pub fn is_complete(&self) -> bool {
        self.counts.iter().flatten().all(|&c| c >= self.target)
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.counts.iter().flatten().any(|&c| c > self.target) {
            return Err("rating count above target".into());
        }
        if self.ratings.iter().any(|r| !(1..=4).contains(&r.rating)) {
            return Err("rating outside 1..=4".into());
        }
        let mut pairs = BTreeSet::new();
        for r in &self.ratings {
            if !pairs.insert((&r.participant_id, r.item_id, r.probed_emotion)) {
                return Err("participant rated a pair twice".into());
            }
        }
        Ok(())
    }
}
