//! The experiment behind a lock, with its log on disk.
//!
//! Every command takes the one mutex, applies itself to the in-memory
//! [`Experiment`], and appends the events it produced before the lock is
//! released, so the file always holds a prefix of what clients were told.
//! Rendering happens after the lock is dropped.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use gsp_core::log::{read_log_recovering, read_snapshot, snapshot_path, write_snapshot, LogWriter};
use gsp_core::{
    ChainId, ChainStatus, CoreError, Emotion, Experiment, ExperimentConfig, ParticipantId, RatingId, RatingRecord,
    StimulusId, Timestamp, TrialAssignment, TrialId, TrialResponse,
};
use gsp_render::{render_slider_batch, StimulusCache, WavBytes};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Timestamp::now)
}

pub fn stimulus_url(id: &StimulusId) -> String {
    format!("/api/stimulus/{id}.wav")
}

/// A slider trial as handed to the browser: the assignment plus one URL per
/// slider position, in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    #[serde(flatten)]
    pub assignment: TrialAssignment,
    pub emotion: Emotion,
    pub sentence: String,
    pub stimuli: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingView {
    pub rating_id: RatingId,
    pub stimulus_url: String,
    pub probed_emotion: Emotion,
    pub scale: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain_id: ChainId,
    pub emotion: Emotion,
    pub sentence: String,
    pub iteration: u32,
    pub n_iterations: u32,
    pub free_dimension: usize,
    pub status: ChainStatus,
    pub responses: usize,
    pub participants_per_iteration: usize,
    pub last_update: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub phase: gsp_core::Phase,
    pub events: u64,
    pub full_chains: usize,
    pub validation_items: Option<usize>,
    pub ratings: usize,
    pub validation_complete: bool,
}

struct LogFile {
    writer: LogWriter,
    snapshot: PathBuf,
    interval: u64,
}

struct Inner {
    exp: Experiment,
    /// Highest seq known to be on disk (or, in memory, simply emitted).
    persisted: u64,
    file: Option<LogFile>,
    halted: Option<String>,
}

pub struct Service {
    inner: Mutex<Inner>,
    cache: Arc<StimulusCache>,
    clock: Clock,
    chains: RwLock<Arc<Vec<ChainSummary>>>,
}

fn summaries(exp: &Experiment) -> Vec<ChainSummary> {
    exp.state()
        .chains
        .iter()
        .map(|c| ChainSummary {
            chain_id: c.id(),
            emotion: c.spec.emotion,
            sentence: c.spec.sentence.clone(),
            iteration: c.iteration,
            n_iterations: c.spec.n_iterations,
            free_dimension: c.free_dimension,
            status: c.status,
            responses: c.responses.len(),
            participants_per_iteration: c.spec.participants_per_iteration,
            last_update: c.last_update,
        })
        .collect()
}

/// Config sections that may legitimately change between restarts.
fn comparable(config: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        service: Default::default(),
        renderer: Default::default(),
        ..config.clone()
    }
}

impl Service {
    /// A service whose log lives only in memory.
    pub fn in_memory(config: ExperimentConfig, cache: Arc<StimulusCache>, clock: Clock) -> Result<Self> {
        let exp = Experiment::init(config, cache.identity().clone(), clock())?;
        Ok(Self::assemble(exp, None, cache, clock))
    }

    /// Open the log at `path`, replaying it (from the snapshot when one is
    /// usable) or starting a new experiment when the file does not exist.
    pub fn open(config: ExperimentConfig, path: &Path, cache: Arc<StimulusCache>, clock: Clock) -> Result<Self> {
        let snapshot = snapshot_path(path);
        let interval = config.service.snapshot_interval.max(1);
        if !path.exists() {
            let exp = Experiment::init(config, cache.identity().clone(), clock())?;
            let mut writer = LogWriter::open(path, 0, 1)?;
            writer.append(exp.events())?;
            let file = LogFile {
                writer,
                snapshot,
                interval,
            };
            return Ok(Self::assemble(exp, Some(file), cache, clock));
        }

        let (events, valid_len) = read_log_recovering(path)?;
        if events.is_empty() {
            return Err(CoreError::CorruptLog {
                seq: 1,
                reason: "log holds no complete record".into(),
            }
            .into());
        }
        let next_seq = events.len() as u64 + 1;
        let mut exp = match read_snapshot(&snapshot).ok().flatten() {
            // the start time guards against a snapshot left over from another log
            Some(s)
                if s.seq == s.state.last_seq
                    && s.seq as usize <= events.len()
                    && s.state.started_at == events[0].timestamp =>
            {
                match Experiment::from_snapshot(s.state, events.clone()) {
                    Ok(exp) => exp,
                    Err(e) => {
                        tracing::warn!(error = %e, "snapshot unusable, replaying the full log");
                        Experiment::from_log(events)?
                    }
                }
            }
            _ => Experiment::from_log(events)?,
        };
        let state = exp.state();
        if comparable(&state.config) != comparable(&config) {
            return Err(ServiceError::Mismatch("experiment settings differ from the log".into()));
        }
        if &state.renderer != cache.identity() {
            return Err(ServiceError::Mismatch(format!(
                "log was rendered by '{}', service uses '{}'",
                state.renderer.tag,
                cache.identity().tag
            )));
        }
        let writer = LogWriter::open(path, valid_len, next_seq)?;
        let persisted = exp.state().last_seq;
        let finished = exp.recover(clock())?;
        if finished > 0 {
            tracing::info!(finished, "completed aggregations interrupted by a crash");
        }
        let file = LogFile {
            writer,
            snapshot,
            interval,
        };
        let svc = Self::assemble(exp, Some(file), cache, clock);
        {
            let mut inner = svc.inner.lock().unwrap_or_else(|e| e.into_inner());
            inner.persisted = persisted;
            svc.persist(&mut inner)?;
        }
        Ok(svc)
    }

    fn assemble(exp: Experiment, file: Option<LogFile>, cache: Arc<StimulusCache>, clock: Clock) -> Self {
        let chains = RwLock::new(Arc::new(summaries(&exp)));
        Service {
            inner: Mutex::new(Inner {
                persisted: exp.state().last_seq,
                exp,
                file,
                halted: None,
            }),
            cache,
            clock,
            chains,
        }
    }

    pub fn cache(&self) -> &Arc<StimulusCache> {
        &self.cache
    }

    fn lock(&self) -> Result<MutexGuard<'_, Inner>> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        match &inner.halted {
            Some(reason) => Err(ServiceError::Halted(reason.clone())),
            None => Ok(inner),
        }
    }

    /// Write out events emitted since the last call, snapshotting when a
    /// multiple of the interval is crossed.
    fn persist(&self, inner: &mut Inner) -> Result<()> {
        let last = inner.exp.state().last_seq;
        if last == inner.persisted {
            return Ok(());
        }
        if let Some(file) = inner.file.as_mut() {
            let fresh = &inner.exp.events()[inner.persisted as usize..];
            if let Err(e) = file.writer.append(fresh) {
                inner.halted = Some(e.to_string());
                return Err(ServiceError::Halted(e.to_string()));
            }
            if last / file.interval > inner.persisted / file.interval {
                // a stale snapshot only costs replay time, so this is not fatal
                if let Err(e) = write_snapshot(&file.snapshot, inner.exp.state()) {
                    tracing::warn!(error = %e, "snapshot failed");
                }
            }
        }
        inner.persisted = last;
        *self.chains.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(summaries(&inner.exp));
        Ok(())
    }

    /// Run one command against the experiment and persist whatever it
    /// emitted, including events logged before a command fails (such as a
    /// termination discovered while assigning).
    fn command<T>(&self, f: impl FnOnce(&mut Experiment, Timestamp) -> gsp_core::Result<T>) -> Result<T> {
        let mut inner = self.lock()?;
        let now = (self.clock)();
        let out = f(&mut inner.exp, now);
        self.persist(&mut inner)?;
        Ok(out?)
    }

    pub fn new_session(&self, prescreened: bool) -> Result<ParticipantId> {
        let token = ParticipantId::new(format!("{:032x}", rand::random::<u128>()));
        let t = token.clone();
        self.command(move |exp, now| exp.start_session(t, prescreened, now))?;
        Ok(token)
    }

    /// Assign a slider trial and make sure all of its stimuli are rendered.
    /// `None` once nothing is left to assign, including after termination.
    pub fn next_trial(&self, participant: &ParticipantId) -> Result<Option<TrialView>> {
        let picked = self.command(|exp, now| {
            let assignment = match exp.assign_trial(participant, now) {
                Ok(Some(a)) => a,
                Ok(None) | Err(CoreError::ExperimentClosed) => return Ok(None),
                Err(e) => return Err(e),
            };
            let chain = exp.state().chain(assignment.chain_id).expect("assigned chain exists").detached();
            Ok(Some((assignment, chain, exp.state().grid)))
        })?;
        let Some((assignment, chain, grid)) = picked else {
            return Ok(None);
        };
        let ids = render_slider_batch(&self.cache, &chain, &grid)?;
        Ok(Some(TrialView {
            assignment,
            emotion: chain.spec.emotion,
            sentence: chain.spec.sentence,
            stimuli: ids.iter().map(stimulus_url).collect(),
        }))
    }

    pub fn submit_response(&self, trial_id: TrialId, slider_index: usize) -> Result<()> {
        self.command(|exp, now| {
            exp.record_response(TrialResponse {
                trial_id,
                chosen_slider_index: slider_index,
                submitted_at: now,
            })
        })
    }

    /// Assign a validation rating. The validation set is built on the first
    /// request after the slider phase ends; while it runs there is nothing
    /// to rate.
    pub fn next_rating(&self, participant: &ParticipantId) -> Result<Option<RatingView>> {
        let picked = self.command(|exp, now| {
            exp.check_termination(now)?;
            if !exp.state().participants.contains_key(participant) {
                return Err(CoreError::Auth(participant.clone()));
            }
            if exp.state().validation.is_none() {
                if !exp.state().is_terminated() {
                    return Ok(None);
                }
                match exp.build_validation_set(now) {
                    Ok(_) => {}
                    // terminated before any chain filled up: nothing will ever be rated
                    Err(CoreError::EmptyExperiment) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            let Some(a) = exp.next_rating_trial(participant, now)? else {
                return Ok(None);
            };
            let state = exp.state();
            let v = state.validation.as_ref().expect("validation built");
            let item = v.items.iter().find(|i| i.item_id == a.item_id).expect("assigned item exists");
            Ok(Some((a, item.point.weights(&state.grid), item.sentence.clone())))
        })?;
        let Some((a, weights, sentence)) = picked else {
            return Ok(None);
        };
        let id = self.cache.ensure(&weights, &sentence)?;
        if id != a.stimulus_id {
            return Err(ServiceError::Mismatch(format!("stimulus {} rendered as {id}", a.stimulus_id)));
        }
        Ok(Some(RatingView {
            rating_id: a.rating_id,
            stimulus_url: stimulus_url(&id),
            probed_emotion: a.probed_emotion,
            scale: 4,
        }))
    }

    pub fn submit_rating(&self, rating_id: RatingId, rating: i64) -> Result<RatingRecord> {
        let rating =
            u8::try_from(rating).map_err(|_| ServiceError::BadRequest(format!("rating {rating} outside 1..=4")))?;
        self.command(|exp, now| exp.record_rating(rating_id, rating, now))
    }

    pub fn stimulus(&self, id: &str) -> Option<WavBytes> {
        self.cache.fetch(&StimulusId::parse(id)?)
    }

    /// Chain progress as of the last committed command; never blocks on
    /// the command lock.
    pub fn chains(&self) -> Arc<Vec<ChainSummary>> {
        self.chains.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn terminate(&self) -> Result<StatusView> {
        self.command(|exp, now| exp.terminate(now).map(|_| ()))?;
        self.status()
    }

    /// Apply the deadline; called periodically by the server.
    pub fn tick(&self) -> Result<StatusView> {
        self.command(|exp, now| exp.check_termination(now).map(|_| ()))?;
        self.status()
    }

    pub fn status(&self) -> Result<StatusView> {
        let inner = self.lock()?;
        let s = inner.exp.state();
        Ok(StatusView {
            phase: s.phase,
            events: s.last_seq,
            full_chains: s.full_chains().count(),
            validation_items: s.validation.as_ref().map(|v| v.items.len()),
            ratings: s.validation.as_ref().map_or(0, |v| v.ratings.len()),
            validation_complete: s.validation.as_ref().is_some_and(|v| v.is_complete()),
        })
    }

    /// The full log in its on-disk encoding.
    pub fn export(&self) -> Result<String> {
        let inner = self.lock()?;
        Ok(gsp_core::log::encode_log(inner.exp.events())?)
    }

    /// Read access to the live experiment.
    pub fn with_experiment<T>(&self, f: impl FnOnce(&Experiment) -> T) -> T {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        f(&inner.exp)
    }
}
