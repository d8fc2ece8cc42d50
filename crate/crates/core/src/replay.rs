use crate::config::ExperimentConfig;
use crate::error::{CoreError, Result};
use crate::event::{Event, EventKind};
use crate::experiment::ExperimentState;
use crate::stimulus::RendererIdentity;
use crate::types::Timestamp;

/// Left-fold a gapless log into the state it describes. The first event must
/// be `ExperimentInitialized`.
pub fn replay(log: &[Event]) -> Result<ExperimentState> {
    let first = log.first().ok_or(CoreError::CorruptLog {
        seq: 1,
        reason: "empty log".into(),
    })?;
    let EventKind::ExperimentInitialized { config, renderer } = &first.kind else {
        return Err(CoreError::CorruptLog {
            seq: first.seq,
            reason: "log must start with ExperimentInitialized".into(),
        });
    };
    if first.seq != 1 {
        return Err(CoreError::CorruptLog {
            seq: 1,
            reason: format!("first record carries seq {}", first.seq),
        });
    }
    let mut state = ExperimentState::initial(config.clone(), renderer.clone(), first.timestamp)
        .map_err(|e| CoreError::CorruptLog {
            seq: 1,
            reason: e.to_string(),
        })?;
    state.last_seq = 1;
    for event in &log[1..] {
        state.apply(event)?;
    }
    Ok(state)
}

/// Like [`replay`], but an empty log yields the initial state for `config`.
pub fn replay_or_init(
    config: &ExperimentConfig,
    renderer: &RendererIdentity,
    log: &[Event],
) -> Result<ExperimentState> {
    if log.is_empty() {
        let mut state = ExperimentState::initial(config.clone(), renderer.clone(), Timestamp(0))?;
        state.last_seq = 0;
        return Ok(state);
    }
    replay(log)
}
