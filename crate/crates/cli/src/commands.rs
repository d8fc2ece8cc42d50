use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use gsp_core::config::RendererBackend;
use gsp_core::log::{encode_log, read_log};
use gsp_core::{
    build_validation_set, parse_config, replay, CoreError, Event, ExperimentConfig, ExperimentState, LatentPoint,
    ValidationItem,
};
use gsp_render::{
    BuiltinRenderer, DirStore, ExternalRenderer, MemoryStore, ProsodyMapping, Renderer, StimulusCache, StimulusStore,
};
use gsp_sim::{run_validation, simulate as run_sim, Scenario, SimStats, ValidationStats};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::tables;

pub const LOG_FILE: &str = "events.jsonl";

/// Read, override and check the experiment config; `None` means defaults.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let (text, source) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            (text, p.display().to_string())
        }
        None => (String::new(), "<defaults>".to_string()),
    };
    let mut overrides = overrides.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    Ok(parse_config(&text, &source, &overrides)?)
}

/// The configured rendering backend, in both its concrete and trait forms.
#[derive(Clone)]
pub enum Backend {
    Builtin(Arc<BuiltinRenderer>),
    External(Arc<ExternalRenderer>),
}

impl Backend {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let r = &config.renderer;
        match r.backend {
            RendererBackend::Builtin => {
                let mapping = match &r.mapping {
                    Some(p) => ProsodyMapping::load(p)?,
                    None => ProsodyMapping::builtin(),
                };
                let builtin = BuiltinRenderer::new(mapping);
                if builtin.dimensions() != config.dimensions {
                    return Err(CliError::Config(format!(
                        "renderer mapping has {} dimensions, config has {}",
                        builtin.dimensions(),
                        config.dimensions
                    )));
                }
                Ok(Backend::Builtin(Arc::new(builtin)))
            }
            RendererBackend::External => {
                let url = r
                    .url
                    .as_deref()
                    .ok_or_else(|| CliError::Config("renderer.url is required for the external backend".into()))?;
                Ok(Backend::External(Arc::new(ExternalRenderer::with_settings(
                    url,
                    config.dimensions,
                    Duration::from_secs(r.timeout_secs),
                    r.max_in_flight,
                ))))
            }
        }
    }

    pub fn renderer(&self) -> Arc<dyn Renderer> {
        match self {
            Backend::Builtin(r) => r.clone(),
            Backend::External(r) => r.clone(),
        }
    }

    pub fn cache(&self, stimuli: Option<&Path>) -> Result<StimulusCache> {
        let store: Arc<dyn StimulusStore> = match stimuli {
            Some(dir) => Arc::new(DirStore::new(dir)?),
            None => Arc::new(MemoryStore::new()),
        };
        Ok(StimulusCache::new(self.renderer(), store))
    }
}

/// A log and the state it replays to. Anything that does not replay is a
/// corrupt log.
pub struct LoadedLog {
    pub events: Vec<Event>,
    pub state: ExperimentState,
    pub sha256: String,
}

pub fn load_log(path: &Path) -> Result<LoadedLog> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read log {}: {e}", path.display())))?;
    let events = read_log(path)?;
    let state = replay(&events).map_err(|e| match e {
        CoreError::CorruptLog { .. } => CliError::from(e),
        other => CliError::CorruptLog(format!("log does not replay: {other}")),
    })?;
    Ok(LoadedLog {
        events,
        state,
        sha256: sha256_hex(&bytes),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(path.to_path_buf())
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainEnd {
    pub chain_id: u32,
    pub emotion: gsp_core::Emotion,
    pub sentence: String,
    pub iteration: u32,
    pub point: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub agent_seed: u64,
    pub experiment_seed: u64,
    pub scenario: Scenario,
    pub stats: SimStats,
    pub validation: Option<ValidationStats>,
    pub phase: gsp_core::Phase,
    pub events: usize,
    pub log_sha256: String,
    pub chains: Vec<ChainEnd>,
}

pub struct SimulateOptions {
    pub scenario: Scenario,
    pub render: bool,
    pub validation: bool,
}

pub fn simulate(config: ExperimentConfig, opts: &SimulateOptions, out: &Path) -> Result<(Vec<PathBuf>, SimulationSummary)> {
    let scenario = &opts.scenario;
    let targets = scenario.target_set();
    let cache = if opts.render || scenario.render {
        Some(Backend::from_config(&config)?.cache(None)?)
    } else {
        None
    };
    let experiment_seed = config.seed;
    let (mut exp, stats) = run_sim(config, &targets, &scenario.policy, &scenario.timing, scenario.seed, cache.as_ref())?;
    let validation = if opts.validation && exp.state().full_chains().next().is_some() {
        Some(run_validation(&mut exp, &targets, &scenario.rating, scenario.seed, cache.as_ref())?)
    } else {
        None
    };

    let text = encode_log(exp.events())?;
    let log_path = write_file(&out.join(LOG_FILE), text.as_bytes())?;
    let state = exp.state();
    let summary = SimulationSummary {
        agent_seed: scenario.seed,
        experiment_seed,
        scenario: scenario.clone(),
        stats,
        validation,
        phase: state.phase,
        events: exp.events().len(),
        log_sha256: sha256_hex(text.as_bytes()),
        chains: state
            .chains
            .iter()
            .map(|c| ChainEnd {
                chain_id: c.id(),
                emotion: c.spec.emotion,
                sentence: c.spec.sentence.clone(),
                iteration: c.iteration,
                point: c.current_point.indices().to_vec(),
            })
            .collect(),
    };
    let summary_path = write_json(&out.join("summary.json"), &summary)?;
    Ok((vec![log_path, summary_path], summary))
}

/// The validation set a log has, or would get once built.
pub fn validation_items(state: &ExperimentState) -> Result<Vec<ValidationItem>> {
    if let Some(v) = &state.validation {
        return Ok(v.items.clone());
    }
    if !state.is_terminated() {
        return Err(CliError::Runtime("experiment is still running; no validation set yet".into()));
    }
    let c = &state.config;
    Ok(build_validation_set(state, &c.novel_sentences, c.n_random, c.seed)?)
}

pub fn validate(config: &ExperimentConfig, log: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = vec![write_json(&out.join("config.json"), config)?];
    if let Some(log) = log {
        let loaded = load_log(log)?;
        let items = validation_items(&loaded.state)?;
        paths.push(write_json(&out.join("validation_set.json"), &items)?);
        let table = tables::validation_items(&items, &loaded.state.grid);
        paths.push(write_file(&out.join("validation_items.tsv"), table.as_bytes())?);
    }
    Ok(paths)
}

pub enum RenderInput {
    Weights(Vec<f64>),
    Indices(Vec<usize>),
}

pub fn render(config: &ExperimentConfig, input: RenderInput, sentence: Option<&str>, out: &Path) -> Result<PathBuf> {
    let backend = Backend::from_config(config)?;
    let grid = config.slider_grid()?;
    let weights = match input {
        RenderInput::Weights(w) if w.is_empty() => vec![0.0; config.dimensions],
        RenderInput::Weights(w) => w,
        RenderInput::Indices(idx) => LatentPoint::new(idx, &grid)
            .map_err(|e| CliError::Config(e.to_string()))?
            .weights(&grid),
    };
    let sentence = match sentence {
        Some(s) => s.to_string(),
        None => config.sentences.first().cloned().unwrap_or_default(),
    };
    let renderer = backend.renderer();
    let rendered = renderer.render(&weights, &sentence)?;
    let id = renderer.identity().stimulus_id(&weights, &sentence);
    write_file(&out.join(format!("{id}.wav")), &rendered.audio.to_wav_bytes())
}

pub fn export(log: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let loaded = load_log(log)?;
    let state = &loaded.state;
    let mut paths = vec![write_file(&out.join("export.jsonl"), encode_log(&loaded.events)?.as_bytes())?];
    paths.push(write_file(&out.join("chains.tsv"), tables::chains(state).as_bytes())?);
    paths.push(write_file(&out.join("trajectories.tsv"), tables::trajectories(state).as_bytes())?);
    if let Some(v) = &state.validation {
        paths.push(write_file(&out.join("validation_items.tsv"), tables::validation_items(&v.items, &state.grid).as_bytes())?);
        paths.push(write_file(&out.join("ratings.tsv"), tables::ratings(v).as_bytes())?);
    }
    Ok(paths)
}

/// Run the service on the configured address until Ctrl-C or until every
/// validation rating is in.
pub fn serve(config: ExperimentConfig, log: &Path, out: &Path) -> Result<()> {
    let backend = Backend::from_config(&config)?;
    let cache = Arc::new(backend.cache(Some(&out.join("stimuli")))?);
    if let Some(dir) = log.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let listen = config.service.listen.clone();
    let service = Arc::new(gsp_service::Service::open(config, log, cache, gsp_service::system_clock())?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| CliError::Config(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener.local_addr()?;
        tracing::info!(%addr, log = %log.display(), "serving");
        println!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        gsp_service::serve(service, listener, Duration::from_secs(5), shutdown).await?;
        Ok(())
    })
}
