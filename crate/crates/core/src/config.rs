//! Experiment configuration: defaults, overrides and validation.
//!
//! Configs are TOML. Every key is optional; an empty file yields the full
//! default design (10 dimensions, 32 positions over [-0.24, 0.38], 45 chains
//! of 20 iterations with 5 responses each, 48 h budget, 18 random and 4 novel
//! sentences for validation).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CoreError, Result};
use crate::grid::SliderGrid;
use crate::types::Emotion;

pub const DEFAULT_SENTENCES: [&str; 3] = [
    "The birch canoe slid on the smooth planks.",
    "Glue the sheet to the dark blue background.",
    "These days a chicken leg is a rare dish.",
];

pub const DEFAULT_NOVEL_SENTENCES: [&str; 4] = [
    "Rice is often served in round bowls.",
    "The juice of lemons makes fine punch.",
    "The box was thrown beside the parked truck.",
    "The hogs were fed chopped corn and garbage.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: -0.24,
            hi: 0.38,
            n: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RendererBackend {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererConfig {
    pub backend: RendererBackend,
    /// Base URL of an external renderer (`backend = "external"`).
    pub url: Option<String>,
    /// Alternate mapping matrix for the built-in renderer.
    pub mapping: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for RendererConfig {
    fn default() -> Self {
        RendererConfig {
            backend: RendererBackend::Builtin,
            url: None,
            mapping: None,
            timeout_secs: 30,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub snapshot_interval: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".to_string(),
            snapshot_interval: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dimensions: usize,
    pub grid: GridConfig,
    pub emotions: Vec<Emotion>,
    pub sentences: Vec<String>,
    pub n_chains: usize,
    pub n_iterations: u32,
    pub participants_per_iteration: usize,
    pub duration_hours: f64,
    pub novel_sentences: Vec<String>,
    pub n_random: usize,
    pub seed: u64,
    pub trial_timeout_minutes: f64,
    /// Ratings collected per (stimulus, probed emotion) in validation.
    pub rating_target: usize,
    pub require_prescreen: bool,
    pub renderer: RendererConfig,
    pub service: ServiceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dimensions: 10,
            grid: GridConfig::default(),
            emotions: Emotion::ALL.to_vec(),
            sentences: DEFAULT_SENTENCES.iter().map(|s| s.to_string()).collect(),
            n_chains: 45,
            n_iterations: 20,
            participants_per_iteration: 5,
            duration_hours: 48.0,
            novel_sentences: DEFAULT_NOVEL_SENTENCES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            n_random: 18,
            seed: 1,
            trial_timeout_minutes: 10.0,
            rating_target: 5,
            require_prescreen: false,
            renderer: RendererConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn slider_grid(&self) -> Result<SliderGrid> {
        SliderGrid::new(self.grid.lo, self.grid.hi, self.grid.n)
    }

    pub fn trial_timeout_ms(&self) -> i64 {
        (self.trial_timeout_minutes * 60_000.0).round() as i64
    }

    pub fn duration_ms(&self) -> i64 {
        (self.duration_hours * 3_600_000.0).round() as i64
    }

    /// Chains per (emotion, sentence) pair, if the design is balanced.
    pub fn replicates(&self) -> Option<usize> {
        let cells = self.emotions.len() * self.sentences.len();
        (cells > 0 && self.n_chains > 0 && self.n_chains.is_multiple_of(cells))
            .then(|| self.n_chains / cells)
    }

    /// Semantic checks; returns every violation rather than the first.
    pub fn check(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |key: &str, message: String| {
            issues.push(ConfigIssue {
                line: None,
                key: key.to_string(),
                message,
            })
        };
        if self.dimensions == 0 {
            push("dimensions", "must be at least 1".into());
        }
        if let Err(e) = self.slider_grid() {
            push("grid", e.to_string());
        }
        if self.emotions.is_empty() {
            push("emotions", "at least one emotion is required".into());
        }
        if has_duplicates(&self.emotions) {
            push("emotions", "emotions must be distinct".into());
        }
        if self.sentences.is_empty() {
            push("sentences", "at least one sentence is required".into());
        }
        if has_duplicates(&self.sentences) {
            push("sentences", "sentences must be distinct".into());
        }
        if self.replicates().is_none() {
            push(
                "n_chains",
                format!(
                    "balanced design needs n_chains divisible by {} emotions x {} sentences, got {}",
                    self.emotions.len(),
                    self.sentences.len(),
                    self.n_chains
                ),
            );
        }
        if self.n_iterations == 0 {
            push("n_iterations", "must be at least 1".into());
        }
        if self.participants_per_iteration == 0 || self.participants_per_iteration.is_multiple_of(2) {
            push(
                "participants_per_iteration",
                format!(
                    "must be odd so the median is a grid value, got {}",
                    self.participants_per_iteration
                ),
            );
        }
        if !(self.duration_hours.is_finite() && self.duration_hours > 0.0) {
            push("duration_hours", "must be positive".into());
        }
        if !(self.trial_timeout_minutes.is_finite() && self.trial_timeout_minutes > 0.0) {
            push("trial_timeout_minutes", "must be positive".into());
        }
        if self.rating_target == 0 {
            push("rating_target", "must be at least 1".into());
        }
        if self.renderer.backend == RendererBackend::External && self.renderer.url.is_none() {
            push("renderer.url", "external renderer needs a url".into());
        }
        if self.renderer.max_in_flight == 0 {
            push("renderer.max_in_flight", "must be at least 1".into());
        }
        issues
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].iter().any(|b| b == a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

/// Every problem found in a config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigReport {
    pub source: String,
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s) in {}", self.issues.len(), self.source)?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

const KNOWN_KEYS: &[&str] = &[
    "dimensions",
    "grid",
    "grid.lo",
    "grid.hi",
    "grid.n",
    "emotions",
    "sentences",
    "n_chains",
    "n_iterations",
    "participants_per_iteration",
    "duration_hours",
    "novel_sentences",
    "n_random",
    "seed",
    "trial_timeout_minutes",
    "rating_target",
    "require_prescreen",
    "renderer",
    "renderer.backend",
    "renderer.url",
    "renderer.mapping",
    "renderer.timeout_secs",
    "renderer.max_in_flight",
    "service",
    "service.listen",
    "service.snapshot_interval",
];

/// Read, override and check a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    validate_config_with(path, &[])
}

pub fn validate_config_with(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string(), overrides)
}

/// Parse config text, apply `key=value` overrides, fill defaults and check
/// invariants. Errors carry the line of the offending key where known.
pub fn parse_config(text: &str, source: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let lines = KeyLines::scan(text);
    let report = |issues: Vec<ConfigIssue>| {
        CoreError::Config(ConfigReport {
            source: source.to_string(),
            issues,
        })
    };

    let mut table: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            let line = e.span().map(|s| line_of_offset(text, s.start));
            return Err(report(vec![ConfigIssue {
                line,
                key: "<syntax>".into(),
                message: e.message().to_string(),
            }]));
        }
    };

    let mut issues = Vec::new();
    for ov in overrides {
        if let Err(message) = apply_override(&mut table, ov) {
            issues.push(ConfigIssue {
                line: None,
                key: format!("--override {ov}"),
                message,
            });
        }
    }

    let mut unknown = Vec::new();
    collect_unknown(&table, "", &mut unknown);
    for key in unknown {
        issues.push(ConfigIssue {
            line: lines.line_of(&key),
            message: "unknown key".into(),
            key,
        });
    }
    if !issues.is_empty() {
        return Err(report(issues));
    }

    let config: ExperimentConfig = match Value::Table(table).try_into() {
        Ok(c) => c,
        Err(e) => {
            let e: toml::de::Error = e;
            return Err(report(vec![ConfigIssue {
                line: None,
                key: "<type>".into(),
                message: e.message().to_string(),
            }]));
        }
    };

    let mut issues = config.check();
    for issue in &mut issues {
        issue.line = lines.line_of(&issue.key);
    }
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(report(issues))
    }
}

fn collect_unknown(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if !KNOWN_KEYS.contains(&path.as_str()) {
            out.push(path);
            continue;
        }
        if let Value::Table(inner) = v {
            collect_unknown(inner, &path, out);
        }
    }
}

/// Set a flat dotted key such as `grid.n=16`. The value is parsed as a TOML
/// value when possible and kept as a string otherwise.
pub fn apply_override(table: &mut Table, assignment: &str) -> std::result::Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| "expected key=value".to_string())?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err("empty key".into());
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = match entry {
            Value::Table(t) => t,
            _ => return Err(format!("'{part}' is not a table")),
        };
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Maps dotted key paths to the 1-based line that defines them.
struct KeyLines(BTreeMap<String, usize>);

impl KeyLines {
    fn scan(text: &str) -> Self {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                section = header
                    .trim_start_matches('[')
                    .split(']')
                    .next()
                    .unwrap_or("")
                    .trim()
                    .to_string();
                map.entry(section.clone()).or_insert(i + 1);
                continue;
            }
            if let Some((key, _)) = line.split_once('=') {
                let key = key.trim().trim_matches('"');
                let path = if section.is_empty() {
                    key.to_string()
                } else {
                    format!("{section}.{key}")
                };
                map.entry(path).or_insert(i + 1);
            }
        }
        KeyLines(map)
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        let mut key = key;
        loop {
            if let Some(&line) = self.0.get(key) {
                return Some(line);
            }
            key = key.rsplit_once('.')?.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn issues(err: CoreError) -> Vec<ConfigIssue> {
        match err {
            CoreError::Config(r) => r.issues,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn empty_file_gives_default_design() {
        let c = parse_config("", "empty", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.dimensions, 10);
        assert_eq!((c.grid.lo, c.grid.hi, c.grid.n), (-0.24, 0.38, 32));
        assert_eq!(c.n_chains, 45);
        assert_eq!(c.n_iterations, 20);
        assert_eq!(c.participants_per_iteration, 5);
        assert_eq!(c.duration_hours, 48.0);
        assert_eq!(c.n_random, 18);
        assert_eq!(c.novel_sentences.len(), 4);
        assert_eq!(c.emotions.len() * c.sentences.len(), 9);
    }

    #[test]
    fn even_participants_rejected_with_line() {
        let text = "seed = 3\nparticipants_per_iteration = 4\n";
        let found = issues(parse_config(text, "t", &[]).unwrap_err());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].key, "participants_per_iteration");
        assert_eq!(found[0].line, Some(2));
    }

    #[test]
    fn unbalanced_design_rejected() {
        let found = issues(parse_config("n_chains = 44", "t", &[]).unwrap_err());
        assert_eq!(found[0].key, "n_chains");
        assert_eq!(found[0].line, Some(1));
    }

    #[test]
    fn errors_are_aggregated() {
        let text = "n_chains = 44\nparticipants_per_iteration = 4\n[grid]\nlo = 1.0\nhi = 0.0\n";
        let found = issues(parse_config(text, "t", &[]).unwrap_err());
        let keys: Vec<_> = found.iter().map(|i| i.key.as_str()).collect();
        assert!(keys.contains(&"n_chains"));
        assert!(keys.contains(&"participants_per_iteration"));
        assert!(keys.contains(&"grid"));
        let grid = found.iter().find(|i| i.key == "grid").unwrap();
        assert_eq!(grid.line, Some(3));
    }

    #[test]
    fn unknown_keys_reported_with_lines() {
        let text = "colour = 1\n[grid]\nn = 16\nwidth = 3\n";
        let found = issues(parse_config(text, "t", &[]).unwrap_err());
        assert_eq!(found.len(), 2);
        assert_eq!((found[0].key.as_str(), found[0].line), ("colour", Some(1)));
        assert_eq!((found[1].key.as_str(), found[1].line), ("grid.width", Some(4)));
    }

    #[test]
    fn dotted_overrides() {
        let c = parse_config(
            "",
            "t",
            &[
                "grid.n=16".into(),
                "n_chains=9".into(),
                "renderer.url=http://localhost:9000".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.grid.n, 16);
        assert_eq!(c.n_chains, 9);
        assert_eq!(c.renderer.url.as_deref(), Some("http://localhost:9000"));
    }

    #[test]
    fn external_backend_requires_url() {
        let found = issues(parse_config("[renderer]\nbackend = \"external\"\n", "t", &[]).unwrap_err());
        assert_eq!(found[0].key, "renderer.url");
        assert_eq!(found[0].line, Some(1));
    }

    #[test]
    fn syntax_error_is_line_anchored() {
        let found = issues(parse_config("seed = 1\nn_chains = = 3\n", "t", &[]).unwrap_err());
        assert_eq!(found[0].line, Some(2));
    }
}
