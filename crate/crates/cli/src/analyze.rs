//! The analysis report for one event log.
//!
//! Four sections: rating contrast per iteration bin, PCA of style
//! embeddings of late-iteration stimuli, acoustic features of the same
//! stimuli with per-emotion profiles, and 4-fold emotion classification
//! from those features. A section that cannot be computed (for instance a
//! log without ratings) is kept with a `skipped` reason so the report shape
//! never changes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gsp_analysis::{
    contrast_curve, default_bins, kfold_uar, pca, pearson, ContrastBin, Correlation, Dataset, FeatureExtractor,
    FeatureVector, RatingTable, SvmSettings, FEATURE_NAMES,
};
use gsp_core::{AudioBuffer, ChainId, Emotion, ExperimentConfig, StimulusId};
use gsp_render::StimulusCache;
use serde::Serialize;

use crate::args::Embedding;
use crate::commands::{load_log, write_file, write_json, Backend, LoadedLog};
use crate::error::{CliError, Result};
use crate::tables::{num, opt, tsv};

#[derive(Debug, Clone, Serialize)]
pub struct Source {
    pub log_sha256: String,
    pub events: usize,
    pub renderer: String,
    pub full_chains: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastSection {
    pub skipped: Option<String>,
    pub n_ratings: usize,
    pub bins: Vec<ContrastBin>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaRow {
    pub chain_id: ChainId,
    pub emotion: Emotion,
    pub iteration: u32,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaSection {
    pub skipped: Option<String>,
    pub embedding: Embedding,
    pub iterations: (u32, u32),
    pub explained_variance_ratio: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub rows: Vec<PcaRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureRow {
    pub stimulus_id: StimulusId,
    pub chain_id: ChainId,
    pub emotion: Emotion,
    pub iteration: u32,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Serialize)]
pub struct Profile {
    pub emotion: Emotion,
    /// Mean z-score of each feature over this emotion's stimuli.
    pub z: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileCorrelation {
    pub a: Emotion,
    pub b: Emotion,
    pub correlation: Option<Correlation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureSection {
    pub skipped: Option<String>,
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
    pub profiles: Vec<Profile>,
    pub profile_correlations: Vec<ProfileCorrelation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationSection {
    pub skipped: Option<String>,
    pub k: usize,
    pub c_grid: Vec<f64>,
    pub classes: Vec<Emotion>,
    pub n: usize,
    pub uar: Option<f64>,
    pub chance: f64,
    pub recalls: Vec<Option<f64>>,
    pub chosen_c: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub source: Source,
    pub contrast: ContrastSection,
    pub pca: PcaSection,
    pub features: FeatureSection,
    pub classification: ClassificationSection,
}

/// Late iterations of a chain of `n`: 9 to 20 for the default 20.
pub fn late_iterations(n: u32) -> (u32, u32) {
    ((n * 9 / 20).max(1).min(n), n)
}

struct Stimulus {
    chain_id: ChainId,
    emotion: Emotion,
    iteration: u32,
    weights: Vec<f64>,
    sentence: String,
}

fn late_stimuli(log: &LoadedLog) -> (Vec<Stimulus>, (u32, u32)) {
    let state = &log.state;
    let span = late_iterations(state.config.n_iterations);
    let mut out = Vec::new();
    for c in state.full_chains() {
        for h in c.history.iter().filter(|h| (span.0..=span.1).contains(&h.iteration)) {
            out.push(Stimulus {
                chain_id: c.id(),
                emotion: c.spec.emotion,
                iteration: h.iteration,
                weights: h.point.weights(&state.grid),
                sentence: c.spec.sentence.clone(),
            });
        }
    }
    (out, span)
}

fn contrast_section(log: &LoadedLog, seed: u64) -> Result<ContrastSection> {
    let Some(v) = log.state.validation.as_ref().filter(|v| !v.ratings.is_empty()) else {
        return Ok(ContrastSection {
            skipped: Some("log has no validation ratings".into()),
            n_ratings: 0,
            bins: Vec::new(),
        });
    };
    let table = RatingTable::from_records(&v.items, &v.ratings)?;
    Ok(ContrastSection {
        skipped: None,
        n_ratings: v.ratings.len(),
        bins: contrast_curve(&table, &default_bins(), seed)?,
    })
}

fn embedding_of(backend: &Backend, cache: &StimulusCache, kind: Embedding, s: &Stimulus) -> Result<Vec<f64>> {
    match (kind, backend) {
        (Embedding::Latent, _) => Ok(s.weights.clone()),
        (Embedding::Prosody, Backend::Builtin(r)) => Ok(r.params(&s.weights)?.to_array().to_vec()),
        (Embedding::Prosody, Backend::External(_)) => {
            let id = cache.ensure(&s.weights, &s.sentence)?;
            cache
                .embedding(&id)
                .ok_or_else(|| CliError::Runtime(format!("renderer reported no style embedding for {id}")))
        }
    }
}

fn pca_section(
    stimuli: &[Stimulus],
    span: (u32, u32),
    backend: &Backend,
    cache: &StimulusCache,
    kind: Embedding,
) -> Result<PcaSection> {
    let mut section = PcaSection {
        skipped: None,
        embedding: kind,
        iterations: span,
        explained_variance_ratio: Vec::new(),
        components: Vec::new(),
        rows: Vec::new(),
    };
    let embeddings = stimuli
        .iter()
        .map(|s| embedding_of(backend, cache, kind, s))
        .collect::<Result<Vec<_>>>()?;
    match pca(&embeddings) {
        Ok(p) => {
            section.rows = stimuli
                .iter()
                .zip(&p.scores)
                .map(|(s, scores)| PcaRow {
                    chain_id: s.chain_id,
                    emotion: s.emotion,
                    iteration: s.iteration,
                    scores: scores.clone(),
                })
                .collect();
            section.explained_variance_ratio = p.explained_variance_ratio;
            section.components = p.components;
        }
        Err(e) => section.skipped = Some(e.to_string()),
    }
    Ok(section)
}

fn features_section(stimuli: &[Stimulus], cache: &StimulusCache, emotions: &[Emotion]) -> Result<FeatureSection> {
    let extractor = FeatureExtractor::new();
    let mut seen: BTreeMap<StimulusId, FeatureVector> = BTreeMap::new();
    let mut rows = Vec::with_capacity(stimuli.len());
    for s in stimuli {
        let id = cache.ensure(&s.weights, &s.sentence)?;
        let features = match seen.get(&id) {
            Some(f) => *f,
            None => {
                let wav = cache
                    .fetch(&id)
                    .ok_or_else(|| CliError::Runtime(format!("stimulus {id} vanished from the store")))?;
                let audio = AudioBuffer::from_wav_bytes(&wav).map_err(|e| CliError::Runtime(e.to_string()))?;
                let f = extractor.extract(&audio)?;
                seen.insert(id.clone(), f);
                f
            }
        };
        rows.push(FeatureRow {
            stimulus_id: id,
            chain_id: s.chain_id,
            emotion: s.emotion,
            iteration: s.iteration,
            features,
        });
    }

    // z-score each feature over all rows where it is present
    let columns: Vec<Vec<Option<f64>>> =
        (0..FEATURE_NAMES.len()).map(|j| rows.iter().map(|r| r.features.values()[j]).collect()).collect();
    let z: Vec<Vec<Option<f64>>> = columns
        .iter()
        .map(|col| {
            let present: Vec<f64> = col.iter().flatten().copied().collect();
            let n = present.len() as f64;
            let mean = present.iter().sum::<f64>() / n;
            let sd = (present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            col.iter()
                .map(|v| v.filter(|_| sd > 0.0 && sd.is_finite()).map(|v| (v - mean) / sd))
                .collect()
        })
        .collect();
    let profiles: Vec<Profile> = emotions
        .iter()
        .map(|&e| Profile {
            emotion: e,
            z: z
                .iter()
                .map(|col| {
                    let vals: Vec<f64> =
                        col.iter().zip(&rows).filter(|(_, r)| r.emotion == e).filter_map(|(v, _)| *v).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect(),
        })
        .collect();
    let mut profile_correlations = Vec::new();
    for (i, a) in profiles.iter().enumerate() {
        for b in &profiles[i + 1..] {
            let pairs: Vec<(f64, f64)> = a.z.iter().zip(&b.z).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            profile_correlations.push(ProfileCorrelation {
                a: a.emotion,
                b: b.emotion,
                correlation: pearson(&x, &y).ok(),
            });
        }
    }
    Ok(FeatureSection {
        skipped: rows.is_empty().then(|| "no full chains".to_string()),
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
        profiles,
        profile_correlations,
    })
}

fn classification_section(features: &FeatureSection, emotions: &[Emotion], seed: u64) -> ClassificationSection {
    let settings = SvmSettings {
        seed,
        ..SvmSettings::default()
    };
    let mut section = ClassificationSection {
        skipped: None,
        k: settings.k,
        c_grid: settings.c_grid.clone(),
        classes: emotions.to_vec(),
        n: 0,
        uar: None,
        chance: 1.0 / emotions.len().max(1) as f64,
        recalls: Vec::new(),
        chosen_c: Vec::new(),
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in &features.rows {
        let values: Option<Vec<f64>> = r.features.values().into_iter().collect();
        if let (Some(v), Some(label)) = (values, emotions.iter().position(|&e| e == r.emotion)) {
            x.push(v);
            y.push(label);
        }
    }
    section.n = y.len();
    let outcome = Dataset::new(
        features.names.clone(),
        emotions.iter().map(|e| e.to_string()).collect(),
        x,
        y,
    )
    .and_then(|d| kfold_uar(&d, &settings));
    match outcome {
        Ok(cv) => {
            section.uar = Some(cv.uar);
            section.recalls = cv.recalls;
            section.chosen_c = cv.chosen_c;
        }
        Err(e) => section.skipped = Some(e.to_string()),
    }
    section
}

pub struct AnalyzeOptions {
    pub embedding: Embedding,
    pub seed: Option<u64>,
    /// Renderer settings; the log's own config when `None`.
    pub config: Option<ExperimentConfig>,
    pub stimuli: Option<PathBuf>,
}

pub fn build_report(log: &LoadedLog, opts: &AnalyzeOptions) -> Result<Report> {
    let state = &log.state;
    let seed = opts.seed.unwrap_or(state.config.seed);
    let config = opts.config.as_ref().unwrap_or(&state.config);
    let backend = Backend::from_config(config)?;
    let cache = backend.cache(opts.stimuli.as_deref())?;
    if cache.identity() != &state.renderer {
        return Err(CliError::Config(format!(
            "log was rendered by {:?}, configured renderer is {:?}",
            state.renderer,
            cache.identity()
        )));
    }
    let emotions = state.config.emotions.clone();
    let (stimuli, span) = late_stimuli(log);
    let features = features_section(&stimuli, &cache, &emotions)?;
    Ok(Report {
        source: Source {
            log_sha256: log.sha256.clone(),
            events: log.events.len(),
            renderer: state.renderer.tag.clone(),
            full_chains: state.full_chains().count(),
            seed,
        },
        contrast: contrast_section(log, seed)?,
        pca: pca_section(&stimuli, span, &backend, &cache, opts.embedding)?,
        classification: classification_section(&features, &emotions, seed),
        features,
    })
}

pub fn analyze(log_path: &Path, opts: &AnalyzeOptions, out: &Path) -> Result<(Vec<PathBuf>, Report)> {
    let log = load_log(log_path)?;
    let report = build_report(&log, opts)?;
    let paths = vec![
        write_json(&out.join("report.json"), &report)?,
        write_file(&out.join("report.md"), markdown(&report).as_bytes())?,
        write_file(&out.join("contrast.tsv"), contrast_tsv(&report.contrast).as_bytes())?,
        write_file(&out.join("pca_scores.tsv"), pca_scores_tsv(&report.pca).as_bytes())?,
        write_file(&out.join("pca_components.tsv"), pca_components_tsv(&report.pca).as_bytes())?,
        write_file(&out.join("features.tsv"), features_tsv(&report.features).as_bytes())?,
        write_file(&out.join("classification.tsv"), classification_tsv(&report.classification).as_bytes())?,
    ];
    Ok((paths, report))
}

fn contrast_tsv(c: &ContrastSection) -> String {
    tsv(
        &["bin", "n_items", "n_ratings", "mean_intended", "mean_nonintended", "contrast", "ci_low", "ci_high"],
        c.bins.iter().map(|b| {
            vec![
                b.label.clone(),
                b.n_items.to_string(),
                b.n_ratings.to_string(),
                opt(b.mean_intended),
                opt(b.mean_nonintended),
                opt(b.contrast),
                opt(b.ci_low),
                opt(b.ci_high),
            ]
        }),
    )
}

fn pca_scores_tsv(p: &PcaSection) -> String {
    let d = p.components.len();
    let pcs: Vec<String> = (1..=d).map(|k| format!("pc{k}")).collect();
    let mut header = vec!["chain_id", "emotion", "iteration"];
    header.extend(pcs.iter().map(String::as_str));
    tsv(
        &header,
        p.rows.iter().map(|r| {
            let mut row = vec![r.chain_id.to_string(), r.emotion.to_string(), r.iteration.to_string()];
            row.extend(r.scores.iter().map(|&v| num(v)));
            row
        }),
    )
}

fn pca_components_tsv(p: &PcaSection) -> String {
    tsv(
        &["component", "explained_variance_ratio", "loadings"],
        p.components.iter().zip(&p.explained_variance_ratio).enumerate().map(|(k, (c, r))| {
            vec![
                format!("pc{}", k + 1),
                num(*r),
                c.iter().map(|&v| num(v)).collect::<Vec<_>>().join(","),
            ]
        }),
    )
}

fn features_tsv(f: &FeatureSection) -> String {
    let mut header = vec!["stimulus_id", "chain_id", "emotion", "iteration"];
    header.extend(FEATURE_NAMES);
    tsv(
        &header,
        f.rows.iter().map(|r| {
            let mut row = vec![
                r.stimulus_id.to_string(),
                r.chain_id.to_string(),
                r.emotion.to_string(),
                r.iteration.to_string(),
            ];
            row.extend(r.features.values().into_iter().map(opt));
            row
        }),
    )
}

fn classification_tsv(c: &ClassificationSection) -> String {
    let mut rows: Vec<Vec<String>> = c
        .classes
        .iter()
        .zip(c.recalls.iter().chain(std::iter::repeat(&None)))
        .map(|(e, r)| vec![format!("recall_{e}"), opt(*r)])
        .collect();
    rows.push(vec!["uar".into(), opt(c.uar)]);
    rows.push(vec!["chance".into(), num(c.chance)]);
    rows.push(vec!["n".into(), c.n.to_string()]);
    tsv(&["metric", "value"], rows)
}

fn markdown(r: &Report) -> String {
    use std::fmt::Write;
    let mut md = String::new();
    let skipped = |md: &mut String, s: &Option<String>| {
        if let Some(reason) = s {
            let _ = writeln!(md, "_Skipped: {reason}._\n");
        }
    };
    let _ = writeln!(md, "# Analysis report\n");
    let _ = writeln!(
        md,
        "Log `{}`: {} events, {} full chains, renderer `{}`, seed {}.\n",
        &r.source.log_sha256[..16],
        r.source.events,
        r.source.full_chains,
        r.source.renderer,
        r.source.seed
    );

    let _ = writeln!(md, "## Rating contrast\n");
    skipped(&mut md, &r.contrast.skipped);
    if !r.contrast.bins.is_empty() {
        let _ = writeln!(md, "| bin | items | ratings | contrast | 95% CI |\n|---|---|---|---|---|");
        for b in &r.contrast.bins {
            let ci = match (b.ci_low, b.ci_high) {
                (Some(lo), Some(hi)) => format!("[{lo:.3}, {hi:.3}]"),
                _ => String::new(),
            };
            let c = b.contrast.map(|c| format!("{c:.3}")).unwrap_or_default();
            let _ = writeln!(md, "| {} | {} | {} | {c} | {ci} |", b.label, b.n_items, b.n_ratings);
        }
        md.push('\n');
    }

    let _ = writeln!(
        md,
        "## PCA of style embeddings\n\n{} embedding, iterations {}-{}, {} stimuli.\n",
        match r.pca.embedding {
            Embedding::Prosody => "Prosody",
            Embedding::Latent => "Latent",
        },
        r.pca.iterations.0,
        r.pca.iterations.1,
        r.pca.rows.len()
    );
    skipped(&mut md, &r.pca.skipped);
    if !r.pca.explained_variance_ratio.is_empty() {
        let ratios: Vec<String> = r.pca.explained_variance_ratio.iter().take(4).map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(md, "Explained variance (first components): {}.\n", ratios.join(", "));
    }

    let _ = writeln!(md, "## Acoustic features\n");
    skipped(&mut md, &r.features.skipped);
    if !r.features.profiles.is_empty() && r.features.skipped.is_none() {
        let _ = writeln!(md, "Mean z-score per emotion.\n");
        let _ = writeln!(md, "| emotion | {} |", r.features.names.join(" | "));
        let _ = writeln!(md, "|---{}|", "|---".repeat(r.features.names.len()));
        for p in &r.features.profiles {
            let cells: Vec<String> = p.z.iter().map(|v| v.map(|v| format!("{v:+.2}")).unwrap_or_default()).collect();
            let _ = writeln!(md, "| {} | {} |", p.emotion, cells.join(" | "));
        }
        md.push('\n');
    }

    let _ = writeln!(md, "## Emotion classification\n");
    skipped(&mut md, &r.classification.skipped);
    if let Some(uar) = r.classification.uar {
        let _ = writeln!(
            md,
            "{}-fold linear SVM on {} stimuli: UAR {:.3} (chance {:.3}).",
            r.classification.k, r.classification.n, uar, r.classification.chance
        );
    }
    md
}
