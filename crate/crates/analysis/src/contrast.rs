//! Rating contrast: mean rating on the intended emotion minus mean rating on
//! the other emotions, per bin of stimuli, with percentile-bootstrap
//! intervals that resample whole stimuli.

use std::collections::BTreeMap;

use gsp_core::{Emotion, RatingRecord, StimulusKind, ValidationItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};
use crate::stats::quantile_sorted;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    /// Identifies the rated stimulus; rows sharing it are resampled together.
    pub item: u32,
    pub kind: StimulusKind,
    pub chain_emotion: Emotion,
    pub iteration: Option<u32>,
    pub probed_emotion: Emotion,
    pub rating: u8,
}

impl RatingRow {
    pub fn intended(&self) -> bool {
        self.chain_emotion == self.probed_emotion
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    pub rows: Vec<RatingRow>,
}

impl RatingTable {
    /// Join recorded ratings to their validation items.
    pub fn from_records(items: &[ValidationItem], records: &[RatingRecord]) -> Result<Self> {
        let by_id: BTreeMap<u32, &ValidationItem> = items.iter().map(|i| (i.item_id, i)).collect();
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            let item = by_id.get(&r.item_id).ok_or(AnalysisError::Shape {
                expected: items.len(),
                got: r.item_id as usize,
            })?;
            rows.push(RatingRow {
                item: r.item_id,
                kind: item.kind,
                chain_emotion: item.emotion,
                iteration: item.iteration,
                probed_emotion: r.probed_emotion,
                rating: r.rating,
            });
        }
        Ok(RatingTable { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "bin")]
pub enum Bin {
    Iterations { first: u32, last: u32 },
    Transfer,
    Random,
}

impl Bin {
    pub fn label(&self) -> String {
        match self {
            Bin::Iterations { first, last } if first == last => first.to_string(),
            Bin::Iterations { first, last } => format!("{first}-{last}"),
            Bin::Transfer => "transfer".into(),
            Bin::Random => "random".into(),
        }
    }

    pub fn contains(&self, row: &RatingRow) -> bool {
        match (self, row.kind) {
            (Bin::Iterations { first, last }, StimulusKind::Trajectory) => {
                row.iteration.is_some_and(|i| (*first..=*last).contains(&i))
            }
            (Bin::Transfer, StimulusKind::Transfer) => true,
            (Bin::Random, StimulusKind::Random) => true,
            _ => false,
        }
    }
}

/// {0}, 1-4, 5-8, 9-12, 13-16, 17-20, transfer, random.
pub fn default_bins() -> Vec<Bin> {
    let mut bins = vec![Bin::Iterations { first: 0, last: 0 }];
    bins.extend((0..5).map(|b| Bin::Iterations {
        first: 4 * b + 1,
        last: 4 * b + 4,
    }));
    bins.push(Bin::Transfer);
    bins.push(Bin::Random);
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastBin {
    pub bin: Bin,
    pub label: String,
    pub n_items: usize,
    pub n_ratings: usize,
    pub mean_intended: Option<f64>,
    pub mean_nonintended: Option<f64>,
    pub contrast: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Standard deviation of the bootstrap replicates.
    pub bootstrap_se: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    intended: f64,
    n_intended: usize,
    other: f64,
    n_other: usize,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.intended += o.intended;
        self.n_intended += o.n_intended;
        self.other += o.other;
        self.n_other += o.n_other;
    }

    fn contrast(&self) -> Option<f64> {
        (self.n_intended > 0 && self.n_other > 0)
            .then(|| self.intended / self.n_intended as f64 - self.other / self.n_other as f64)
    }
}

/// Contrast with a 95% percentile-bootstrap interval for each bin. A bin
/// without data is reported with every statistic missing.
pub fn contrast_curve(table: &RatingTable, bins: &[Bin], seed: u64) -> Result<Vec<ContrastBin>> {
    if table.rows.is_empty() {
        return Err(AnalysisError::TooFew { needed: 1, got: 0 });
    }
    Ok(bins
        .iter()
        .enumerate()
        .map(|(b, bin)| {
            let mut per_item: BTreeMap<u32, Sums> = BTreeMap::new();
            let mut n_ratings = 0;
            for row in table.rows.iter().filter(|r| bin.contains(r)) {
                n_ratings += 1;
                let s = per_item.entry(row.item).or_default();
                if row.intended() {
                    s.intended += row.rating as f64;
                    s.n_intended += 1;
                } else {
                    s.other += row.rating as f64;
                    s.n_other += 1;
                }
            }
            let units: Vec<Sums> = per_item.into_values().collect();
            let mut total = Sums::default();
            units.iter().for_each(|u| total.add(u));
            let contrast = total.contrast();

            let mut replicates = Vec::new();
            if contrast.is_some() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                for _ in 0..BOOTSTRAP_RESAMPLES {
                    let mut s = Sums::default();
                    for _ in 0..units.len() {
                        s.add(&units[rng.random_range(0..units.len())]);
                    }
                    if let Some(c) = s.contrast() {
                        replicates.push(c);
                    }
                }
                replicates.sort_by(f64::total_cmp);
            }
            let bootstrap_se = (replicates.len() >= 2).then(|| {
                let m = replicates.iter().sum::<f64>() / replicates.len() as f64;
                (replicates.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (replicates.len() - 1) as f64).sqrt()
            });
            ContrastBin {
                bin: *bin,
                label: bin.label(),
                n_items: units.len(),
                n_ratings,
                mean_intended: (total.n_intended > 0).then(|| total.intended / total.n_intended as f64),
                mean_nonintended: (total.n_other > 0).then(|| total.other / total.n_other as f64),
                contrast,
                ci_low: quantile_sorted(&replicates, 0.025),
                ci_high: quantile_sorted(&replicates, 0.975),
                bootstrap_se,
            }
        })
        .collect())
}
