//! Prosody parameters and the linear mapping from latent control weights.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RenderError, Result};

/// The mapping shipped with the built-in renderer.
pub const BUILTIN_MAPPING: &str = include_str!("../data/mapping_v1.toml");

pub const PARAM_NAMES: [&str; 8] = [
    "f0_mean",
    "f0_slope",
    "rate",
    "intensity_slope",
    "jitter_depth",
    "shimmer_depth",
    "vibrato_rate",
    "vibrato_depth",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyParams {
    /// Hz.
    pub f0_mean: f64,
    /// Semitones per second.
    pub f0_slope: f64,
    /// Speaking-rate multiplier; durations are divided by it.
    pub rate: f64,
    /// dB per second.
    pub intensity_slope: f64,
    pub jitter_depth: f64,
    pub shimmer_depth: f64,
    /// Hz.
    pub vibrato_rate: f64,
    /// Semitones.
    pub vibrato_depth: f64,
}

impl ProsodyParams {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.f0_mean,
            self.f0_slope,
            self.rate,
            self.intensity_slope,
            self.jitter_depth,
            self.shimmer_depth,
            self.vibrato_rate,
            self.vibrato_depth,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        ProsodyParams {
            f0_mean: a[0],
            f0_slope: a[1],
            rate: a[2],
            intensity_slope: a[3],
            jitter_depth: a[4],
            shimmer_depth: a[5],
            vibrato_rate: a[6],
            vibrato_depth: a[7],
        }
    }

    /// Restrict to the ranges the synthesizer supports.
    pub fn clamped(self) -> Self {
        ProsodyParams {
            f0_mean: self.f0_mean.clamp(60.0, 600.0),
            rate: self.rate.clamp(0.5, 2.0),
            jitter_depth: self.jitter_depth.max(0.0),
            shimmer_depth: self.shimmer_depth.max(0.0),
            vibrato_rate: self.vibrato_rate.clamp(0.0, 20.0),
            vibrato_depth: self.vibrato_depth.max(0.0),
            ..self
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingFile {
    version: u32,
    dimensions: usize,
    baseline: ProsodyParams,
    matrix: MatrixRows,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRows {
    f0_mean: Vec<f64>,
    f0_slope: Vec<f64>,
    rate: Vec<f64>,
    intensity_slope: Vec<f64>,
    jitter_depth: Vec<f64>,
    shimmer_depth: Vec<f64>,
    vibrato_rate: Vec<f64>,
    vibrato_depth: Vec<f64>,
}

/// `params = clamp(baseline + matrix · weights)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyMapping {
    pub version: u32,
    pub baseline: ProsodyParams,
    /// Eight rows (one per parameter, in [`PARAM_NAMES`] order) of `D`
    /// coefficients.
    pub matrix: [Vec<f64>; 8],
    /// Hex SHA-256 of the file the mapping was read from.
    pub checksum: String,
}

impl ProsodyMapping {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_MAPPING).expect("shipped mapping parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: MappingFile = toml::from_str(text).map_err(|e| RenderError::Mapping(e.to_string()))?;
        let m = file.matrix;
        let matrix = [
            m.f0_mean,
            m.f0_slope,
            m.rate,
            m.intensity_slope,
            m.jitter_depth,
            m.shimmer_depth,
            m.vibrato_rate,
            m.vibrato_depth,
        ];
        for (row, name) in matrix.iter().zip(PARAM_NAMES) {
            if row.len() != file.dimensions {
                return Err(RenderError::Mapping(format!(
                    "row {name} has {} coefficients, expected {}",
                    row.len(),
                    file.dimensions
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(RenderError::Mapping(format!("row {name} has a non-finite coefficient")));
            }
        }
        Ok(ProsodyMapping {
            version: file.version,
            baseline: file.baseline,
            matrix,
            checksum: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn dimensions(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn column(&self, dim: usize) -> [f64; 8] {
        std::array::from_fn(|p| self.matrix[p][dim])
    }

    /// Dimension with the largest positive f0_mean coefficient.
    pub fn pitch_dimension(&self) -> usize {
        (0..self.dimensions())
            .max_by(|&a, &b| self.matrix[0][a].total_cmp(&self.matrix[0][b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    pub fn map(&self, weights: &[f64]) -> Result<ProsodyParams> {
        if weights.len() != self.dimensions() {
            return Err(RenderError::Shape {
                expected: self.dimensions(),
                got: weights.len(),
            });
        }
        let base = self.baseline.to_array();
        let out: [f64; 8] = std::array::from_fn(|p| {
            base[p] + self.matrix[p].iter().zip(weights).map(|(m, w)| m * w).sum::<f64>()
        });
        Ok(ProsodyParams::from_array(out).clamped())
    }
}

/// Map control weights through the shipped mapping.
pub fn map_latent_to_prosody(weights: &[f64]) -> Result<ProsodyParams> {
    ProsodyMapping::builtin().map(weights)
}
