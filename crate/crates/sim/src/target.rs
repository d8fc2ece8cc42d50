//! Gaussian utility functions over the latent space, one per emotion.

use gsp_core::{Emotion, SliderGrid};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// What a simulated participant is looking for when asked for `emotion`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTarget {
    pub emotion: Emotion,
    /// Centre of the target, in weight units.
    pub mu: Vec<f64>,
    /// Isotropic spread, used when no covariance is given.
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl EmotionTarget {
    pub fn isotropic(emotion: Emotion, mu: Vec<f64>, sigma: f64) -> Self {
        EmotionTarget {
            emotion,
            mu,
            sigma,
            covariance: None,
        }
    }

    pub fn dimensions(&self) -> usize {
        self.mu.len()
    }

    /// Same centre, no correlations.
    pub fn diagonal(&self) -> Self {
        EmotionTarget {
            covariance: None,
            ..self.clone()
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> SimError {
        SimError::Target {
            emotion: self.emotion.to_string(),
            reason: reason.into(),
        }
    }

    /// Check the target against the grid and precompute its precision
    /// matrix.
    pub fn compile(&self, grid: &SliderGrid) -> Result<CompiledTarget> {
        let d = self.dimensions();
        if d == 0 {
            return Err(self.invalid("mu is empty"));
        }
        if let Some(k) = self
            .mu
            .iter()
            .position(|m| !m.is_finite() || *m < grid.lo() - 1e-12 || *m > grid.hi() + 1e-12)
        {
            return Err(self.invalid(format!("mu[{k}] = {} is outside the grid range", self.mu[k])));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(self.invalid("sigma must be positive"));
        }
        let precision = match &self.covariance {
            None => DMatrix::identity(d, d) / (self.sigma * self.sigma),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(self.invalid(format!("covariance must be {d}x{d}")));
                }
                let cov = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                if (0..d).any(|i| (0..i).any(|j| (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12)) {
                    return Err(self.invalid("covariance is not symmetric"));
                }
                let eig = cov.clone().symmetric_eigen().eigenvalues;
                let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
                if !(lo > 1e-12 * hi) {
                    return Err(SimError::Conditioning);
                }
                cov.cholesky().ok_or(SimError::Conditioning)?.inverse()
            }
        };
        Ok(CompiledTarget {
            emotion: self.emotion,
            mu: DVector::from_column_slice(&self.mu),
            precision,
        })
    }
}

/// A target ready for repeated conditional queries.
#[derive(Debug, Clone)]
pub struct CompiledTarget {
    pub emotion: Emotion,
    pub mu: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl CompiledTarget {
    pub fn dimensions(&self) -> usize {
        self.mu.len()
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let e = DVector::from_column_slice(x) - &self.mu;
        -0.5 * e.dot(&(&self.precision * &e))
    }

    /// Mean and standard deviation of coordinate `dim` given the others.
    pub fn conditional(&self, x: &[f64], dim: usize) -> (f64, f64) {
        let q = &self.precision;
        let qdd = q[(dim, dim)];
        let shift: f64 = (0..self.dimensions())
            .filter(|&j| j != dim)
            .map(|j| q[(dim, j)] * (x[j] - self.mu[j]))
            .sum();
        (self.mu[dim] - shift / qdd, 1.0 / qdd.sqrt())
    }

    /// Distribution over the grid positions of `dim`, the other coordinates
    /// held at `x`.
    pub fn slice_probs(&self, x: &[f64], dim: usize, grid: &SliderGrid) -> Vec<f64> {
        let (m, s) = self.conditional(x, dim);
        normalize_log_weights(grid.positions().iter().map(|&v| -(v - m).powi(2) / (2.0 * s * s)))
    }
}

/// Turn log weights into probabilities without overflow.
pub fn normalize_log_weights(logw: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let logw: Vec<f64> = logw.into_iter().collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Conditional probabilities of the grid positions of `free_dim` under a
/// Gaussian target, the other coordinates fixed at `point`.
pub fn conditional_slice_probs(
    target: &EmotionTarget,
    point: &[f64],
    free_dim: usize,
    grid: &SliderGrid,
) -> Result<Vec<f64>> {
    let compiled = target.compile(grid)?;
    if point.len() != compiled.dimensions() || free_dim >= point.len() {
        return Err(target.invalid(format!(
            "point has {} coordinates, free dimension {free_dim}",
            point.len()
        )));
    }
    Ok(compiled.slice_probs(point, free_dim, grid))
}

/// Targets for every emotion of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub targets: Vec<EmotionTarget>,
}

impl TargetSet {
    pub fn get(&self, emotion: Emotion) -> Result<&EmotionTarget> {
        self.targets
            .iter()
            .find(|t| t.emotion == emotion)
            .ok_or_else(|| SimError::MissingTarget(emotion.to_string()))
    }

    pub fn compile(&self, grid: &SliderGrid) -> Result<Vec<CompiledTarget>> {
        self.targets.iter().map(|t| t.compile(grid)).collect()
    }

    /// Drop all correlations.
    pub fn diagonal(&self) -> Self {
        TargetSet {
            targets: self.targets.iter().map(EmotionTarget::diagonal).collect(),
        }
    }
}

pub const DEFAULT_SIGMA: f64 = 0.1;
/// Correlation between neighbouring dimensions in the default targets.
pub const DEFAULT_NEIGHBOUR_CORRELATION: f64 = 0.8;

/// Default ten-dimensional targets. Neighbouring dimensions are correlated
/// (`cov = sigma^2 * rho^|i-j|`), so one coordinate sweep does not reach the
/// mode and chains keep improving through the second sweep.
pub fn default_targets() -> TargetSet {
    let centres = [
        (Emotion::Anger, [0.22, 0.00, 0.18, 0.20, -0.10, 0.12, 0.00, 0.00, -0.12, 0.10]),
        (Emotion::Happiness, [0.20, 0.16, 0.10, -0.06, 0.00, -0.10, 0.22, 0.18, 0.00, -0.08]),
        (Emotion::Sadness, [-0.16, -0.04, -0.14, 0.00, 0.24, 0.00, -0.12, 0.04, 0.18, 0.00]),
    ];
    let covariance = ar1_covariance(10, DEFAULT_SIGMA, DEFAULT_NEIGHBOUR_CORRELATION);
    TargetSet {
        targets: centres
            .into_iter()
            .map(|(emotion, mu)| EmotionTarget {
                emotion,
                mu: mu.to_vec(),
                sigma: DEFAULT_SIGMA,
                covariance: Some(covariance.clone()),
            })
            .collect(),
    }
}

pub fn ar1_covariance(d: usize, sigma: f64, rho: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| sigma * sigma * rho.powi((i as i32 - j as i32).abs())).collect())
        .collect()
}
