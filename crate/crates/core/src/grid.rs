//! Discrete slider grids and points in the latent control space.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Equally spaced slider positions over `[lo, hi]`.
///
/// Position `k` is `lo + k * step` except for the last index, which is pinned
/// to `hi` so both endpoints are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliderGrid {
    lo: f64,
    hi: f64,
    n_positions: usize,
}

pub fn make_slider_grid(lo: f64, hi: f64, n: usize) -> Result<SliderGrid> {
    SliderGrid::new(lo, hi, n)
}

impl SliderGrid {
    pub fn new(lo: f64, hi: f64, n_positions: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(CoreError::InvalidGrid(format!(
                "bounds must be finite (lo = {lo}, hi = {hi})"
            )));
        }
        if lo >= hi {
            return Err(CoreError::InvalidGrid(format!(
                "lo ({lo}) must be below hi ({hi})"
            )));
        }
        if n_positions < 2 {
            return Err(CoreError::InvalidGrid(format!(
                "need at least 2 positions, got {n_positions}"
            )));
        }
        Ok(SliderGrid { lo, hi, n_positions })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_positions - 1) as f64
    }

    /// Weight at grid index `k`. Panics if `k` is off the grid.
    pub fn position(&self, k: usize) -> f64 {
        assert!(
            k < self.n_positions,
            "grid index {k} out of range 0..{}",
            self.n_positions
        );
        if k == self.n_positions - 1 {
            self.hi
        } else {
            self.lo + k as f64 * self.step()
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_positions).map(|k| self.position(k)).collect()
    }

    /// Index of the grid position closest to `w` (clamped to the grid).
    pub fn nearest_index(&self, w: f64) -> usize {
        let raw = ((w - self.lo) / self.step()).round();
        if raw.is_nan() || raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_positions - 1)
        }
    }

    /// Grid index used for chain initialization: the position nearest to a
    /// weight of zero (exactly zero when the grid contains it).
    pub fn zero_index(&self) -> usize {
        self.nearest_index(0.0)
    }

    pub fn contains_index(&self, k: usize) -> bool {
        k < self.n_positions
    }
}

/// A point in the D-dimensional control space, stored as grid indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint {
    indices: Vec<usize>,
}

impl LatentPoint {
    pub fn new(indices: Vec<usize>, grid: &SliderGrid) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&k| !grid.contains_index(k)) {
            return Err(CoreError::IndexOutOfRange {
                index: bad,
                n_positions: grid.n_positions(),
            });
        }
        Ok(LatentPoint { indices })
    }

    /// The initialization point: every dimension at the grid's zero index.
    pub fn zeros(dimensions: usize, grid: &SliderGrid) -> Self {
        LatentPoint {
            indices: vec![grid.zero_index(); dimensions],
        }
    }

    /// Snap arbitrary weights to the nearest grid indices.
    pub fn from_weights(weights: &[f64], grid: &SliderGrid) -> Self {
        LatentPoint {
            indices: weights.iter().map(|&w| grid.nearest_index(w)).collect(),
        }
    }

    pub fn dimensions(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn index(&self, dim: usize) -> usize {
        self.indices[dim]
    }

    pub fn weights(&self, grid: &SliderGrid) -> Vec<f64> {
        self.indices.iter().map(|&k| grid.position(k)).collect()
    }

    /// Copy of this point with `dim` moved to grid index `k`.
    pub fn with_index(&self, dim: usize, k: usize) -> Self {
        let mut indices = self.indices.clone();
        indices[dim] = k;
        LatentPoint { indices }
    }

    /// Dimensions in which two points differ.
    pub fn differing_dims(&self, other: &LatentPoint) -> Vec<usize> {
        self.indices
            .iter()
            .zip(&other.indices)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(d, _)| d)
            .collect()
    }
}
