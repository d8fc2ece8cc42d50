//! Principal component analysis via the eigendecomposition of the sample
//! covariance matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit-length principal axes, one per row, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Projection of every input row onto the components.
    pub scores: Vec<Vec<f64>>,
}

impl PcaResult {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    /// Inverse of [`PcaResult::project`] using all components; returns the
    /// centred point.
    pub fn reconstruct_centered(&self, scores: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = vec![0.0; d];
        for (s, c) in scores.iter().zip(&self.components) {
            for j in 0..d {
                out[j] += s * c[j];
            }
        }
        out
    }
}

pub fn pca(rows: &[Vec<f64>]) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(AnalysisError::TooFew { needed: 2, got: n });
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(AnalysisError::Shape {
            expected: d,
            got: bad.len(),
        });
    }
    for r in rows {
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(AnalysisError::NonFinite(j));
        }
    }

    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let total: f64 = cov.diagonal().iter().sum();
    let scale = mean.iter().map(|m| m * m).sum::<f64>().max(1.0);
    if total <= 1e-24 * scale {
        return Err(AnalysisError::Degenerate);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    for &k in &order {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    let sum: f64 = eigenvalues.iter().sum();
    let explained_variance_ratio = eigenvalues.iter().map(|e| e / sum).collect();

    let mut result = PcaResult {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        scores: Vec::new(),
    };
    result.scores = rows.iter().map(|r| result.project(r)).collect();
    Ok(result)
}
