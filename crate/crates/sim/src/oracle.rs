//! Exact systematic-scan Gibbs kernels on small grids.
//!
//! States are grid points of a `D`-dimensional lattice, encoded with
//! dimension 0 as the fastest-varying digit. A scan updates dimension 0,
//! then 1, and so on; the full-scan kernel is the product of the per-site
//! kernels.

use gsp_core::SliderGrid;
use nalgebra::DMatrix;

use crate::agent::{choice_distribution, AgentPolicy};
use crate::error::{Result, SimError};
use crate::target::{normalize_log_weights, CompiledTarget, EmotionTarget};

pub const MAX_DIMENSIONS: usize = 2;
pub const MAX_POSITIONS: usize = 16;
pub const POWER_TOLERANCE: f64 = 1e-12;
const MAX_POWER_STEPS: usize = 1_000_000;

fn check_size(target: &CompiledTarget, grid: &SliderGrid) -> Result<usize> {
    let d = target.dimensions();
    let n = grid.n_positions();
    let states = n.pow(d as u32);
    if d > MAX_DIMENSIONS || n > MAX_POSITIONS {
        return Err(SimError::TooLarge {
            states,
            limit: MAX_POSITIONS.pow(MAX_DIMENSIONS as u32),
        });
    }
    Ok(states)
}

fn decode(mut s: usize, n: usize, d: usize) -> Vec<usize> {
    (0..d)
        .map(|_| {
            let k = s % n;
            s /= n;
            k
        })
        .collect()
}

fn encode(idx: &[usize], n: usize) -> usize {
    idx.iter().rev().fold(0, |acc, &k| acc * n + k)
}

/// Row-stochastic kernel of one update of `dim`, with `answer` mapping the
/// exact conditional to the distribution of the aggregated response.
fn site_kernel(
    target: &CompiledTarget,
    grid: &SliderGrid,
    dim: usize,
    answer: &dyn Fn(&[f64]) -> Vec<f64>,
) -> DMatrix<f64> {
    let n = grid.n_positions();
    let d = target.dimensions();
    let states = n.pow(d as u32);
    let mut k = DMatrix::zeros(states, states);
    for s in 0..states {
        let idx = decode(s, n, d);
        let x: Vec<f64> = idx.iter().map(|&i| grid.position(i)).collect();
        let q = answer(&target.slice_probs(&x, dim, grid));
        for (j, &p) in q.iter().enumerate() {
            let mut to = idx.clone();
            to[dim] = j;
            k[(s, encode(&to, n))] += p;
        }
    }
    k
}

fn scan_kernel(target: &CompiledTarget, grid: &SliderGrid, answer: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<DMatrix<f64>> {
    let states = check_size(target, grid)?;
    let mut k = DMatrix::identity(states, states);
    for dim in 0..target.dimensions() {
        k *= site_kernel(target, grid, dim, answer);
    }
    Ok(k)
}

/// One full systematic scan of the textbook Gibbs sampler.
pub fn gibbs_kernel(target: &EmotionTarget, grid: &SliderGrid) -> Result<DMatrix<f64>> {
    scan_kernel(&target.compile(grid)?, grid, &|q| q.to_vec())
}

/// One full scan of a chain whose iterations each take a single response
/// from an agent following `policy`.
pub fn agent_chain_kernel(target: &EmotionTarget, grid: &SliderGrid, policy: &AgentPolicy) -> Result<DMatrix<f64>> {
    scan_kernel(&target.compile(grid)?, grid, &|q| choice_distribution(policy, q))
}

/// One full scan when each iteration takes the median of `m` independent
/// responses.
pub fn median_chain_kernel(
    target: &EmotionTarget,
    grid: &SliderGrid,
    policy: &AgentPolicy,
    m: usize,
) -> Result<DMatrix<f64>> {
    scan_kernel(&target.compile(grid)?, grid, &|q| {
        median_distribution(&choice_distribution(policy, q), m)
    })
}

/// Distribution of the median of `m` (odd) iid draws from `q`.
pub fn median_distribution(q: &[f64], m: usize) -> Vec<f64> {
    assert!(m % 2 == 1, "median of an even number of draws");
    let need = m.div_ceil(2);
    let at_most = |f: f64| -> f64 {
        (need..=m)
            .map(|j| binomial(m, j) * f.powi(j as i32) * (1.0 - f).powi((m - j) as i32))
            .sum()
    };
    let mut cdf = 0.0;
    let mut prev = 0.0;
    q.iter()
        .map(|&p| {
            cdf = (cdf + p).min(1.0);
            let now = at_most(cdf);
            let mass = (now - prev).max(0.0);
            prev = now;
            mass
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Left fixed point of a row-stochastic kernel by power iteration from the
/// uniform distribution.
pub fn stationary(kernel: &DMatrix<f64>) -> Vec<f64> {
    let states = kernel.nrows();
    let mut pi = nalgebra::RowDVector::from_element(states, 1.0 / states as f64);
    for _ in 0..MAX_POWER_STEPS {
        let next = &pi * kernel;
        let change: f64 = (&next - &pi).abs().sum();
        pi = next;
        if change < POWER_TOLERANCE {
            break;
        }
    }
    let total = pi.sum();
    pi.iter().map(|p| p / total).collect()
}

/// Stationary distribution of the systematic-scan Gibbs sampler for
/// `target` on the grid lattice.
pub fn gibbs_oracle_stationary(target: &EmotionTarget, grid: &SliderGrid) -> Result<Vec<f64>> {
    Ok(stationary(&gibbs_kernel(target, grid)?))
}

/// The target density evaluated on every lattice point and normalized.
pub fn lattice_target(target: &EmotionTarget, grid: &SliderGrid) -> Result<Vec<f64>> {
    let c = target.compile(grid)?;
    let states = check_size(&c, grid)?;
    let n = grid.n_positions();
    let d = c.dimensions();
    Ok(normalize_log_weights((0..states).map(|s| {
        let x: Vec<f64> = decode(s, n, d).iter().map(|&i| grid.position(i)).collect();
        c.log_density(&x)
    })))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}
