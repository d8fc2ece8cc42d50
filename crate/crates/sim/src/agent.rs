//! Simulated slider and rating participants.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    /// Draw a position from the tempered conditional.
    Sampler,
    /// Take the most probable position.
    #[default]
    Maximizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentPolicy {
    pub mode: AgentMode,
    pub temperature: f64,
    /// Probability of ignoring the stimulus and answering uniformly.
    pub lapse_rate: f64,
}

impl Default for AgentPolicy {
    fn default() -> Self {
        AgentPolicy {
            mode: AgentMode::Maximizer,
            temperature: 1.0,
            lapse_rate: 0.1,
        }
    }
}

impl AgentPolicy {
    pub fn maximizer() -> Self {
        AgentPolicy {
            mode: AgentMode::Maximizer,
            temperature: 1.0,
            lapse_rate: 0.0,
        }
    }

    pub fn sampler(temperature: f64) -> Self {
        AgentPolicy {
            mode: AgentMode::Sampler,
            temperature,
            lapse_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(SimError::Policy(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.lapse_rate) {
            return Err(SimError::Policy(format!("lapse_rate must be in [0, 1), got {}", self.lapse_rate)));
        }
        Ok(())
    }
}

/// Lowest index among the largest entries.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

fn tempered(probs: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return probs.to_vec();
    }
    let w: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { (p.ln() / temperature).exp() } else { 0.0 })
        .collect();
    let top = w.iter().cloned().fold(0.0, f64::max);
    // Rescale before normalizing when every weight underflowed.
    let w: Vec<f64> = if top > 0.0 {
        w
    } else {
        let logs: Vec<f64> = probs.iter().map(|&p| p.ln() / temperature).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| (l - m).exp()).collect()
    };
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Exact distribution of the agent's answer given the conditional `probs`.
pub fn choice_distribution(policy: &AgentPolicy, probs: &[f64]) -> Vec<f64> {
    let n = probs.len();
    let base = match policy.mode {
        AgentMode::Maximizer => {
            let mut v = vec![0.0; n];
            v[argmax(probs)] = 1.0;
            v
        }
        AgentMode::Sampler => tempered(probs, policy.temperature),
    };
    if policy.lapse_rate == 0.0 {
        return base;
    }
    base.iter()
        .map(|p| (1.0 - policy.lapse_rate) * p + policy.lapse_rate / n as f64)
        .collect()
}

/// One slider response.
pub fn agent_choose(policy: &AgentPolicy, probs: &[f64], rng: &mut impl Rng) -> usize {
    let n = probs.len();
    if policy.lapse_rate > 0.0 && rng.random::<f64>() < policy.lapse_rate {
        return rng.random_range(0..n);
    }
    match policy.mode {
        AgentMode::Maximizer => argmax(probs),
        AgentMode::Sampler => {
            let p = tempered(probs, policy.temperature);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, &pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return k;
                }
            }
            // Rounding left a sliver above the last cumulative sum.
            p.iter().rposition(|&v| v > 0.0).unwrap_or(n - 1)
        }
    }
}

/// Rates a stimulus by its latent distance to the probed emotion's centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingAgent {
    pub sigma: f64,
    /// Standard deviation of Gaussian noise added to `3 s` before rounding.
    pub noise_sd: f64,
}

pub const DEFAULT_RATING_SIGMA: f64 = 0.25;

impl Default for RatingAgent {
    fn default() -> Self {
        RatingAgent {
            sigma: DEFAULT_RATING_SIGMA,
            noise_sd: 0.0,
        }
    }
}

/// `1 + round_half_up(3 s)` clamped to the 1-4 scale.
pub fn rating_from_similarity(scaled: f64) -> u8 {
    (1.0 + (scaled + 0.5).floor()).clamp(1.0, 4.0) as u8
}

impl RatingAgent {
    pub fn similarity(&self, x: &[f64], mu: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
        (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn rate(&self, x: &[f64], mu: &[f64], rng: &mut impl Rng) -> u8 {
        let mut scaled = 3.0 * self.similarity(x, mu);
        if self.noise_sd > 0.0 {
            scaled += Normal::new(0.0, self.noise_sd).expect("positive sd").sample(rng);
        }
        rating_from_similarity(scaled)
    }
}
