//! Simulation scenario files (TOML).
//!
//! ```toml
//! seed = 7
//! render = false
//!
//! [policy]
//! mode = "maximizer"   # or "sampler"
//! temperature = 1.0
//! lapse_rate = 0.1
//!
//! [timing]
//! participants = 130
//! arrival_interval_secs = 30.0
//! trial_secs = 60.0
//!
//! [rating]
//! raters = 82
//! secs_per_rating = 8.0
//! agent = { sigma = 0.25, noise_sd = 0.0 }
//!
//! [[targets]]
//! emotion = "anger"
//! mu = [0.22, 0.0, ...]
//! sigma = 0.1
//! # covariance = [[...], ...]   optional, D x D
//! ```
//!
//! Every table is optional. Without `[[targets]]` the built-in default
//! targets are used; `diagonal_targets = true` drops their correlations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentPolicy;
use crate::error::{Result, SimError};
use crate::sim::{RatingSettings, Timing};
use crate::target::{default_targets, EmotionTarget, TargetSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub render: bool,
    pub diagonal_targets: bool,
    pub policy: AgentPolicy,
    pub timing: Timing,
    pub rating: RatingSettings,
    pub targets: Vec<EmotionTarget>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            render: false,
            diagonal_targets: false,
            policy: AgentPolicy::default(),
            timing: Timing::default(),
            rating: RatingSettings::default(),
            targets: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        s.policy.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Scenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn target_set(&self) -> TargetSet {
        let set = if self.targets.is_empty() {
            default_targets()
        } else {
            TargetSet {
                targets: self.targets.clone(),
            }
        };
        if self.diagonal_targets {
            set.diagonal()
        } else {
            set
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentMode;
    use gsp_core::Emotion;

    #[test]
    fn empty_file_gives_defaults() {
        let s = Scenario::parse("").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.target_set(), default_targets());
    }

    #[test]
    fn full_file() {
        let s = Scenario::parse(
            r#"
            seed = 3
            diagonal_targets = true
            [policy]
            mode = "sampler"
            temperature = 0.5
            [timing]
            arrival_interval_secs = 43.2
            [rating]
            raters = 10
            agent = { sigma = 0.2 }
            [[targets]]
            emotion = "sadness"
            mu = [0.1, 0.2]
            sigma = 0.05
            covariance = [[0.0025, 0.001], [0.001, 0.0025]]
            "#,
        )
        .unwrap();
        assert_eq!(s.policy.mode, AgentMode::Sampler);
        assert_eq!(s.timing.participants, 130);
        assert_eq!(s.rating.agent.sigma, 0.2);
        let t = s.target_set();
        assert_eq!(t.targets[0].emotion, Emotion::Sadness);
        assert!(t.targets[0].covariance.is_none());
    }

    #[test]
    fn unknown_keys_and_bad_policies_are_rejected() {
        assert!(Scenario::parse("sed = 3").is_err());
        assert!(Scenario::parse("[policy]\ntemperature = -1.0").is_err());
    }
}
