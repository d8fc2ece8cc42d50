//! Simulated participants that drive the experiment without humans, rating
//! agents for the validation phase, and an exact Gibbs oracle for small
//! lattices.

pub mod agent;
pub mod error;
pub mod oracle;
pub mod scenario;
pub mod sim;
pub mod target;

pub use agent::{agent_choose, choice_distribution, AgentMode, AgentPolicy, RatingAgent};
pub use error::{Result, SimError};
pub use oracle::{gibbs_kernel, gibbs_oracle_stationary, lattice_target, total_variation};
pub use target::{conditional_slice_probs, default_targets, CompiledTarget, EmotionTarget, TargetSet};
pub use sim::{run_simulation, run_validation, simulate, RatingSettings, SimStats, Timing, ValidationStats, SIM_EPOCH};
pub use scenario::Scenario;
