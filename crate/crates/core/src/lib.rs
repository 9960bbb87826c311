//! Task-conditioned web environment synthesis with code-native rewards,
//! verification, pooled execution, and GRPO rollouts.
//!
//! Numeric cores are generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix them to `f64`.

pub mod analytics;
pub mod envpool;
mod fsutil;
pub mod reward;
pub mod rollout;
pub mod scalar;
pub mod synthesis;
pub mod trace;
pub mod verify;

pub use fsutil::{write_atomic, write_json_atomic};
pub use scalar::Scalar;

pub type AssertionSpec = reward::AssertionSpec<f64>;
pub type Assertion = reward::Assertion<f64>;
pub type TabularSoftmax = rollout::TabularSoftmax<f64>;
pub type ScoredEpisode = rollout::ScoredEpisode<f64>;
