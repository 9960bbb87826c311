//! Code-native reward model: weighted assertions over backend state, and the
//! stdout wire protocol environments use to report progress.

mod assertions;
mod wire;

pub use assertions::{weighted_reward, Assertion, AssertionSpec, StateSnapshot};
pub use wire::{
    classify_success, final_reward, parse_reward_stream, MalformedLine, ParseMode, ParseWarning, RewardEvent,
    RewardParser, RewardStream,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("assertion weights sum to {0}, expected 1.0")]
    WeightSum(f64),
    #[error("assertion `{id}` has weight {weight} outside (0, 1]")]
    WeightRange { id: String, weight: f64 },
    #[error("duplicate assertion id `{0}`")]
    DuplicateId(String),
    #[error("assertion spec is empty")]
    Empty,
    #[error("state references unknown assertion `{0}`")]
    UnknownAssertion(String),
}
