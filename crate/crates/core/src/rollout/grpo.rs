//! Group-relative advantages.

use thiserror::Error;

use crate::scalar::{mean, population_std, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("group advantages need at least 2 rewards, got {0}")]
pub struct GroupSizeError(pub usize);

/// `A_i = (r_i - mean(r)) / (std(r) + 1e-8)` with population std.
///
/// A group whose rewards are all identical carries no signal and gets all-zero
/// advantages.
pub fn grpo_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>, GroupSizeError> {
    if rewards.len() < 2 {
        return Err(GroupSizeError(rewards.len()));
    }
    // Identical rewards have exactly zero spread; checking equality directly
    // avoids a rounding residue in the mean turning into a nonzero std.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    let m = mean(rewards);
    let sd = population_std(rewards);
    let denom = sd + T::advantage_eps();
    Ok(rewards.iter().map(|&r| (r - m) / denom).collect())
}
