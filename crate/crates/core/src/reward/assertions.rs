use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::RewardError;
use crate::scalar::Scalar;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Assertion<T> {
    pub id: String,
    pub weight: T,
    #[serde(default)]
    pub description: String,
}

/// A set of weighted sub-goal assertions whose weights sum to one.
///
/// Reward for a backend state is the total weight of the assertions the state
/// satisfies, so a half-correct order under two equal sub-goals scores 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec<T>", into = "RawSpec<T>", bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct AssertionSpec<T> {
    assertions: Vec<Assertion<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
struct RawSpec<T> {
    assertions: Vec<Assertion<T>>,
}

impl<T: Scalar> TryFrom<RawSpec<T>> for AssertionSpec<T> {
    type Error = RewardError;

    fn try_from(raw: RawSpec<T>) -> Result<Self, Self::Error> {
        AssertionSpec::new(raw.assertions)
    }
}

impl<T: Scalar> From<AssertionSpec<T>> for RawSpec<T> {
    fn from(spec: AssertionSpec<T>) -> Self {
        RawSpec { assertions: spec.assertions }
    }
}

impl<T: Scalar> AssertionSpec<T> {
    pub fn new(assertions: Vec<Assertion<T>>) -> Result<Self, RewardError> {
        if assertions.is_empty() {
            return Err(RewardError::Empty);
        }
        let mut seen = HashSet::new();
        for a in &assertions {
            if !seen.insert(a.id.as_str()) {
                return Err(RewardError::DuplicateId(a.id.clone()));
            }
            if !(a.weight > T::zero() && a.weight <= T::one()) {
                return Err(RewardError::WeightRange { id: a.id.clone(), weight: a.weight.as_f64() });
            }
        }
        let total: f64 = assertions.iter().map(|a| a.weight.as_f64()).sum();
        // f32 weights cannot meet 1e-9, so widen the tolerance to the type's precision.
        let tol = WEIGHT_SUM_TOL.max(T::epsilon().as_f64() * assertions.len() as f64 * 4.0);
        if (total - 1.0).abs() > tol {
            return Err(RewardError::WeightSum(total));
        }
        Ok(Self { assertions })
    }

    /// Builds a spec from `(id, weight)` pairs with empty descriptions.
    pub fn from_weights<S: Into<String>>(pairs: impl IntoIterator<Item = (S, T)>) -> Result<Self, RewardError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, weight)| Assertion { id: id.into(), weight, description: String::new() })
                .collect(),
        )
    }

    /// Equal weights over the given ids.
    pub fn uniform<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Result<Self, RewardError> {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let w = T::one() / T::lit(ids.len().max(1) as f64);
        Self::from_weights(ids.into_iter().map(|id| (id, w)))
    }

    pub fn assertions(&self) -> &[Assertion<T>] {
        &self.assertions
    }

    pub fn weight_of(&self, id: &str) -> Option<T> {
        self.assertions.iter().find(|a| a.id == id).map(|a| a.weight)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.assertions.iter().map(|a| a.id.as_str())
    }

    /// Snapshot with every assertion satisfied.
    pub fn all_satisfied(&self) -> StateSnapshot {
        StateSnapshot::new(self.ids())
    }
}

/// Set of assertion ids that currently hold in the environment backend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub satisfied: BTreeSet<String>,
}

impl StateSnapshot {
    pub fn new<S: AsRef<str>>(ids: impl IntoIterator<Item = S>) -> Self {
        Self { satisfied: ids.into_iter().map(|s| s.as_ref().to_string()).collect() }
    }

    pub fn with(mut self, id: &str) -> Self {
        self.satisfied.insert(id.to_string());
        self
    }
}

/// Sum of the weights of satisfied assertions, in `[0, 1]`.
pub fn weighted_reward<T: Scalar>(spec: &AssertionSpec<T>, state: &StateSnapshot) -> Result<T, RewardError> {
    let mut total = T::zero();
    for id in &state.satisfied {
        total = total + spec.weight_of(id).ok_or_else(|| RewardError::UnknownAssertion(id.clone()))?;
    }
    Ok(total.min(T::one()).max(T::zero()))
}
