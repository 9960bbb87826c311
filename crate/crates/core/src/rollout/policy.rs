//! Tabular softmax policy indexed by step position, and the
//! advantage-weighted log-likelihood objective it is trained on.

use rand::Rng;
use serde::Serialize;

use crate::scalar::Scalar;

/// One sampled episode: the catalog index chosen at each step, and the
/// group-relative advantage of the episode's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpisode<T> {
    pub actions: Vec<usize>,
    pub advantage: T,
}

/// `logits[t][k]` parameterises the action distribution at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularSoftmax<T> {
    horizon: usize,
    n_actions: usize,
    logits: Vec<T>,
}

impl<T: Scalar> TabularSoftmax<T> {
    /// Uniform policy.
    pub fn new(horizon: usize, n_actions: usize) -> Self {
        assert!(horizon > 0 && n_actions > 0, "empty policy table");
        Self { horizon, n_actions, logits: vec![T::zero(); horizon * n_actions] }
    }

    pub fn from_logits(horizon: usize, n_actions: usize, logits: Vec<T>) -> Self {
        assert_eq!(logits.len(), horizon * n_actions);
        Self { horizon, n_actions, logits }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[T] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.logits
    }

    fn row(&self, t: usize) -> &[T] {
        let t = t.min(self.horizon - 1);
        &self.logits[t * self.n_actions..(t + 1) * self.n_actions]
    }

    /// Action probabilities at step `t` (numerically stable softmax).
    pub fn probs(&self, t: usize) -> Vec<T> {
        let row = self.row(t);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&l| (l - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, t: usize, action: usize) -> T {
        let row = self.row(t);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
        row[action] - lse
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> usize {
        let probs = self.probs(t);
        let u = T::lit(rng.gen::<f64>());
        let mut acc = T::zero();
        for (k, p) in probs.iter().enumerate() {
            acc = acc + *p;
            if u < acc {
                return k;
            }
        }
        self.n_actions - 1
    }

    /// `J = (1/N) Σ_i A_i Σ_t log π(a_{i,t} | t)`.
    pub fn objective(&self, batch: &[ScoredEpisode<T>]) -> T {
        if batch.is_empty() {
            return T::zero();
        }
        let total: T = batch
            .iter()
            .map(|ep| {
                let ll: T = ep.actions.iter().enumerate().map(|(t, &a)| self.log_prob(t, a)).sum();
                ep.advantage * ll
            })
            .sum();
        total / T::lit(batch.len() as f64)
    }

    /// Analytic gradient of [`Self::objective`]:
    /// `∂J/∂θ[t][k] = (1/N) Σ_i A_i (1[a_{i,t} = k] - π_t(k))`.
    pub fn objective_gradient(&self, batch: &[ScoredEpisode<T>]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.logits.len()];
        if batch.is_empty() {
            return grad;
        }
        let probs: Vec<Vec<T>> = (0..self.horizon).map(|t| self.probs(t)).collect();
        for ep in batch {
            if ep.advantage == T::zero() {
                continue;
            }
            for (t, &a) in ep.actions.iter().enumerate() {
                let t = t.min(self.horizon - 1);
                let base = t * self.n_actions;
                for k in 0..self.n_actions {
                    let indicator = if k == a { T::one() } else { T::zero() };
                    grad[base + k] = grad[base + k] + ep.advantage * (indicator - probs[t][k]);
                }
            }
        }
        let n = T::lit(batch.len() as f64);
        grad.iter_mut().for_each(|g| *g = *g / n);
        grad
    }

    /// Gradient ascent step; returns the L2 norm of the applied change.
    pub fn apply(&mut self, grad: &[T], learning_rate: T) -> T {
        let mut sq = T::zero();
        for (p, g) in self.logits.iter_mut().zip(grad) {
            let delta = learning_rate * *g;
            *p = *p + delta;
            sq = sq + delta * delta;
        }
        sq.sqrt()
    }
}
