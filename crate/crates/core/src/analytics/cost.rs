use serde::{Deserialize, Serialize, Serializer};

use crate::scalar::Scalar;

/// Headline epoch cost on real devices that the model is compared against.
pub const HEADLINE_EPOCH_COST_REAL: f64 = 28_000.0;
/// Headline daily cost of 100 concurrent cloud devices.
pub const HEADLINE_DAILY_DEVICE_COST: f64 = 24_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Real,
    Synth,
}

/// Unit costs and durations per regime. Currency amounts are in dollars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel<T> {
    pub verifier_cost_per_trajectory: T,
    pub device_cost_per_minute: T,
    pub synth_verifier_cost: T,
    pub synth_infra_cost: T,
    pub rollout_hours_real: T,
    pub rollout_hours_synth: T,
    pub interaction_s_real: T,
    pub interaction_s_synth: T,
}

impl<T: Scalar> Default for CostModel<T> {
    fn default() -> Self {
        Self {
            verifier_cost_per_trajectory: T::lit(0.005),
            device_cost_per_minute: T::lit(0.17),
            synth_verifier_cost: T::zero(),
            synth_infra_cost: T::zero(),
            rollout_hours_real: T::lit(0.2272),
            rollout_hours_synth: T::lit(0.1013),
            interaction_s_real: T::lit(4.81),
            interaction_s_synth: T::lit(0.42),
        }
    }
}

impl<T: Scalar> CostModel<T> {
    pub fn validate(&self) -> Result<(), String> {
        let costs = [
            ("verifier_cost_per_trajectory", self.verifier_cost_per_trajectory),
            ("device_cost_per_minute", self.device_cost_per_minute),
            ("synth_verifier_cost", self.synth_verifier_cost),
            ("synth_infra_cost", self.synth_infra_cost),
        ];
        for (name, v) in costs {
            if !v.is_finite() || v < T::zero() {
                return Err(format!("{name} must be a non-negative amount, got {v}"));
            }
        }
        let durations = [
            ("rollout_hours_real", self.rollout_hours_real),
            ("rollout_hours_synth", self.rollout_hours_synth),
            ("interaction_s_real", self.interaction_s_real),
            ("interaction_s_synth", self.interaction_s_synth),
        ];
        for (name, v) in durations {
            if !v.is_finite() || v <= T::zero() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    fn rollout_hours(&self, regime: Regime) -> T {
        match regime {
            Regime::Real => self.rollout_hours_real,
            Regime::Synth => self.rollout_hours_synth,
        }
    }

    /// Per-minute infrastructure price for a regime.
    fn minute_cost(&self, regime: Regime) -> T {
        match regime {
            Regime::Real => self.device_cost_per_minute,
            Regime::Synth => self.synth_infra_cost,
        }
    }

    fn verifier_cost(&self, regime: Regime) -> T {
        match regime {
            Regime::Real => self.verifier_cost_per_trajectory,
            Regime::Synth => self.synth_verifier_cost,
        }
    }
}

/// Serialises a currency amount rounded to cents.
fn cents<T: Scalar, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_cents(v.as_f64()))
}

pub fn round_cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport<T: Scalar> {
    pub regime: Regime,
    pub n_envs: u64,
    pub rollouts_per_env: u64,
    pub trajectories: u64,
    #[serde(serialize_with = "cents")]
    pub device_cost: T,
    #[serde(serialize_with = "cents")]
    pub verifier_cost: T,
    #[serde(serialize_with = "cents")]
    pub total: T,
    /// Published figure for this configuration, when one exists.
    pub headline: Option<f64>,
    /// `(total - headline) / headline`.
    pub headline_residual: Option<f64>,
}

/// Cost of one training epoch of `n_envs × rollouts_per_env` trajectories.
pub fn epoch_cost<T: Scalar>(
    model: &CostModel<T>,
    n_envs: u64,
    rollouts_per_env: u64,
    regime: Regime,
) -> CostReport<T> {
    assert!(n_envs >= 1 && rollouts_per_env >= 1, "epoch needs at least one environment and rollout");
    let trajectories = n_envs * rollouts_per_env;
    let n = T::lit(trajectories as f64);
    let device_cost = n * (model.rollout_hours(regime) * T::lit(60.0) * model.minute_cost(regime));
    let verifier_cost = n * model.verifier_cost(regime);
    let total = device_cost + verifier_cost;
    let headline =
        (regime == Regime::Real && n_envs == 1000 && rollouts_per_env == 12).then_some(HEADLINE_EPOCH_COST_REAL);
    CostReport {
        regime,
        n_envs,
        rollouts_per_env,
        trajectories,
        device_cost,
        verifier_cost,
        total,
        headline,
        headline_residual: headline.map(|h| (total.as_f64() - h) / h),
    }
}

/// Price of keeping `n_devices` rented for `hours`.
pub fn concurrent_device_cost<T: Scalar>(model: &CostModel<T>, n_devices: u64, hours: T) -> T {
    assert!(n_devices >= 1 && hours > T::zero(), "need at least one device and positive hours");
    T::lit(n_devices as f64) * hours * T::lit(60.0) * model.device_cost_per_minute
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceCostReport<T: Scalar> {
    pub n_devices: u64,
    pub hours: f64,
    #[serde(serialize_with = "cents")]
    pub total: T,
    pub headline: Option<f64>,
    pub headline_residual: Option<f64>,
}

pub fn device_cost_report<T: Scalar>(model: &CostModel<T>, n_devices: u64, hours: T) -> DeviceCostReport<T> {
    let total = concurrent_device_cost(model, n_devices, hours);
    let headline = (n_devices == 100 && hours.as_f64() == 24.0).then_some(HEADLINE_DAILY_DEVICE_COST);
    DeviceCostReport {
        n_devices,
        hours: hours.as_f64(),
        total,
        headline,
        headline_residual: headline.map(|h| (total.as_f64() - h) / h),
    }
}
