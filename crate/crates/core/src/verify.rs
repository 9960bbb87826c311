//! Two-stage environment verification: self-reflection by the provider, then
//! execution of the golden path against a live instance.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::envpool::{EnvPool, PoolError};
use crate::reward::classify_success;
use crate::rollout::{Session, StepConfig, StepError};
use crate::synthesis::prompts::{parse_yes_no, reflection_request};
use crate::synthesis::{complete_with_retries, EnvBundle, FailureStage, PromptRequest, Provider, ProviderError, Stage};

/// Milestones compare with this slack to absorb decimal round-trips.
pub const MILESTONE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyFailure {
    None,
    ReflectionRejected,
    SpawnFailed,
    ActionFailed,
    MilestoneMissed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub step_index: usize,
    pub expected: f64,
    pub observed: f64,
    pub met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub static_passed: bool,
    pub dynamic_passed: bool,
    pub milestones: Vec<Milestone>,
    pub failure_stage: VerifyFailure,
    /// Step at which the dynamic test failed, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl VerificationReport {
    fn new() -> Self {
        Self {
            static_passed: false,
            dynamic_passed: false,
            milestones: Vec::new(),
            failure_stage: VerifyFailure::None,
            failed_step: None,
            detail: None,
        }
    }

    pub fn final_observed(&self) -> Option<f64> {
        self.milestones.last().map(|m| m.observed)
    }

    /// Pipeline failure stage corresponding to this report, if it failed.
    pub fn pipeline_failure(&self) -> Option<FailureStage> {
        match self.failure_stage {
            VerifyFailure::None if self.dynamic_passed => None,
            VerifyFailure::ReflectionRejected => Some(FailureStage::ReflectionRejected),
            _ => Some(FailureStage::DynamicTestFailed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub action_timeout_s: f64,
    pub total_timeout_s: f64,
    /// Extra attempts after a transient provider error during reflection.
    pub provider_retries: u32,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { action_timeout_s: 5.0, total_timeout_s: 60.0, provider_retries: 2 }
    }
}

fn files_as_text(bundle: &EnvBundle) -> BTreeMap<String, String> {
    bundle.files.iter().map(|(p, b)| (p.clone(), String::from_utf8_lossy(b).into_owned())).collect()
}

/// Asks the provider whether the bundle's reward logic is correct. Only a
/// plain "yes" (any case, surrounding punctuation ignored) passes.
pub fn static_reflect(bundle: &EnvBundle, provider: &dyn Provider, cfg: &VerifyConfig) -> Result<bool, ProviderError> {
    let request = PromptRequest {
        stage: Stage::Reflection,
        task_id: bundle.task_id.clone(),
        attempt: bundle.attempt,
        prompt: reflection_request(&bundle.instruction, &files_as_text(bundle)),
        attachments: Vec::new(),
        path: None,
        context: None,
    };
    let answer = complete_with_retries(provider, &request, cfg.provider_retries)?;
    let verdict = parse_yes_no(&answer.text);
    if verdict.is_none() {
        log::warn!("{}: ambiguous reflection answer {:?}", bundle.task_id, answer.text);
    }
    Ok(verdict == Some(true))
}

/// Executes the golden path on a freshly leased instance, checking each
/// action's reachability and the cumulative reward after it.
pub fn run_golden_path(bundle: &EnvBundle, pool: &EnvPool, cfg: &VerifyConfig) -> VerificationReport {
    let mut report = VerificationReport::new();
    report.static_passed = true;
    let handle = match pool.lease(bundle) {
        Ok(h) => h,
        Err(e) => {
            report.failure_stage = VerifyFailure::SpawnFailed;
            report.detail = Some(match e {
                PoolError::SpawnFailed { reason, stderr, .. } => {
                    let tail: Vec<&str> = stderr.iter().rev().take(5).rev().map(String::as_str).collect();
                    format!("{reason}; stderr: {}", tail.join(" | "))
                }
                other => other.to_string(),
            });
            return report;
        }
    };
    let step_cfg =
        StepConfig { action_timeout: Duration::from_secs_f64(cfg.action_timeout_s), ..StepConfig::default() };
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.total_timeout_s);
    let mut session = Session::new(&handle, step_cfg);
    let mut current = 0.0;
    for (i, golden) in bundle.golden_path.steps().iter().enumerate() {
        if Instant::now() >= deadline {
            report.failure_stage = VerifyFailure::MilestoneMissed;
            report.failed_step = Some(i);
            report.detail = Some(format!("dynamic test exceeded {} s", cfg.total_timeout_s));
            break;
        }
        let (reachable, events, why) = match session.step(&golden.action) {
            Ok(out) => {
                let status = out.observation.as_ref().map(|o| o.status);
                let ok = out.observation.as_ref().is_none_or(|o| o.is_success());
                (ok, out.events, status.filter(|_| !ok).map(|s| format!("{} returned HTTP {s}", golden.action)))
            }
            Err(StepError::Transport { message, events, .. }) => (false, events, Some(message)),
            Err(e) => (false, Default::default(), Some(e.to_string())),
        };
        if let Some(last) = events.events.last() {
            current = last.reward;
        }
        let met = current >= golden.expect_reward_at_least - MILESTONE_EPS;
        report.milestones.push(Milestone {
            step_index: i,
            expected: golden.expect_reward_at_least,
            observed: current,
            met,
        });
        if !reachable {
            report.failure_stage = VerifyFailure::ActionFailed;
            report.failed_step = Some(i);
            report.detail = why;
            break;
        }
        if !met && report.failure_stage == VerifyFailure::None {
            report.failure_stage = VerifyFailure::MilestoneMissed;
            report.failed_step = Some(i);
            report.detail = Some(format!(
                "step {i} ({}) expected at least {} but observed {current}",
                golden.action, golden.expect_reward_at_least
            ));
        }
    }
    // No restart needed: the instance is discarded.
    let _ = pool.stop(&handle);
    report.dynamic_passed = report.failure_stage == VerifyFailure::None
        && report.milestones.len() == bundle.golden_path.len()
        && classify_success(current);
    if !report.dynamic_passed && report.failure_stage == VerifyFailure::None {
        report.failure_stage = VerifyFailure::MilestoneMissed;
        report.failed_step = Some(report.milestones.len().saturating_sub(1));
    }
    report
}

/// Static reflection, then (only if it passes) the golden-path run. Updates
/// `bundle.verified` and `bundle.failure_stage`.
pub fn verify_bundle(
    bundle: &mut EnvBundle,
    provider: &dyn Provider,
    pool: &EnvPool,
    cfg: &VerifyConfig,
) -> Result<VerificationReport, ProviderError> {
    let report = if static_reflect(bundle, provider, cfg)? {
        run_golden_path(bundle, pool, cfg)
    } else {
        VerificationReport { failure_stage: VerifyFailure::ReflectionRejected, ..VerificationReport::new() }
    };
    bundle.verified = report.dynamic_passed;
    bundle.failure_stage = report.pipeline_failure();
    Ok(report)
}
