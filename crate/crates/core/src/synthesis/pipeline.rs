//! Meta-prompt → manifest → files → golden path → verification, retried up
//! to K times. Failed attempts are not fed back into later ones.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bundle::{EnvBundle, FailureStage, GoldenPathScript, GoldenStep, DEFAULT_RUN_COMMAND};
use super::manifest::FileManifest;
use super::prompts::{self, EXPLANATION_TOKEN, REWARD_TOKEN};
use super::provider::{complete_with_retries, strip_code_fence, PromptRequest, Provider, ProviderError, Stage};
use crate::envpool::EnvPool;
use crate::rollout::ActionCatalog;
use crate::trace::{build_context, ConstraintSet, SynthesisContext, TaskSpec, Trace, TraceError};
use crate::verify::{verify_bundle, VerificationReport, VerifyConfig};
use crate::AssertionSpec;

pub const DEFAULT_K: u32 = 5;
pub const DEFAULT_HEALTH_PATH: &str = "/healthz";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Maximum attempts per task.
    pub k: u32,
    pub constraints: ConstraintSet,
    /// Extra tries after a transient provider error, per call.
    pub provider_retries: u32,
    pub verify: VerifyConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            constraints: ConstraintSet::default(),
            provider_retries: 2,
            verify: VerifyConfig::default(),
        }
    }
}

/// A validated, task-specific system prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemPrompt(pub String);

impl SystemPrompt {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Why a stage produced nothing usable.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    /// `None` when the attempt produced a verified bundle.
    pub failure_stage: Option<FailureStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub task_id: String,
    pub attempts: Vec<AttemptRecord>,
}

impl AttemptLog {
    /// Attempt number that produced a verified bundle, if any.
    pub fn succeeded_at(&self) -> Option<u32> {
        self.attempts.iter().find(|a| a.failure_stage.is_none()).map(|a| a.attempt)
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error(transparent)]
    Context(#[from] TraceError),
    #[error("provider failed hard during attempt {}: {error}", log.attempts.len() + 1)]
    Provider { error: ProviderError, log: AttemptLog },
    #[error("no attempt for {} produced a complete bundle", .0.task_id)]
    NoBundle(AttemptLog),
}

/// What the golden-path stage returns besides the script itself.
#[derive(Deserialize)]
struct GoldenStageJson {
    steps: Vec<GoldenStep>,
    #[serde(default)]
    reward_spec: Option<AssertionSpec>,
    #[serde(default)]
    actions: Option<ActionCatalog>,
    /// Launch command, when the generated app needs something specific.
    #[serde(default)]
    run: Option<String>,
}

pub struct GoldenStage {
    pub script: GoldenPathScript,
    pub reward_spec: AssertionSpec,
    pub actions: Option<ActionCatalog>,
    pub run: Option<String>,
}

/// Stage calls for one synthesis attempt.
pub struct Attempt<'a> {
    pub ctx: &'a SynthesisContext,
    pub provider: &'a dyn Provider,
    pub number: u32,
    pub retries: u32,
}

impl Attempt<'_> {
    fn ask(&self, stage: Stage, prompt: String, path: Option<&str>) -> Result<String, ProviderError> {
        let request = PromptRequest {
            stage,
            task_id: self.ctx.task_id.clone(),
            attempt: self.number,
            prompt,
            attachments: self.ctx.screenshot_refs(),
            path: path.map(str::to_owned),
            context: Some(self.ctx.clone()),
        };
        Ok(complete_with_retries(self.provider, &request, self.retries)?.text)
    }

    pub fn meta_prompt(&self) -> Result<SystemPrompt, StageError> {
        let text = self.ask(Stage::MetaPrompt, prompts::meta_request(self.ctx), None)?;
        prompts::validate_system_prompt(&text, &self.ctx.constraints).map_err(StageError::Invalid)?;
        Ok(SystemPrompt(text))
    }

    pub fn plan_manifest(&self, prompt: &SystemPrompt) -> Result<FileManifest, StageError> {
        let text = self.ask(Stage::Manifest, prompts::manifest_request(prompt.as_str()), None)?;
        serde_json::from_str(strip_code_fence(&text)).map_err(|e| StageError::Invalid(format!("manifest: {e}")))
    }

    /// `prior` must hold exactly the files before `path` in manifest order.
    pub fn generate_file(
        &self,
        prompt: &SystemPrompt,
        manifest: &FileManifest,
        path: &str,
        prior: &BTreeMap<String, String>,
    ) -> Result<String, StageError> {
        let pos =
            manifest.position(path).ok_or_else(|| StageError::Invalid(format!("{path} is not in the manifest")))?;
        let expected: Vec<&String> = manifest.entries()[..pos].iter().collect();
        if prior.len() != expected.len() || expected.iter().any(|p| !prior.contains_key(*p)) {
            return Err(StageError::Invalid(format!("prior files do not match the manifest prefix before {path}")));
        }
        let request = prompts::file_request(prompt.as_str(), manifest.entries(), path, prior);
        let raw = self.ask(Stage::File, request, Some(path))?;
        let content = strip_code_fence(&raw).to_string();
        if content.trim().is_empty() {
            return Err(StageError::Invalid(format!("{path}: empty file")));
        }
        if path == manifest.server_entry() {
            for token in [REWARD_TOKEN, EXPLANATION_TOKEN] {
                if !content.contains(token) {
                    return Err(StageError::Invalid(format!("{path}: server never prints {token}")));
                }
            }
        }
        Ok(content)
    }

    pub fn golden_path(&self, files: &BTreeMap<String, String>) -> Result<GoldenStage, StageError> {
        let text =
            self.ask(Stage::GoldenPath, prompts::golden_path_request(&self.ctx.task_instruction, files), None)?;
        let raw: GoldenStageJson = serde_json::from_str(strip_code_fence(&text))
            .map_err(|e| StageError::Invalid(format!("golden path: {e}")))?;
        let script = GoldenPathScript::new(raw.steps).map_err(|e| StageError::Invalid(format!("golden path: {e}")))?;
        let reward_spec = match raw.reward_spec {
            Some(s) => s,
            None => AssertionSpec::uniform(["task_complete"]).expect("single assertion"),
        };
        Ok(GoldenStage { script, reward_spec, actions: raw.actions, run: raw.run })
    }

    /// Generation stages only; returns the unverified bundle.
    pub fn generate(&self) -> Result<EnvBundle, (FailureStage, StageError)> {
        let prompt = self.meta_prompt().map_err(|e| (FailureStage::PromptInvalid, e))?;
        let manifest = self.plan_manifest(&prompt).map_err(|e| (FailureStage::ManifestInvalid, e))?;
        let mut texts = BTreeMap::new();
        for path in manifest.entries() {
            let content =
                self.generate_file(&prompt, &manifest, path, &texts).map_err(|e| (FailureStage::FileInvalid, e))?;
            texts.insert(path.clone(), content);
        }
        let golden = self.golden_path(&texts).map_err(|e| (FailureStage::FileInvalid, e))?;
        let files = texts.into_iter().map(|(p, c)| (p, c.into_bytes())).collect();
        Ok(EnvBundle {
            task_id: self.ctx.task_id.clone(),
            instruction: self.ctx.task_instruction.clone(),
            manifest,
            files,
            golden_path: golden.script,
            reward_spec: golden.reward_spec,
            actions: golden.actions,
            attempt: self.number,
            verified: false,
            provider_identity: self.provider.identity(),
            failure_stage: None,
            run: golden.run.unwrap_or_else(|| DEFAULT_RUN_COMMAND.to_string()),
            health_path: Some(DEFAULT_HEALTH_PATH.to_string()),
        })
    }
}

/// Runs up to `cfg.k` attempts. Returns the first verified bundle, or the last
/// generated one (unverified) when every attempt fails.
pub fn synthesize_environment(
    task: &TaskSpec,
    trace: &Trace,
    provider: &dyn Provider,
    pool: &EnvPool,
    cfg: &SynthConfig,
) -> Result<(EnvBundle, AttemptLog), SynthError> {
    if cfg.k == 0 {
        return Err(SynthError::Config("k must be at least 1".into()));
    }
    let ctx = build_context(task, trace, &cfg.constraints)?;
    let mut log = AttemptLog { task_id: task.id.clone(), attempts: Vec::new() };
    let mut last: Option<EnvBundle> = None;
    for number in 1..=cfg.k {
        let attempt = Attempt { ctx: &ctx, provider, number, retries: cfg.provider_retries };
        let mut bundle = match attempt.generate() {
            Ok(b) => b,
            Err((_, StageError::Provider(error @ ProviderError::Unreachable(_)))) => {
                return Err(SynthError::Provider { error, log });
            }
            Err((stage, e)) => {
                log::debug!("{} attempt {number}: {stage}: {e}", task.id);
                log.attempts.push(AttemptRecord {
                    attempt: number,
                    failure_stage: Some(stage),
                    reason: Some(e.to_string()),
                    verification: None,
                });
                continue;
            }
        };
        let record = match verify_bundle(&mut bundle, provider, pool, &cfg.verify) {
            Ok(report) => AttemptRecord {
                attempt: number,
                failure_stage: report.pipeline_failure(),
                reason: report.detail.clone(),
                verification: Some(report),
            },
            Err(error @ ProviderError::Unreachable(_)) => return Err(SynthError::Provider { error, log }),
            Err(e) => {
                bundle.verified = false;
                bundle.failure_stage = Some(FailureStage::ReflectionRejected);
                AttemptRecord {
                    attempt: number,
                    failure_stage: Some(FailureStage::ReflectionRejected),
                    reason: Some(e.to_string()),
                    verification: None,
                }
            }
        };
        let passed = record.failure_stage.is_none();
        log.attempts.push(record);
        if passed {
            return Ok((bundle, log));
        }
        last = Some(bundle);
    }
    match last {
        Some(bundle) => Ok((bundle, log)),
        None => Err(SynthError::NoBundle(log)),
    }
}

pub type JobResult = Result<(EnvBundle, AttemptLog), SynthError>;

/// Synthesizes many tasks on `workers` threads; results keep input order.
pub fn synthesize_all(
    jobs: &[(TaskSpec, Trace)],
    provider: &dyn Provider,
    pool: &EnvPool,
    cfg: &SynthConfig,
    workers: usize,
) -> Vec<JobResult> {
    let results: Mutex<Vec<Option<JobResult>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some((task, trace)) = jobs.get(j) else { break };
                let r = synthesize_environment(task, trace, provider, pool, cfg);
                results.lock().unwrap()[j] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}
