use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::manifest::FileManifest;
use crate::fsutil::write_json_atomic;
use crate::rollout::{ActionCatalog, EnvAction, EnvActionKind};
use crate::AssertionSpec;

pub const DEFAULT_RUN_COMMAND: &str = "python3 app.py";

/// Final golden-path step must expect at least `1 - GOLDEN_EPS`.
pub const GOLDEN_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid {what} in {path}: {message}")]
    Invalid { path: PathBuf, what: &'static str, message: String },
    #[error("bundle inconsistent: {0}")]
    Inconsistent(String),
    #[error("no bundle found under {0}")]
    NotFound(PathBuf),
}

/// Why a synthesis attempt was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    PromptInvalid,
    ManifestInvalid,
    FileInvalid,
    ReflectionRejected,
    DynamicTestFailed,
}

impl FailureStage {
    pub const ALL: [FailureStage; 5] = [
        FailureStage::PromptInvalid,
        FailureStage::ManifestInvalid,
        FailureStage::FileInvalid,
        FailureStage::ReflectionRejected,
        FailureStage::DynamicTestFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureStage::PromptInvalid => "prompt_invalid",
            FailureStage::ManifestInvalid => "manifest_invalid",
            FailureStage::FileInvalid => "file_invalid",
            FailureStage::ReflectionRejected => "reflection_rejected",
            FailureStage::DynamicTestFailed => "dynamic_test_failed",
        }
    }
}

impl std::fmt::Display for FailureStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenStep {
    pub action: EnvAction,
    pub expect_reward_at_least: f64,
}

/// Ideal action sequence completing the task, with reward milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GoldenJson", into = "GoldenJson")]
pub struct GoldenPathScript {
    steps: Vec<GoldenStep>,
}

#[derive(Serialize, Deserialize)]
struct GoldenJson {
    steps: Vec<GoldenStep>,
}

impl TryFrom<GoldenJson> for GoldenPathScript {
    type Error = String;

    fn try_from(raw: GoldenJson) -> Result<Self, String> {
        GoldenPathScript::new(raw.steps)
    }
}

impl From<GoldenPathScript> for GoldenJson {
    fn from(g: GoldenPathScript) -> Self {
        GoldenJson { steps: g.steps }
    }
}

impl GoldenPathScript {
    pub fn new(steps: Vec<GoldenStep>) -> Result<Self, String> {
        if steps.is_empty() {
            return Err("golden path is empty".into());
        }
        let mut prev = 0.0f64;
        for (i, s) in steps.iter().enumerate() {
            s.action.validate().map_err(|e| format!("step {i}: {e}"))?;
            if s.action.kind == EnvActionKind::Stop {
                return Err(format!("step {i}: stop is not a scripted action"));
            }
            let e = s.expect_reward_at_least;
            if !(0.0..=1.0).contains(&e) {
                return Err(format!("step {i}: expectation {e} outside [0, 1]"));
            }
            if e < prev {
                return Err(format!("step {i}: expectation {e} decreases from {prev}"));
            }
            prev = e;
        }
        if prev < 1.0 - GOLDEN_EPS {
            return Err(format!("final expectation {prev} does not reach 1.0"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[GoldenStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &EnvAction> {
        self.steps.iter().map(|s| &s.action)
    }
}

/// A synthesized (or hand-written) environment and its verification state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBundle {
    pub task_id: String,
    pub instruction: String,
    pub manifest: FileManifest,
    pub files: BTreeMap<String, Vec<u8>>,
    pub golden_path: GoldenPathScript,
    pub reward_spec: AssertionSpec,
    pub actions: Option<ActionCatalog>,
    pub attempt: u32,
    pub verified: bool,
    pub provider_identity: String,
    pub failure_stage: Option<FailureStage>,
    /// Launch command, run from the bundle's file root.
    pub run: String,
    pub health_path: Option<String>,
}

/// `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub task_id: String,
    #[serde(default)]
    pub instruction: String,
    pub verified: bool,
    pub attempt: u32,
    pub provider_identity: String,
    pub failure_stage: Option<FailureStage>,
    #[serde(default = "default_run")]
    pub run: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health_path: Option<String>,
}

fn default_run() -> String {
    DEFAULT_RUN_COMMAND.to_string()
}

fn read(path: &Path) -> Result<Vec<u8>, BundleError> {
    std::fs::read(path).map_err(|source| BundleError::Io { path: path.to_path_buf(), source })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<T, BundleError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| BundleError::Invalid {
        path: path.to_path_buf(),
        what,
        message: e.to_string(),
    })
}

impl EnvBundle {
    pub fn check_consistency(&self) -> Result<(), BundleError> {
        let keys: Vec<&str> = self.files.keys().map(String::as_str).collect();
        let mut entries: Vec<&str> = self.manifest.entries().iter().map(String::as_str).collect();
        entries.sort_unstable();
        if keys != entries {
            return Err(BundleError::Inconsistent("file map does not match manifest".into()));
        }
        if self.attempt == 0 {
            return Err(BundleError::Inconsistent("attempt numbers start at 1".into()));
        }
        Ok(())
    }

    pub fn meta(&self) -> BundleMeta {
        BundleMeta {
            task_id: self.task_id.clone(),
            instruction: self.instruction.clone(),
            verified: self.verified,
            attempt: self.attempt,
            provider_identity: self.provider_identity.clone(),
            failure_stage: self.failure_stage,
            run: self.run.clone(),
            health_path: self.health_path.clone(),
        }
    }

    pub fn server_source(&self) -> &[u8] {
        self.files.get(self.manifest.server_entry()).map_or(&[], Vec::as_slice)
    }

    /// Content hash over everything that affects the running process.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.run.as_bytes());
        for (path, bytes) in &self.files {
            h.update((path.len() as u64).to_le_bytes());
            h.update(path.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<bundles_dir>/<task_id>/attempt_<n>`.
    pub fn dir_in(&self, bundles_dir: &Path) -> PathBuf {
        bundles_dir.join(&self.task_id).join(format!("attempt_{}", self.attempt))
    }

    /// Writes the bundle in the standard layout, returning its directory.
    pub fn save(&self, bundles_dir: &Path) -> Result<PathBuf, BundleError> {
        self.check_consistency()?;
        let dir = self.dir_in(bundles_dir);
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BundleError::Io { path, source }
        };
        for (rel, bytes) in &self.files {
            let path = dir.join("files").join(rel);
            crate::fsutil::write_atomic(&path, bytes).map_err(io(&path))?;
        }
        let manifest = dir.join("manifest.json");
        write_json_atomic(&manifest, &self.manifest).map_err(io(&manifest))?;
        let golden = dir.join("golden_path.json");
        write_json_atomic(&golden, &self.golden_path).map_err(io(&golden))?;
        let spec = dir.join("reward_spec.json");
        write_json_atomic(&spec, &self.reward_spec).map_err(io(&spec))?;
        if let Some(actions) = &self.actions {
            let path = dir.join("actions.json");
            write_json_atomic(&path, actions).map_err(io(&path))?;
        }
        let meta = dir.join("meta.json");
        write_json_atomic(&meta, &self.meta()).map_err(io(&meta))?;
        Ok(dir)
    }

    /// Loads one attempt directory.
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let meta: BundleMeta = read_json(&dir.join("meta.json"), "meta.json")?;
        let manifest: FileManifest = read_json(&dir.join("manifest.json"), "manifest.json")?;
        let golden_path: GoldenPathScript = read_json(&dir.join("golden_path.json"), "golden_path.json")?;
        let spec_path = dir.join("reward_spec.json");
        let reward_spec = if spec_path.exists() {
            read_json(&spec_path, "reward_spec.json")?
        } else {
            AssertionSpec::uniform(["task_complete"]).expect("single assertion spec")
        };
        let actions_path = dir.join("actions.json");
        let actions = if actions_path.exists() { Some(read_json(&actions_path, "actions.json")?) } else { None };
        let mut files = BTreeMap::new();
        for rel in manifest.entries() {
            files.insert(rel.clone(), read(&dir.join("files").join(rel))?);
        }
        let bundle = EnvBundle {
            task_id: meta.task_id,
            instruction: meta.instruction,
            manifest,
            files,
            golden_path,
            reward_spec,
            actions,
            attempt: meta.attempt,
            verified: meta.verified,
            provider_identity: meta.provider_identity,
            failure_stage: meta.failure_stage,
            run: meta.run,
            health_path: meta.health_path,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }

    /// Resolves a path that is either an attempt directory or a task directory
    /// (in which case the highest-numbered attempt is used).
    pub fn load_latest(path: &Path) -> Result<Self, BundleError> {
        if path.join("meta.json").exists() {
            return Self::load(path);
        }
        latest_attempt_dir(path).map_or_else(|| Err(BundleError::NotFound(path.to_path_buf())), |d| Self::load(&d))
    }
}

fn latest_attempt_dir(task_dir: &Path) -> Option<PathBuf> {
    std::fs::read_dir(task_dir)
        .ok()?
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: u32 = name.strip_prefix("attempt_")?.parse().ok()?;
            e.path().join("meta.json").exists().then_some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}

/// Loads the latest attempt of every task under `bundles_dir`, sorted by task id.
pub fn load_bundle_tree(bundles_dir: &Path) -> Result<Vec<EnvBundle>, BundleError> {
    let entries =
        std::fs::read_dir(bundles_dir).map_err(|source| BundleError::Io { path: bundles_dir.to_path_buf(), source })?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if let Some(latest) = latest_attempt_dir(&d) {
            out.push(EnvBundle::load(&latest)?);
        }
    }
    Ok(out)
}
