//! Deterministic template-based provider.
//!
//! Every task is instantiated as a "slots" app: one selection form per value
//! the recorded trace entered, each padded with distractor options. Reward is
//! the weighted share of slots holding the correct value. Failures can be
//! injected per task and attempt to exercise every pipeline stage.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::bundle::FailureStage;
use super::prompts::{self, constraint_clauses};
use super::provider::{Capabilities, PromptRequest, PromptResponse, Provider, ProviderError, Stage};
use crate::rollout::{ActionCatalog, EnvAction};
use crate::trace::{ActionKind, SynthesisContext};
use crate::AssertionSpec;

const APP_TEMPLATE: &str = include_str!("template/app.py");
const INDEX_TEMPLATE: &str = include_str!("template/index.html");
const STYLE_TEMPLATE: &str = include_str!("template/style.css");

pub const MOCK_MANIFEST: [&str; 3] = ["app.py", "templates/index.html", "static/style.css"];

const DISTRACTOR_POOL: &[&str] = &[
    "Amber", "Birch", "Cedar", "Delta", "Ember", "Fjord", "Granite", "Harbor", "Indigo", "Juniper", "Kestrel",
    "Lagoon", "Meadow", "Nimbus", "Orchid", "Pebble", "Quartz", "Raven", "Sierra", "Tundra", "Umber", "Violet",
    "Willow", "Zephyr",
];

/// Outcome of one scripted attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedOutcome {
    Pass,
    PromptInvalid,
    ManifestInvalid,
    FileInvalid,
    ReflectionRejected,
    DynamicTestFailed,
}

impl ScriptedOutcome {
    pub fn failure(self) -> Option<FailureStage> {
        match self {
            Self::Pass => None,
            Self::PromptInvalid => Some(FailureStage::PromptInvalid),
            Self::ManifestInvalid => Some(FailureStage::ManifestInvalid),
            Self::FileInvalid => Some(FailureStage::FileInvalid),
            Self::ReflectionRejected => Some(FailureStage::ReflectionRejected),
            Self::DynamicTestFailed => Some(FailureStage::DynamicTestFailed),
        }
    }
}

/// How the mock behaves for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MockBehavior {
    #[default]
    Succeed,
    /// Outcome per attempt; attempts past the end of the script pass.
    Script(Vec<ScriptedOutcome>),
    /// Each attempt independently passes with probability `p`, otherwise
    /// fails at `fail_stage`.
    Bernoulli { p: f64, fail_stage: FailureStage },
}

#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    seed: u64,
    default: MockBehavior,
    per_task: BTreeMap<String, MockBehavior>,
    reflection_answer: Option<String>,
}

fn hash_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn sanitize_value(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '\'' | '"' | '<' | '>' | '&' | '\n' | '\r'))
        .collect::<String>()
        .trim()
        .to_string()
}

fn slot_name(s: &str) -> String {
    let name: String =
        s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    let name = name.trim_matches('_').to_string();
    if name.is_empty() {
        "field".into()
    } else {
        name
    }
}

/// One selection point of the generated app.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slot {
    pub name: String,
    pub label: String,
    pub answer: String,
    pub options: Vec<String>,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn with_default(mut self, behavior: MockBehavior) -> Self {
        self.default = behavior;
        self
    }

    pub fn with_task(mut self, task_id: impl Into<String>, behavior: MockBehavior) -> Self {
        self.per_task.insert(task_id.into(), behavior);
        self
    }

    /// Replaces the self-reflection answer for every task.
    pub fn with_reflection_answer(mut self, answer: impl Into<String>) -> Self {
        self.reflection_answer = Some(answer.into());
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Failure injected for `(task, attempt)`, if any.
    pub fn outcome(&self, task_id: &str, attempt: u32) -> Option<FailureStage> {
        match self.per_task.get(task_id).unwrap_or(&self.default) {
            MockBehavior::Succeed => None,
            MockBehavior::Script(s) => s.get(attempt as usize - 1).and_then(|o| o.failure()),
            MockBehavior::Bernoulli { p, fail_stage } => {
                let mut rng = ChaCha8Rng::seed_from_u64(hash_u64(&[
                    &self.seed.to_le_bytes(),
                    task_id.as_bytes(),
                    &attempt.to_le_bytes(),
                ]));
                (rng.gen::<f64>() >= *p).then_some(*fail_stage)
            }
        }
    }

    fn task_rng(&self, task_id: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(hash_u64(&[&self.seed.to_le_bytes(), task_id.as_bytes(), b"template"]))
    }

    /// Selection points derived from the values the trace entered.
    pub fn slots(&self, ctx: &SynthesisContext) -> Vec<Slot> {
        let mut rng = self.task_rng(&ctx.task_id);
        let mut raw: Vec<(String, String)> = Vec::new();
        for step in &ctx.trace.steps {
            let a = &step.action;
            if !matches!(a.kind, ActionKind::Submit | ActionKind::TypeText) {
                continue;
            }
            let Some(payload) = a.payload.as_deref().filter(|p| !p.trim().is_empty()) else { continue };
            let (field, value) = match payload.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => (a.target.rsplit('/').find(|s| !s.is_empty()).unwrap_or("field").to_string(), payload.into()),
            };
            let value = sanitize_value(&value.replace('+', " "));
            if !value.is_empty() {
                raw.push((field, value));
            }
        }
        if raw.is_empty() {
            raw.push(("confirm".into(), "Confirm".into()));
        }
        let c = &ctx.constraints;
        let mut taken: BTreeMap<String, usize> = BTreeMap::new();
        raw.into_iter()
            .map(|(field, answer)| {
                let base = slot_name(&field);
                let n = taken.entry(base.clone()).or_insert(0);
                *n += 1;
                let name = if *n == 1 { base } else { format!("{base}_{n}") };
                let k = if c.require_distractors {
                    rng.gen_range(c.min_distractors..=c.max_distractors) as usize
                } else {
                    0
                };
                let pool: Vec<&str> = DISTRACTOR_POOL.iter().copied().filter(|d| *d != answer).collect();
                let mut options: Vec<String> = pool.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect();
                options.push(answer.clone());
                options.shuffle(&mut rng);
                Slot { label: field.replace('_', " "), name, answer, options }
            })
            .collect()
    }

    fn weights(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn app_source(&self, ctx: &SynthesisContext, sabotaged: bool) -> String {
        let slots = self.slots(ctx);
        let config = json!({
            "title": ctx.task_instruction.replace('\'', ""),
            "slots": slots,
            "weights": Self::weights(slots.len()),
            "sabotaged": sabotaged,
        });
        let title: String = ctx.task_instruction.chars().filter(|c| *c != '\n').collect();
        APP_TEMPLATE.replace("__TITLE__", &title).replace("__CONFIG__", &config.to_string())
    }

    fn golden_path(&self, ctx: &SynthesisContext) -> serde_json::Value {
        let slots = self.slots(ctx);
        let n = slots.len();
        let mut steps = vec![json!({"action": EnvAction::navigate("/"), "expect_reward_at_least": 0.0})];
        for (i, s) in slots.iter().enumerate() {
            let cumulative = (i + 1) as f64 / n as f64;
            // The app prints six decimals; expect no more precision than that.
            let expect = if i + 1 == n { 1.0 } else { (cumulative * 1e6).floor() / 1e6 };
            steps.push(json!({
                "action": EnvAction::submit(format!("/select/{}", s.name), format!("value={}", encode(&s.answer))),
                "expect_reward_at_least": expect,
            }));
        }
        let spec =
            AssertionSpec::uniform(slots.iter().map(|s| format!("{}_selected", s.name))).expect("distinct slot ids");
        let mut actions = vec![EnvAction::navigate("/")];
        for s in &slots {
            for o in &s.options {
                actions.push(EnvAction::submit(format!("/select/{}", s.name), format!("value={}", encode(o))));
            }
        }
        // The template only needs the standard library, so skip site-packages.
        json!({"steps": steps, "reward_spec": spec, "actions": ActionCatalog { actions }, "run": "python3 -S app.py"})
    }

    fn meta_prompt(&self, req: &PromptRequest, ctx: &SynthesisContext, fail: bool) -> String {
        let clauses = prompts::constraint_block(&req.prompt)
            .map(str::to_owned)
            .unwrap_or_else(|| constraint_clauses(&ctx.constraints).join("\n"));
        let clauses: Vec<&str> = clauses.lines().filter(|l| !(fail && l.contains(prompts::REWARD_TOKEN))).collect();
        format!(
            "You are a senior full-stack engineer. Build a standalone Python web app that lets a user complete this \
             task: {}.\nKeep only the screens the task needs.\n\nRequirements:\n{}\n",
            ctx.task_instruction,
            clauses.join("\n")
        )
    }
}

fn encode(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

impl Provider for MockProvider {
    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, ProviderError> {
        let fail = self.outcome(&req.task_id, req.attempt);
        if req.stage == Stage::Reflection {
            if let Some(answer) = &self.reflection_answer {
                return Ok(PromptResponse::new(answer.clone()));
            }
            let ok = fail != Some(FailureStage::ReflectionRejected);
            return Ok(PromptResponse::new(if ok { "yes" } else { "no" }));
        }
        let ctx = req
            .context
            .as_ref()
            .ok_or_else(|| ProviderError::Unreachable("mock provider needs the structured task context".into()))?;
        let text = match req.stage {
            Stage::MetaPrompt => self.meta_prompt(req, ctx, fail == Some(FailureStage::PromptInvalid)),
            Stage::Manifest => {
                let mut files: Vec<&str> = MOCK_MANIFEST.to_vec();
                if fail == Some(FailureStage::ManifestInvalid) {
                    files.push("static/logo.png");
                }
                json!({ "files": files }).to_string()
            }
            Stage::File => {
                let w = ctx.constraints.viewport_w.to_string();
                let h = ctx.constraints.viewport_h.to_string();
                match req.path.as_deref() {
                    Some("app.py") if fail == Some(FailureStage::FileInvalid) => String::new(),
                    Some("app.py") => self.app_source(ctx, fail == Some(FailureStage::DynamicTestFailed)),
                    Some("templates/index.html") => {
                        INDEX_TEMPLATE.replace("__VIEWPORT_W__", &w).replace("__VIEWPORT_H__", &h)
                    }
                    Some("static/style.css") => {
                        STYLE_TEMPLATE.replace("__VIEWPORT_W__", &w).replace("__VIEWPORT_H__", &h)
                    }
                    other => return Err(ProviderError::Unreachable(format!("mock has no template for {other:?}"))),
                }
            }
            Stage::GoldenPath => serde_json::to_string_pretty(&self.golden_path(ctx)).expect("json"),
            Stage::Reflection => unreachable!(),
        };
        Ok(PromptResponse::new(text))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { multimodal: false }
    }

    fn identity(&self) -> String {
        format!("mock(seed={})", self.seed)
    }
}
