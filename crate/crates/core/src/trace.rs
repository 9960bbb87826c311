//! Interaction traces: ingestion, length clipping, and assembly of the
//! synthesis context handed to the code model.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("no valid traces in input ({} line errors)", .0.errors.len())]
    Empty(IngestReport),
    #[error("reading trace source: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace task_id `{trace}` does not match task `{task}`")]
    TaskMismatch { task: String, trace: String },
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("invalid constraints: {0}")]
    Constraints(String),
    #[error("max_steps must be at least 1")]
    ZeroClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    TypeText,
    Scroll,
    Navigate,
    Submit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    pub target: String,
    #[serde(default)]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    #[serde(rename = "i")]
    pub index: u32,
    /// Opaque asset reference; never opened by this crate.
    #[serde(rename = "screenshot")]
    pub screenshot_ref: String,
    pub action: ActionRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub task_id: String,
    /// Outcome reported by the collecting agent. Failed traces are still
    /// useful grounding and are kept.
    pub succeeded: bool,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn validate(&self) -> Result<(), String> {
        if self.task_id.is_empty() {
            return Err("task_id is empty".into());
        }
        if self.steps.is_empty() {
            return Err("trace has no steps".into());
        }
        for (expected, step) in self.steps.iter().enumerate() {
            if step.index as usize != expected {
                return Err(format!("step index {} where {expected} expected", step.index));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    v: u32,
    task_id: String,
    succeeded: bool,
    steps: Vec<TraceStep>,
}

/// Traces keyed by unique task id, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceSet {
    traces: Vec<Trace>,
}

impl TraceSet {
    /// Builds a set, rejecting duplicate task ids or invalid traces.
    pub fn new(traces: Vec<Trace>) -> Result<Self, String> {
        let mut seen = HashSet::new();
        for t in &traces {
            t.validate()?;
            if !seen.insert(t.task_id.clone()) {
                return Err(format!("duplicate task_id `{}`", t.task_id));
            }
        }
        Ok(Self { traces })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.task_id == task_id)
    }

    /// One JSON record per line, in the ingestion format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.traces {
            let rec = TraceRecord {
                v: TRACE_SCHEMA_VERSION,
                task_id: t.task_id.clone(),
                succeeded: t.succeeded,
                steps: t.steps.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("trace serialises"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestIssue {
    pub line_no: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub errors: Vec<IngestIssue>,
}

/// Reads line-delimited trace records. Bad lines are reported and skipped.
pub fn ingest_traces<R: BufRead>(source: R) -> Result<(TraceSet, IngestReport), TraceError> {
    let mut report = IngestReport::default();
    let mut traces: Vec<Trace> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<TraceRecord>(&line).map_err(|e| e.to_string()).and_then(|rec| {
            if rec.v != TRACE_SCHEMA_VERSION {
                return Err(format!("unsupported schema version {}", rec.v));
            }
            let trace = Trace { task_id: rec.task_id, succeeded: rec.succeeded, steps: rec.steps };
            trace.validate()?;
            if seen.contains(&trace.task_id) {
                return Err(format!("duplicate task_id `{}`", trace.task_id));
            }
            Ok(trace)
        });
        match parsed {
            Ok(trace) => {
                seen.insert(trace.task_id.clone());
                traces.push(trace);
            }
            Err(message) => report.errors.push(IngestIssue { line_no, message }),
        }
    }
    report.accepted = traces.len();
    if traces.is_empty() {
        return Err(TraceError::Empty(report));
    }
    Ok((TraceSet { traces }, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipStats {
    pub kept: usize,
    pub removed: usize,
    /// Mean step count of the kept traces; 0 when nothing is kept.
    pub mean_length: f64,
}

/// Drops traces with strictly more than `max_steps` steps.
pub fn clip_traces(set: &TraceSet, max_steps: usize) -> Result<(TraceSet, ClipStats), TraceError> {
    if max_steps == 0 {
        return Err(TraceError::ZeroClip);
    }
    let kept: Vec<Trace> = set.traces.iter().filter(|t| t.len() <= max_steps).cloned().collect();
    let lengths: Vec<usize> = kept.iter().map(Trace::len).collect();
    let stats = ClipStats { kept: kept.len(), removed: set.len() - kept.len(), mean_length: mean_len(&lengths) };
    Ok((TraceSet { traces: kept }, stats))
}

pub(crate) fn mean_len(lengths: &[usize]) -> f64 {
    if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
}

/// Hard requirements the meta-prompt imposes on every synthesized app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub viewport_w: u32,
    pub viewport_h: u32,
    pub require_distractors: bool,
    pub min_distractors: u32,
    pub max_distractors: u32,
    pub no_launch_reward: bool,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            viewport_w: 410,
            viewport_h: 858,
            require_distractors: true,
            min_distractors: 3,
            max_distractors: 5,
            no_launch_reward: true,
        }
    }
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.viewport_w == 0 || self.viewport_h == 0 {
            return Err(TraceError::Constraints("viewport dimensions must be positive".into()));
        }
        if self.require_distractors && self.min_distractors > self.max_distractors {
            return Err(TraceError::Constraints(format!(
                "min_distractors {} exceeds max_distractors {}",
                self.min_distractors, self.max_distractors
            )));
        }
        Ok(())
    }

    /// Viewport rendered as `WxH`.
    pub fn viewport(&self) -> String {
        format!("{}x{}", self.viewport_w, self.viewport_h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthesisContext {
    pub task_id: String,
    pub task_instruction: String,
    pub trace: Trace,
    pub constraints: ConstraintSet,
}

impl SynthesisContext {
    pub fn screenshot_refs(&self) -> Vec<String> {
        self.trace.steps.iter().map(|s| s.screenshot_ref.clone()).collect()
    }
}

pub fn build_context(
    task: &TaskSpec,
    trace: &Trace,
    constraints: &ConstraintSet,
) -> Result<SynthesisContext, TraceError> {
    if task.instruction.trim().is_empty() {
        return Err(TraceError::EmptyInstruction);
    }
    if trace.task_id != task.id {
        return Err(TraceError::TaskMismatch { task: task.id.clone(), trace: trace.task_id.clone() });
    }
    constraints.validate()?;
    Ok(SynthesisContext {
        task_id: task.id.clone(),
        task_instruction: task.instruction.clone(),
        trace: trace.clone(),
        constraints: constraints.clone(),
    })
}
