use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use envforge::analytics::kv_table;
use envforge::envpool::EnvPool;
use envforge::synthesis::{synthesize_all, AttemptLog, FailureStage, MockBehavior, SynthError};
use envforge::trace::{ingest_traces, TaskSpec, Trace};
use envforge::{write_atomic, write_json_atomic};

use crate::config::RunConfig;
use crate::{CliError, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Tasks, one JSON object per line: {"id", "instruction", "mock"?}.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Recorded traces (JSONL), matched to tasks by task id.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Attempts per task.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
}

/// One line of the tasks file. `mock` scripts the mock provider for this task.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskLine {
    id: String,
    instruction: String,
    #[serde(default)]
    mock: Option<MockBehavior>,
}

#[derive(Serialize)]
struct TaskSummary {
    task_id: String,
    attempt: Option<u32>,
    verified: bool,
    failure_stage: Option<FailureStage>,
    path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct SynthSummary {
    provider: String,
    seed: u64,
    k: u32,
    bundles: usize,
    verified: usize,
    tasks: Vec<TaskSummary>,
}

fn read_tasks(path: &PathBuf) -> Result<Vec<TaskLine>, CliError> {
    let usage = |e: String| CliError::Usage(format!("tasks {}: {e}", path.display()));
    let file = File::open(path).map_err(|e| usage(e.to_string()))?;
    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| usage(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TaskLine = serde_json::from_str(&line).map_err(|e| usage(format!("line {}: {e}", n + 1)))?;
        if !seen.insert(t.id.clone()) {
            return Err(usage(format!("duplicate task id {}", t.id)));
        }
        tasks.push(t);
    }
    if tasks.is_empty() {
        return Err(usage("no tasks".into()));
    }
    Ok(tasks)
}

fn last_stage(log: &AttemptLog) -> Option<FailureStage> {
    log.attempts.last().and_then(|a| a.failure_stage)
}

pub fn run(cfg: &RunConfig, args: Args) -> Result<Output, CliError> {
    let tasks_path = args.tasks.or(cfg.tasks_path.clone()).ok_or(CliError::Usage("--tasks is required".into()))?;
    let traces_path = args.traces.or(cfg.traces_path.clone()).ok_or(CliError::Usage("--traces is required".into()))?;
    let tasks = read_tasks(&tasks_path)?;
    let traces =
        File::open(&traces_path).map_err(|e| CliError::Usage(format!("traces {}: {e}", traces_path.display())))?;
    let (traces, ingest) = ingest_traces(BufReader::new(traces))
        .map_err(|e| CliError::Usage(format!("traces {}: {e}", traces_path.display())))?;
    for issue in &ingest.errors {
        log::warn!("skipped trace line {}: {}", issue.line_no, issue.message);
    }

    let mut synth_cfg = cfg.synth.clone();
    if let Some(k) = args.k {
        synth_cfg.k = k;
    }
    if synth_cfg.k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let workers = args.workers.unwrap_or(cfg.workers).max(1);
    let mocks: Vec<(String, MockBehavior)> =
        tasks.iter().filter_map(|t| t.mock.clone().map(|m| (t.id.clone(), m))).collect();
    let provider = cfg.provider(&mocks)?;
    let pool = EnvPool::new(cfg.pool.clone()).map_err(|e| CliError::Usage(e.to_string()))?;

    let mut summaries = Vec::new();
    let mut jobs: Vec<(TaskSpec, Trace)> = Vec::new();
    for t in &tasks {
        match traces.get(&t.id) {
            Some(trace) => {
                jobs.push((TaskSpec { id: t.id.clone(), instruction: t.instruction.clone() }, trace.clone()))
            }
            None => summaries.push(TaskSummary {
                task_id: t.id.clone(),
                attempt: None,
                verified: false,
                failure_stage: None,
                path: None,
                error: Some("no trace recorded for this task".into()),
            }),
        }
    }

    let results = synthesize_all(&jobs, provider.as_ref(), &pool, &synth_cfg, workers);
    pool.shutdown();
    let mut logs = Vec::new();
    for ((task, _), result) in jobs.iter().zip(results) {
        let summary = match result {
            Ok((bundle, log)) => {
                let path = bundle.save(&cfg.bundles_dir).map_err(|e| CliError::Failed(e.to_string()))?;
                if !bundle.verified {
                    log::warn!("{}: no attempt verified; kept attempt {} unverified", task.id, bundle.attempt);
                }
                logs.push(log);
                TaskSummary {
                    task_id: task.id.clone(),
                    attempt: Some(bundle.attempt),
                    verified: bundle.verified,
                    failure_stage: bundle.failure_stage,
                    path: Some(path),
                    error: None,
                }
            }
            Err(SynthError::NoBundle(log)) => {
                let s = TaskSummary {
                    task_id: task.id.clone(),
                    attempt: None,
                    verified: false,
                    failure_stage: last_stage(&log),
                    path: None,
                    error: Some("no attempt produced a complete bundle".into()),
                };
                logs.push(log);
                s
            }
            Err(SynthError::Provider { error, log }) => {
                let s = TaskSummary {
                    task_id: task.id.clone(),
                    attempt: None,
                    verified: false,
                    failure_stage: last_stage(&log),
                    path: None,
                    error: Some(error.to_string()),
                };
                logs.push(log);
                s
            }
            Err(e) => TaskSummary {
                task_id: task.id.clone(),
                attempt: None,
                verified: false,
                failure_stage: None,
                path: None,
                error: Some(e.to_string()),
            },
        };
        summaries.push(summary);
    }
    let order: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    summaries.sort_by_key(|s| order.iter().position(|id| *id == s.task_id));

    let mut jsonl = String::new();
    for log in &logs {
        jsonl += &serde_json::to_string(log).expect("log serializes");
        jsonl.push('\n');
    }
    let fail = |e: std::io::Error| CliError::Failed(e.to_string());
    write_atomic(&cfg.bundles_dir.join("attempt_logs.jsonl"), jsonl.as_bytes()).map_err(fail)?;

    let summary = SynthSummary {
        provider: provider.identity(),
        seed: cfg.seed,
        k: synth_cfg.k,
        bundles: summaries.iter().filter(|s| s.path.is_some()).count(),
        verified: summaries.iter().filter(|s| s.verified).count(),
        tasks: summaries,
    };
    write_json_atomic(&cfg.bundles_dir.join("synth_summary.json"), &summary).map_err(fail)?;

    let mut table = String::new();
    for s in &summary.tasks {
        let stage = s.failure_stage.map_or("-", FailureStage::as_str);
        let attempt = s.attempt.map_or("-".to_string(), |a| a.to_string());
        table += &format!("{}\tattempt={attempt}\tverified={}\tfailure_stage={stage}\n", s.task_id, s.verified);
    }
    table += &kv_table(&[
        ("bundles".into(), format!("{}/{}", summary.bundles, summary.tasks.len())),
        ("verified".into(), summary.verified.to_string()),
    ]);
    let ok = summary.bundles > 0;
    Ok(Output::new(&summary, table, ok))
}
