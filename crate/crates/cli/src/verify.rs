use std::path::{Path, PathBuf};

use serde::Serialize;

use envforge::analytics::kv_table;
use envforge::envpool::EnvPool;
use envforge::synthesis::{BundleError, EnvBundle};
use envforge::verify::{verify_bundle, VerificationReport};

use crate::config::RunConfig;
use crate::{CliError, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Attempt directory, or a task directory (latest attempt is used).
    bundle: PathBuf,
}

#[derive(Serialize)]
struct VerifyOutput {
    task_id: String,
    attempt: u32,
    path: PathBuf,
    #[serde(flatten)]
    report: VerificationReport,
}

/// Loading problems (missing directory, missing golden path, bad JSON) are
/// caller errors.
pub fn load_bundle(path: &Path) -> Result<EnvBundle, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("no bundle at {}", path.display())));
    }
    EnvBundle::load_latest(path).map_err(|e: BundleError| CliError::Usage(e.to_string()))
}

pub fn run(cfg: &RunConfig, args: Args) -> Result<Output, CliError> {
    let mut bundle = load_bundle(&args.bundle)?;
    let provider = cfg.provider(&[])?;
    let pool = EnvPool::new(cfg.pool.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = verify_bundle(&mut bundle, provider.as_ref(), &pool, &cfg.synth.verify);
    pool.shutdown();
    let report = report.map_err(|e| CliError::Failed(format!("reflection: {e}")))?;

    let mut rows = vec![
        ("task".to_string(), format!("{} (attempt {})", bundle.task_id, bundle.attempt)),
        ("static".to_string(), report.static_passed.to_string()),
        ("dynamic".to_string(), report.dynamic_passed.to_string()),
        (
            "failure_stage".to_string(),
            serde_json::to_value(report.failure_stage).unwrap().as_str().unwrap().to_string(),
        ),
    ];
    for m in &report.milestones {
        rows.push((
            format!("step {}", m.step_index),
            format!("expected >= {} observed {} {}", m.expected, m.observed, if m.met { "ok" } else { "MISSED" }),
        ));
    }
    if let Some(d) = &report.detail {
        rows.push(("detail".into(), d.clone()));
    }
    let ok = report.dynamic_passed;
    let out = VerifyOutput { task_id: bundle.task_id.clone(), attempt: bundle.attempt, path: args.bundle, report };
    Ok(Output::new(&out, kv_table(&rows), ok))
}
