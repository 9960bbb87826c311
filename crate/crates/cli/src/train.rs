use std::path::PathBuf;

use envforge::analytics::kv_table;
use envforge::envpool::EnvPool;
use envforge::rollout::{train_toy_policy, TrainError};
use envforge::synthesis::load_bundle_tree;
use envforge::write_json_atomic;

use crate::config::RunConfig;
use crate::{CliError, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Train on bundles that failed verification too.
    #[arg(long)]
    allow_unverified: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Only train on these task ids (repeatable).
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Report destination; defaults to <bundles-dir>/training_report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cfg: &RunConfig, args: Args) -> Result<Output, CliError> {
    let mut tc = cfg.train.clone();
    tc.allow_unverified |= args.allow_unverified;
    tc.iterations = args.iterations.unwrap_or(tc.iterations);
    tc.group_size = args.group_size.unwrap_or(tc.group_size);
    tc.learning_rate = args.learning_rate.unwrap_or(tc.learning_rate);
    tc.max_steps = args.max_steps.unwrap_or(tc.max_steps);
    tc.eval_episodes = args.eval_episodes.unwrap_or(tc.eval_episodes);

    let mut bundles = load_bundle_tree(&cfg.bundles_dir).map_err(|e| CliError::Usage(e.to_string()))?;
    if !args.tasks.is_empty() {
        bundles.retain(|b| args.tasks.contains(&b.task_id));
    }
    let pool = EnvPool::new(cfg.pool.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = train_toy_policy(&bundles, &pool, &tc);
    pool.shutdown();
    let report = report.map_err(|e| match e {
        TrainError::NoBundles | TrainError::Unverified(_) | TrainError::Config(_) => CliError::Usage(e.to_string()),
        TrainError::NoActions(_) | TrainError::Pool(_) => CliError::Failed(e.to_string()),
    })?;

    let out = args.out.unwrap_or_else(|| cfg.bundles_dir.join("training_report.json"));
    write_json_atomic(&out, &report).map_err(|e| CliError::Failed(e.to_string()))?;

    let mut table = String::from("iter  success  reward   |update|\n");
    for it in &report.iterations {
        table += &format!(
            "{:>4}  {:>7.3}  {:>6.3}  {:>9.4}\n",
            it.iteration, it.mean_success, it.mean_reward, it.update_norm
        );
    }
    let mut rows = vec![
        ("baseline success".to_string(), format!("{:.3}", report.baseline_success())),
        ("final eval success".to_string(), format!("{:.3}", report.final_eval.mean_success)),
    ];
    for m in &report.final_eval.per_env {
        rows.push((format!("  {}", m.task_id), format!("{:.3}", m.success_rate)));
    }
    rows.push(("parameter change".into(), format!("{:.4}", report.param_change)));
    rows.push(("report".into(), out.display().to_string()));
    table += &kv_table(&rows);
    Ok(Output::new(&report, table, true))
}
