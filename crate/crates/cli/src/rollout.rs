use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::ValueEnum;
use rand::Rng;
use serde::Serialize;

use envforge::analytics::kv_table;
use envforge::envpool::{EnvPool, PoolError};
use envforge::rollout::{
    catalog_for, episode_rng, run_episode, EnvAction, RandomPolicy, ScriptedPolicy, SoftmaxPolicy, StepConfig,
    Trajectory, TrajectoryRecord,
};
use envforge::synthesis::EnvBundle;
use envforge::{write_atomic, TabularSoftmax};

use crate::config::RunConfig;
use crate::verify::load_bundle;
use crate::{CliError, Output};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Replays the bundle's golden path.
    Golden,
    /// Uniform over the action catalog.
    Random,
    /// The tabular softmax policy at its (uniform) initialisation.
    Toy,
}

#[derive(clap::Args)]
pub struct Args {
    bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyKind::Golden)]
    policy: PolicyKind,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    max_steps: u64,
    /// Trajectory dump (JSONL).
    #[arg(long, default_value = "trajectories.jsonl")]
    out: PathBuf,
}

#[derive(Serialize)]
struct RolloutSummary {
    task_id: String,
    policy: PolicyKind,
    episodes: usize,
    max_steps: usize,
    success_rate: f64,
    mean_reward: f64,
    mean_steps: f64,
    out: PathBuf,
}

/// Phase tag for rollout episodes in the seeded RNG tree.
const ROLLOUT_PHASE: u64 = 7;

struct Runner<'a> {
    bundle: &'a EnvBundle,
    pool: &'a EnvPool,
    policy: PolicyKind,
    catalog: &'a [EnvAction],
    table: &'a TabularSoftmax,
    seed: u64,
    max_steps: usize,
}

impl Runner<'_> {
    fn episode(&self, i: usize) -> Result<Trajectory, PoolError> {
        let handle = self.pool.lease(self.bundle)?;
        let cfg = StepConfig::default();
        let t = match self.policy {
            PolicyKind::Golden => {
                let script = ScriptedPolicy::new(self.bundle.golden_path.actions().cloned());
                run_episode(&handle, script, self.max_steps, &cfg)
            }
            PolicyKind::Random => {
                let s = episode_rng(self.seed, ROLLOUT_PHASE, 0, 0, i as u64).gen();
                run_episode(&handle, RandomPolicy::new(self.catalog.to_vec(), s), self.max_steps, &cfg)
            }
            PolicyKind::Toy => {
                let rng = episode_rng(self.seed, ROLLOUT_PHASE, 1, 0, i as u64);
                run_episode(&handle, SoftmaxPolicy::new(self.table, self.catalog, rng), self.max_steps, &cfg)
            }
        };
        self.pool.release(&handle)?;
        Ok(t)
    }
}

pub fn run(cfg: &RunConfig, args: Args) -> Result<Output, CliError> {
    let bundle = load_bundle(&args.bundle)?;
    let pool = EnvPool::new(cfg.pool.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let episodes = args.episodes as usize;
    let max_steps = args.max_steps as usize;
    let result = (|| {
        let catalog = match args.policy {
            PolicyKind::Golden => Vec::new(),
            _ => catalog_for(&bundle, &pool).map_err(|e| CliError::Failed(e.to_string()))?.0,
        };
        let table = TabularSoftmax::new(max_steps, catalog.len().max(1));
        let runner = Runner {
            bundle: &bundle,
            pool: &pool,
            policy: args.policy,
            catalog: &catalog,
            table: &table,
            seed: cfg.seed,
            max_steps,
        };
        let slots: Mutex<Vec<Option<Result<Trajectory, PoolError>>>> =
            Mutex::new((0..episodes).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..cfg.pool.max_live.min(episodes) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= episodes {
                        break;
                    }
                    let r = runner.episode(i);
                    slots.lock().unwrap()[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every episode ran").map_err(|e| CliError::Failed(e.to_string())))
            .collect::<Result<Vec<_>, _>>()
    })();
    pool.shutdown();
    let trajectories = result?;

    let records: Vec<TrajectoryRecord> = trajectories.iter().map(Trajectory::to_record).collect();
    let mut jsonl = String::new();
    for r in &records {
        jsonl += &serde_json::to_string(r).expect("record serializes");
        jsonl.push('\n');
    }
    write_atomic(&args.out, jsonl.as_bytes()).map_err(|e| CliError::Failed(e.to_string()))?;

    let n = records.len() as f64;
    let summary = RolloutSummary {
        task_id: bundle.task_id.clone(),
        policy: args.policy,
        episodes,
        max_steps,
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        mean_reward: records.iter().map(|r| r.final_reward).sum::<f64>() / n,
        mean_steps: records.iter().map(|r| r.steps_taken() as f64).sum::<f64>() / n,
        out: args.out,
    };
    let table = kv_table(&[
        ("task".into(), summary.task_id.clone()),
        ("policy".into(), format!("{:?}", summary.policy).to_lowercase()),
        ("episodes".into(), summary.episodes.to_string()),
        ("success rate".into(), format!("{:.4}", summary.success_rate)),
        ("mean reward".into(), format!("{:.4}", summary.mean_reward)),
        ("mean steps".into(), format!("{:.2}", summary.mean_steps)),
        ("trajectories".into(), summary.out.display().to_string()),
    ]);
    Ok(Output::new(&summary, table, true))
}
