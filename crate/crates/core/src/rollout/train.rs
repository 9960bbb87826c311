//! Toy GRPO loop: one tabular softmax policy per environment, trained on
//! group-relative outcome advantages.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::EnvAction;
use super::discover::discover_catalog;
use super::episode::{run_episode, EpisodeView, Policy, Trajectory};
use super::grpo::grpo_advantages;
use super::policy::{ScoredEpisode, TabularSoftmax};
use super::step::StepConfig;
use crate::envpool::{EnvPool, PoolError};
use crate::scalar::mean;
use crate::synthesis::EnvBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Episodes per environment in the post-training evaluation.
    pub eval_episodes: usize,
    pub allow_unverified: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            iterations: 30,
            learning_rate: 1.0,
            max_steps: 8,
            seed: 7,
            eval_episodes: 32,
            allow_unverified: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no bundles to train on")]
    NoBundles,
    #[error("bundle {0} is not verified (allow_unverified not set)")]
    Unverified(String),
    #[error("bundle {0} has an empty action space")]
    NoActions(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Samples each step's action from a [`TabularSoftmax`] row.
pub struct SoftmaxPolicy<'a> {
    pub table: &'a TabularSoftmax<f64>,
    pub catalog: &'a [EnvAction],
    rng: ChaCha8Rng,
}

impl<'a> SoftmaxPolicy<'a> {
    pub fn new(table: &'a TabularSoftmax<f64>, catalog: &'a [EnvAction], rng: ChaCha8Rng) -> Self {
        assert_eq!(table.n_actions(), catalog.len());
        Self { table, catalog, rng }
    }
}

impl Policy for SoftmaxPolicy<'_> {
    fn next_action(&mut self, view: &EpisodeView<'_>) -> EnvAction {
        let k = self.table.sample(view.step_index, &mut self.rng);
        self.catalog[k].clone()
    }
}

/// Deterministic RNG for one episode, independent across every coordinate.
pub fn episode_rng(seed: u64, phase: u64, iteration: u64, env: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = [phase, iteration, env, episode]
        .iter()
        .fold(0u64, |acc, &x| acc.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(x.wrapping_add(1)));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSummary {
    pub task_id: String,
    pub n_actions: usize,
    /// `declared` (actions.json) or `discovered` (link/form extraction).
    pub catalog_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub task_id: String,
    pub success_rate: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_success: f64,
    pub mean_reward: f64,
    pub per_env: Vec<EnvMetrics>,
    /// L2 norm of this iteration's parameter update, over all environments.
    pub update_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes_per_env: usize,
    pub mean_success: f64,
    pub mean_reward: f64,
    pub per_env: Vec<EnvMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainConfig,
    pub environments: Vec<EnvSummary>,
    pub iterations: Vec<IterationMetrics>,
    pub final_eval: EvalMetrics,
    /// L2 distance between initial and final parameters, over all environments.
    pub param_change: f64,
}

impl TrainingReport {
    /// Success rate of the untrained (uniform) policy, measured at iteration 0.
    pub fn baseline_success(&self) -> f64 {
        self.iterations.first().map_or(0.0, |it| it.mean_success)
    }
}

struct EnvState<'a> {
    bundle: &'a EnvBundle,
    catalog: Vec<EnvAction>,
    table: TabularSoftmax<f64>,
}

/// Instruction words that look like entity names, offered to discovered forms.
fn instruction_vocabulary(instruction: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    instruction
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| w.chars().next().is_some_and(char::is_uppercase))
        .filter(|w| seen.insert(w.to_string()))
        .map(str::to_owned)
        .collect()
}

/// The bundle's declared actions, or a crawl of the running app when it
/// declares none. Invalid and duplicate actions are dropped.
pub fn catalog_for(bundle: &EnvBundle, pool: &EnvPool) -> Result<(Vec<EnvAction>, &'static str), TrainError> {
    let (raw, source) = match &bundle.actions {
        Some(c) => (c.actions.clone(), "declared"),
        None => {
            let handle = pool.lease(bundle)?;
            let found = discover_catalog(&handle, &instruction_vocabulary(&bundle.instruction), 16);
            pool.release(&handle)?;
            (found.actions, "discovered")
        }
    };
    let mut seen = BTreeSet::new();
    let catalog: Vec<EnvAction> = raw.into_iter().filter(|a| a.validate().is_ok() && seen.insert(a.clone())).collect();
    if catalog.is_empty() {
        return Err(TrainError::NoActions(bundle.task_id.clone()));
    }
    Ok((catalog, source))
}

/// Runs `per_env` episodes for each environment in parallel, bounded by the
/// pool's capacity. Results are indexed `[env][episode]`.
fn collect(
    pool: &EnvPool,
    envs: &[EnvState<'_>],
    per_env: usize,
    max_steps: usize,
    rng_for: impl Fn(usize, usize) -> ChaCha8Rng + Sync,
) -> Result<Vec<Vec<Trajectory>>, TrainError> {
    let jobs: Vec<(usize, usize)> = (0..envs.len()).flat_map(|e| (0..per_env).map(move |i| (e, i))).collect();
    let results: Mutex<Vec<Option<Trajectory>>> = Mutex::new(vec![None; jobs.len()]);
    let first_error: Mutex<Option<PoolError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let workers = pool.config().max_live.min(jobs.len()).max(1);
    let step_cfg = StepConfig::default();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() || first_error.lock().unwrap().is_some() {
                    break;
                }
                let (e, i) = jobs[j];
                let env = &envs[e];
                let outcome = pool.lease(env.bundle).and_then(|handle| {
                    let policy = SoftmaxPolicy::new(&env.table, &env.catalog, rng_for(e, i));
                    let traj = run_episode(&handle, policy, max_steps, &step_cfg);
                    pool.release(&handle).map(|()| traj)
                });
                match outcome {
                    Ok(t) => results.lock().unwrap()[j] = Some(t),
                    Err(err) => {
                        first_error.lock().unwrap().get_or_insert(err);
                    }
                }
            });
        }
    });
    if let Some(err) = first_error.into_inner().unwrap() {
        return Err(err.into());
    }
    let mut flat = results.into_inner().unwrap().into_iter().map(|t| t.expect("every job ran"));
    Ok((0..envs.len()).map(|_| flat.by_ref().take(per_env).collect()).collect())
}

fn env_metrics(task_id: &str, group: &[Trajectory]) -> EnvMetrics {
    let success: Vec<f64> = group.iter().map(|t| if t.success { 1.0 } else { 0.0 }).collect();
    let rewards: Vec<f64> = group.iter().map(|t| t.final_reward).collect();
    EnvMetrics { task_id: task_id.to_string(), success_rate: mean(&success), mean_reward: mean(&rewards) }
}

fn averaged(per_env: &[EnvMetrics]) -> (f64, f64) {
    let s: Vec<f64> = per_env.iter().map(|m| m.success_rate).collect();
    let r: Vec<f64> = per_env.iter().map(|m| m.mean_reward).collect();
    (mean(&s), mean(&r))
}

/// Trains one policy per bundle with GRPO and evaluates the result.
///
/// The report is a deterministic function of the bundles and `cfg`
/// (wall-clock measurements are deliberately left out).
pub fn train_toy_policy(
    bundles: &[EnvBundle],
    pool: &EnvPool,
    cfg: &TrainConfig,
) -> Result<TrainingReport, TrainError> {
    if bundles.is_empty() {
        return Err(TrainError::NoBundles);
    }
    if cfg.group_size < 2 {
        return Err(TrainError::Config(format!("group_size must be at least 2, got {}", cfg.group_size)));
    }
    if cfg.max_steps == 0 {
        return Err(TrainError::Config("max_steps must be at least 1".into()));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(TrainError::Config(format!(
            "learning_rate must be finite and non-negative, got {}",
            cfg.learning_rate
        )));
    }
    if let Some(b) = bundles.iter().find(|b| !b.verified && !cfg.allow_unverified) {
        return Err(TrainError::Unverified(b.task_id.clone()));
    }

    let mut envs = Vec::with_capacity(bundles.len());
    let mut environments = Vec::with_capacity(bundles.len());
    for bundle in bundles {
        let (catalog, source) = catalog_for(bundle, pool)?;
        environments.push(EnvSummary {
            task_id: bundle.task_id.clone(),
            n_actions: catalog.len(),
            catalog_source: source.into(),
        });
        let table = TabularSoftmax::new(cfg.max_steps, catalog.len());
        envs.push(EnvState { bundle, catalog, table });
    }
    let initial: Vec<Vec<f64>> = envs.iter().map(|e| e.table.params().to_vec()).collect();

    let mut iterations = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let groups = collect(pool, &envs, cfg.group_size, cfg.max_steps, |e, i| {
            episode_rng(cfg.seed, 0, it as u64, e as u64, i as u64)
        })?;
        let mut per_env = Vec::with_capacity(envs.len());
        let mut sq_norm = 0.0;
        for (env, group) in envs.iter_mut().zip(&groups) {
            per_env.push(env_metrics(&env.bundle.task_id, group));
            let rewards: Vec<f64> = group.iter().map(|t| t.final_reward).collect();
            let advantages = grpo_advantages(&rewards).expect("group_size >= 2");
            let batch: Vec<ScoredEpisode<f64>> = group
                .iter()
                .zip(advantages)
                .map(|(t, advantage)| ScoredEpisode {
                    actions: t.action_indices(&env.catalog).expect("actions come from the catalog"),
                    advantage,
                })
                .collect();
            let grad = env.table.objective_gradient(&batch);
            let norm = env.table.apply(&grad, cfg.learning_rate);
            sq_norm += norm * norm;
        }
        let (mean_success, mean_reward) = averaged(&per_env);
        log::info!("iteration {it}: success {mean_success:.3}, reward {mean_reward:.3}");
        iterations.push(IterationMetrics {
            iteration: it,
            mean_success,
            mean_reward,
            per_env,
            update_norm: sq_norm.sqrt(),
        });
    }

    let final_eval = if cfg.eval_episodes == 0 {
        EvalMetrics { episodes_per_env: 0, mean_success: 0.0, mean_reward: 0.0, per_env: Vec::new() }
    } else {
        let groups = collect(pool, &envs, cfg.eval_episodes, cfg.max_steps, |e, i| {
            episode_rng(cfg.seed, 1, 0, e as u64, i as u64)
        })?;
        let per_env: Vec<EnvMetrics> =
            envs.iter().zip(&groups).map(|(env, g)| env_metrics(&env.bundle.task_id, g)).collect();
        let (mean_success, mean_reward) = averaged(&per_env);
        EvalMetrics { episodes_per_env: cfg.eval_episodes, mean_success, mean_reward, per_env }
    };

    let param_change = envs
        .iter()
        .zip(&initial)
        .flat_map(|(env, init)| env.table.params().iter().zip(init).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        .sqrt();

    Ok(TrainingReport { config: cfg.clone(), environments, iterations, final_eval, param_change })
}
