//! Episodes, group advantages, and the toy policy-improvement loop.

mod action;
pub mod discover;
mod episode;
mod grpo;
mod policy;
mod step;
mod train;

pub use action::{ActionCatalog, EnvAction, EnvActionKind, Observation, DEFAULT_EXCERPT_CAP};
pub use discover::{discover_catalog, extract_actions};
pub use episode::{
    run_episode, DumpStep, EpisodeView, Group, Policy, RandomPolicy, ScriptedPolicy, Trajectory, TrajectoryRecord,
    TrajectoryStep,
};
pub use grpo::{grpo_advantages, GroupSizeError};
pub use policy::{ScoredEpisode, TabularSoftmax};
pub use step::{step, Session, StepConfig, StepError, StepOutcome};
pub use train::{
    catalog_for, episode_rng, train_toy_policy, EnvMetrics, EnvSummary, EvalMetrics, IterationMetrics, SoftmaxPolicy,
    TrainConfig, TrainError, TrainingReport,
};
