use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{EnvAction, EnvActionKind, Observation};
use super::grpo::{grpo_advantages, GroupSizeError};
use super::step::{Session, StepConfig, StepError};
use crate::envpool::EnvHandle;
use crate::reward::{classify_success, final_reward, RewardEvent, RewardStream};

/// What a policy sees before choosing its next action.
pub struct EpisodeView<'a> {
    pub step_index: usize,
    pub history: &'a [TrajectoryStep],
    pub last_observation: Option<&'a Observation>,
    pub current_reward: f64,
}

pub trait Policy {
    fn next_action(&mut self, view: &EpisodeView<'_>) -> EnvAction;
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn next_action(&mut self, view: &EpisodeView<'_>) -> EnvAction {
        (**self).next_action(view)
    }
}

/// Replays a fixed action list, then stops.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: Vec<EnvAction>,
}

impl ScriptedPolicy {
    pub fn new(actions: impl IntoIterator<Item = EnvAction>) -> Self {
        Self { actions: actions.into_iter().collect() }
    }
}

impl Policy for ScriptedPolicy {
    fn next_action(&mut self, view: &EpisodeView<'_>) -> EnvAction {
        self.actions.get(view.step_index).cloned().unwrap_or_else(EnvAction::stop)
    }
}

/// Uniform choice over an action catalog.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    catalog: Vec<EnvAction>,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(catalog: Vec<EnvAction>, seed: u64) -> Self {
        assert!(!catalog.is_empty(), "random policy needs a non-empty catalog");
        Self { catalog, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn next_action(&mut self, _view: &EpisodeView<'_>) -> EnvAction {
        let k = self.rng.gen_range(0..self.catalog.len());
        self.catalog[k].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: EnvAction,
    pub observation: Option<Observation>,
    pub events: RewardStream,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<TrajectoryStep>,
    pub final_reward: f64,
    pub success: bool,
    pub wall_clock_s: f64,
    pub step_count: usize,
}

/// One line of a trajectory dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    #[serde(default)]
    pub steps: Vec<DumpStep>,
    pub final_reward: f64,
    pub success: bool,
    pub wall_clock_s: f64,
    #[serde(default)]
    pub step_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpStep {
    pub action: EnvAction,
    /// HTTP status, absent for client-side actions.
    pub status: Option<u16>,
    pub reward_events: Vec<RewardEvent>,
}

impl TrajectoryRecord {
    pub fn steps_taken(&self) -> usize {
        self.step_count.unwrap_or(self.steps.len())
    }
}

impl Trajectory {
    /// All events across steps, in order.
    pub fn event_stream(&self) -> RewardStream {
        let mut all = RewardStream::default();
        for s in &self.steps {
            all.extend(s.events.clone());
        }
        all
    }

    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            task_id: self.task_id.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| DumpStep {
                    action: s.action.clone(),
                    status: s.observation.as_ref().map(|o| o.status),
                    reward_events: s.events.events.clone(),
                })
                .collect(),
            final_reward: self.final_reward,
            success: self.success,
            wall_clock_s: self.wall_clock_s,
            step_count: Some(self.step_count),
        }
    }

    /// Catalog indices of the actions taken, if every action is in `catalog`.
    pub fn action_indices(&self, catalog: &[EnvAction]) -> Option<Vec<usize>> {
        self.steps.iter().map(|s| catalog.iter().position(|a| *a == s.action)).collect()
    }
}

/// Runs until the policy stops, `max_steps` actions have been taken, a
/// terminal reward is observed, or a step fails.
pub fn run_episode<P: Policy>(handle: &EnvHandle, mut policy: P, max_steps: usize, cfg: &StepConfig) -> Trajectory {
    assert!(max_steps >= 1, "max_steps must be at least 1");
    let started = Instant::now();
    let mut session = Session::new(handle, cfg.clone());
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut current = 0.0;
    let mut last_obs: Option<Observation> = None;
    while steps.len() < max_steps {
        let action = {
            let view = EpisodeView {
                step_index: steps.len(),
                history: &steps,
                last_observation: last_obs.as_ref(),
                current_reward: current,
            };
            policy.next_action(&view)
        };
        if action.kind == EnvActionKind::Stop {
            break;
        }
        let (observation, events, error) = match session.step(&action) {
            Ok(out) => (out.observation, out.events, None),
            Err(StepError::Transport { message, events, .. }) => (None, events, Some(message)),
            Err(e) => (None, RewardStream::default(), Some(e.to_string())),
        };
        if let Some(last) = events.events.last() {
            current = last.reward;
        }
        let terminal = events.events.iter().any(|e| classify_success(e.reward));
        let failed = error.is_some();
        if observation.is_some() {
            last_obs = observation.clone();
        }
        steps.push(TrajectoryStep { action, observation, events, error });
        if terminal || failed {
            break;
        }
    }
    let mut traj = Trajectory {
        task_id: handle.bundle().task_id.clone(),
        step_count: steps.len(),
        steps,
        final_reward: 0.0,
        success: false,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    traj.final_reward = final_reward(&traj.event_stream());
    traj.success = classify_success(traj.final_reward);
    traj
}

/// `G` trajectories of one environment with their group-relative advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl Group {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, GroupSizeError> {
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.final_reward).collect();
        let advantages = grpo_advantages(&rewards)?;
        Ok(Self { trajectories, advantages })
    }
}
