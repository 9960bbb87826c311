use std::time::Duration;

use thiserror::Error;

use super::action::{EnvAction, EnvActionKind, Observation, DEFAULT_EXCERPT_CAP};
use crate::envpool::{EnvHandle, PoolError};
use crate::reward::RewardStream;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("transport failure on {url}: {message}")]
    Transport { url: String, message: String, events: RewardStream },
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("invalid action: {0}")]
    InvalidAction(String),
}

#[derive(Debug, Clone)]
pub struct StepConfig {
    pub action_timeout: Duration,
    pub excerpt_cap: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { action_timeout: Duration::from_secs(5), excerpt_cap: DEFAULT_EXCERPT_CAP }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `None` for actions that never reach the server (`type_text`).
    pub observation: Option<Observation>,
    pub events: RewardStream,
}

/// Interaction state for one episode on a leased handle.
///
/// Text typed with `type_text` is client-side until the next `submit`, which
/// sends it along with the submit's own payload.
pub struct Session<'a> {
    handle: &'a EnvHandle,
    agent: ureq::Agent,
    typed: Vec<(String, String)>,
    cfg: StepConfig,
}

fn encode(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

impl<'a> Session<'a> {
    pub fn new(handle: &'a EnvHandle, cfg: StepConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.action_timeout).build();
        Self { handle, agent, typed: Vec::new(), cfg }
    }

    pub fn handle(&self) -> &EnvHandle {
        self.handle
    }

    fn form_body(&mut self, payload: Option<&str>) -> String {
        let mut parts: Vec<String> = payload.filter(|p| !p.is_empty()).map(str::to_owned).into_iter().collect();
        parts.extend(self.typed.drain(..).map(|(k, v)| format!("{}={}", encode(&k), encode(&v))));
        parts.join("&")
    }

    /// Executes one action and drains the reward lines it produced.
    pub fn step(&mut self, action: &EnvAction) -> Result<StepOutcome, StepError> {
        action.validate().map_err(StepError::InvalidAction)?;
        let url = self.handle.url(&action.target);
        let response = match action.kind {
            EnvActionKind::Stop => return Err(StepError::InvalidAction("stop is not executable".into())),
            EnvActionKind::TypeText => {
                self.typed.push((action.target.clone(), action.payload.clone().unwrap_or_default()));
                return Ok(StepOutcome { observation: None, events: self.handle.drain()? });
            }
            EnvActionKind::Navigate => self.agent.get(&url).call(),
            EnvActionKind::Submit => {
                let body = self.form_body(action.payload.as_deref());
                self.agent.post(&url).set("Content-Type", "application/x-www-form-urlencoded").send_string(&body)
            }
            EnvActionKind::Tap => self.agent.post(&url).send_string(""),
        };
        let (status, final_url, body) = match response {
            Ok(resp) | Err(ureq::Error::Status(_, resp)) => {
                let status = resp.status();
                let final_url = resp.get_url().to_string();
                let body = resp.into_string().unwrap_or_default();
                (status, final_url, body)
            }
            Err(e) => {
                // Lines printed before the failure still belong to this step.
                let events = self.handle.drain().unwrap_or_default();
                return Err(StepError::Transport { url, message: e.to_string(), events });
            }
        };
        let observation = Observation::from_body(status, final_url, &body, self.cfg.excerpt_cap);
        let events = self.handle.drain()?;
        Ok(StepOutcome { observation: Some(observation), events })
    }
}

/// Executes a single action on a fresh session.
pub fn step(handle: &EnvHandle, action: &EnvAction) -> Result<StepOutcome, StepError> {
    Session::new(handle, StepConfig::default()).step(action)
}
