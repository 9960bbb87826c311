//! HTTP client for an OpenAI-compatible chat-completions endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::provider::{Capabilities, PromptRequest, PromptResponse, Provider, ProviderError};

pub const ENV_URL: &str = "PROVIDER_URL";
pub const ENV_KEY: &str = "PROVIDER_KEY";
pub const ENV_MODEL: &str = "PROVIDER_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub key: String,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub multimodal: bool,
}

impl LiveConfig {
    /// Reads `PROVIDER_URL`, `PROVIDER_KEY` and (optionally) `PROVIDER_MODEL`.
    pub fn from_env() -> Result<Self, String> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let url = get(ENV_URL).ok_or_else(|| format!("{ENV_URL} is not set"))?;
        let key = get(ENV_KEY).ok_or_else(|| format!("{ENV_KEY} is not set"))?;
        Ok(Self {
            url,
            key,
            model: get(ENV_MODEL).unwrap_or_else(|| "default".into()),
            max_in_flight: 4,
            timeout: Duration::from_secs(300),
            multimodal: true,
        })
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct LiveProvider {
    cfg: LiveConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl LiveProvider {
    pub fn new(cfg: LiveConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        let gate = Gate { free: Mutex::new(cfg.max_in_flight.max(1)), cv: Condvar::new() };
        Self { cfg, agent, gate }
    }

    /// Chat message body: prompt text plus screenshot references, as image
    /// parts when the model is multimodal.
    pub fn request_body(&self, req: &PromptRequest) -> Value {
        let content = if self.cfg.multimodal && !req.attachments.is_empty() {
            let mut parts = vec![json!({"type": "text", "text": req.prompt})];
            parts.extend(req.attachments.iter().map(|r| json!({"type": "image_url", "image_url": {"url": r}})));
            Value::Array(parts)
        } else if req.attachments.is_empty() {
            Value::String(req.prompt.clone())
        } else {
            Value::String(format!("{}\n\nScreenshots: {}", req.prompt, req.attachments.join(", ")))
        };
        json!({"model": self.cfg.model, "messages": [{"role": "user", "content": content}]})
    }
}

/// Maps transport outcomes onto retryable vs hard failures.
pub fn classify_http_error(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::Status(code, _) if code == 429 || code >= 500 => ProviderError::Transient(format!("HTTP {code}")),
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            ProviderError::Unreachable(format!("HTTP {code}: {}", body.chars().take(200).collect::<String>()))
        }
        ureq::Error::Transport(t) => match t.kind() {
            ureq::ErrorKind::Io => ProviderError::Transient(t.to_string()),
            _ => ProviderError::Unreachable(t.to_string()),
        },
    }
}

impl Provider for LiveProvider {
    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, ProviderError> {
        let _pass = self.gate.acquire();
        let resp = self
            .agent
            .post(&self.cfg.url)
            .set("Authorization", &format!("Bearer {}", self.cfg.key))
            .send_json(self.request_body(req))
            .map_err(classify_http_error)?;
        let body: Value = resp.into_json().map_err(|e| ProviderError::Transient(format!("reading response: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(PromptResponse::new)
            .ok_or_else(|| ProviderError::Transient("response has no choices[0].message.content".into()))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { multimodal: self.cfg.multimodal }
    }

    fn identity(&self) -> String {
        format!("live({})", self.cfg.model)
    }
}
