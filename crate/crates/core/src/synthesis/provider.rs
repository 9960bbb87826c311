use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::SynthesisContext;

/// Pipeline stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MetaPrompt,
    Manifest,
    File,
    GoldenPath,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptRequest {
    pub stage: Stage,
    pub task_id: String,
    /// 1-based synthesis attempt.
    pub attempt: u32,
    pub prompt: String,
    /// Screenshot references, passed through unresolved.
    pub attachments: Vec<String>,
    /// File being generated (`Stage::File` only).
    pub path: Option<String>,
    /// Structured task context; providers may use it instead of re-parsing
    /// the prompt text.
    pub context: Option<SynthesisContext>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub text: String,
}

impl PromptResponse {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient provider error: {0}")]
    Transient(String),
    /// The provider cannot be reached or refuses the request outright.
    #[error("provider unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub multimodal: bool,
}

/// A code model. Implementations must tolerate concurrent `complete` calls.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, ProviderError>;
    fn capabilities(&self) -> Capabilities;
    fn identity(&self) -> String;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, ProviderError> {
        (**self).complete(request)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, ProviderError> {
        (**self).complete(request)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

/// Calls `complete`, retrying transient failures up to `retries` extra times.
pub fn complete_with_retries(
    provider: &dyn Provider,
    request: &PromptRequest,
    retries: u32,
) -> Result<PromptResponse, ProviderError> {
    let mut tries = 0;
    loop {
        match provider.complete(request) {
            Err(ProviderError::Transient(msg)) if tries < retries => {
                log::warn!("{}: transient provider error on {:?} (retrying): {msg}", request.task_id, request.stage);
                tries += 1;
            }
            other => return other,
        }
    }
}

/// Strips one surrounding Markdown code fence, if present.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        if let Some(inner) = body.trim_end().strip_suffix("```") {
            return inner;
        }
    }
    text
}
