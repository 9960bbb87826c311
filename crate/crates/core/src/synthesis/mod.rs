//! Hierarchical environment synthesis with a K-attempt rejection loop.

mod bundle;
pub mod live;
mod manifest;
pub mod mock;
mod pipeline;
pub mod prompts;
mod provider;

pub use bundle::{
    load_bundle_tree, BundleError, BundleMeta, EnvBundle, FailureStage, GoldenPathScript, GoldenStep,
    DEFAULT_RUN_COMMAND, GOLDEN_EPS,
};
pub use live::{LiveConfig, LiveProvider};
pub use manifest::FileManifest;
pub use mock::{MockBehavior, MockProvider, ScriptedOutcome};
pub use pipeline::{
    synthesize_all, synthesize_environment, Attempt, AttemptLog, AttemptRecord, GoldenStage, JobResult, StageError,
    SynthConfig, SynthError, SystemPrompt, DEFAULT_HEALTH_PATH, DEFAULT_K,
};
pub use provider::{
    complete_with_retries, strip_code_fence, Capabilities, PromptRequest, PromptResponse, Provider, ProviderError,
    Stage,
};
