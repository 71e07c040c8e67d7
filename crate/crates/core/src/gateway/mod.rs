//! Model endpoints and the batch annotation executor.

mod batch;
mod http;
mod profile;
mod replay;

pub use batch::{annotate_batch, BatchOptions, BatchOutcome, RunManifest, TranscriptEntry, UnitFailure};
pub use http::HttpEndpoint;
pub use profile::{open_endpoint, Adapter, EndpointProfile, RetryPolicy};
pub use replay::{load_fixture, FailureScript, ReplayEndpoint, ReplayStats};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One prompt bound for an endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub unit_id: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Provider response reduced to the fields the pipeline needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub raw_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EndpointError {
    /// Transport errors, 5xx and rate limits. Retried.
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint failure: {0}")]
    Permanent(String),
    #[error("replay fixture has no entry for unit {unit_id}")]
    FixtureGap { unit_id: String },
}

impl EndpointError {
    pub fn is_transient(&self) -> bool {
        matches!(self, EndpointError::Transient(_))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid endpoint profile: {0}")]
    Config(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("no units to annotate")]
    NoUnits,
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[async_trait]
pub trait Endpoint: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, EndpointError>;
}
