use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Endpoint, GatewayError, HttpEndpoint, ReplayEndpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    OpenaiChat,
    AnthropicMessages,
    Ollama,
    /// `base_url` is the path of a JSON fixture mapping unit ids to raw output.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 500,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, for `attempt >= 1`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis((self.base_backoff_ms as f64 * factor).round() as u64)
    }
}

/// Endpoint configuration. Credentials are never part of the profile; only
/// the name of the environment variable that holds one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointProfile {
    pub name: String,
    pub base_url: String,
    pub model_identifier: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub concurrency_cap: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    pub adapter: Adapter,
}

impl EndpointProfile {
    pub fn replay(name: &str, concurrency_cap: usize) -> Self {
        EndpointProfile {
            name: name.to_string(),
            base_url: String::new(),
            model_identifier: name.to_string(),
            auth_env_var: None,
            temperature: 0.0,
            max_output_tokens: 1024,
            concurrency_cap,
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 0,
                backoff_multiplier: 1.0,
            },
            adapter: Adapter::Replay,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let profile: EndpointProfile =
            serde_json::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut profile = Self::from_json(&text)?;
        if profile.adapter == Adapter::Replay {
            let fixture = PathBuf::from(&profile.base_url);
            if fixture.is_relative() {
                if let Some(dir) = path.parent() {
                    profile.base_url = dir.join(fixture).display().to_string();
                }
            }
        }
        Ok(profile)
    }

    // negated comparisons so that NaN fails validation
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: &str| Err(GatewayError::Config(format!("{}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return bad("name is empty");
        }
        if self.concurrency_cap < 1 {
            return bad("concurrency_cap must be at least 1");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        if self.retry.max_attempts < 1 {
            return bad("retry.max_attempts must be at least 1");
        }
        if !(self.retry.backoff_multiplier >= 1.0) {
            return bad("retry.backoff_multiplier must be at least 1");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if self.adapter != Adapter::Replay && !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad("base_url must be an http(s) URL");
        }
        Ok(())
    }

    /// Reads the credential named by `auth_env_var`, if any.
    pub fn credential(&self) -> Result<Option<String>, GatewayError> {
        match &self.auth_env_var {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(GatewayError::MissingCredential(var.clone())),
            },
        }
    }
}

/// Builds the endpoint selected by the profile's adapter.
pub fn open_endpoint(profile: &EndpointProfile) -> Result<Arc<dyn Endpoint>, GatewayError> {
    profile.validate()?;
    match profile.adapter {
        Adapter::Replay => {
            let fixture = super::load_fixture(&profile.base_url)?;
            Ok(Arc::new(ReplayEndpoint::new(&profile.name, fixture)))
        }
        _ => Ok(Arc::new(HttpEndpoint::new(profile.clone(), profile.credential()?)?)),
    }
}
