use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{Adapter, Completion, CompletionRequest, Endpoint, EndpointError, EndpointProfile, GatewayError};

const ANTHROPIC_VERSION: &str = "2023-06-01";
const REQUEST_TIMEOUT: Duration = Duration::from_secs(180);

/// HTTP client for one provider API shape.
pub struct HttpEndpoint {
    profile: EndpointProfile,
    credential: Option<String>,
    client: reqwest::Client,
}

impl HttpEndpoint {
    pub fn new(profile: EndpointProfile, credential: Option<String>) -> Result<Self, GatewayError> {
        if profile.adapter == Adapter::Replay {
            return Err(GatewayError::Config(format!("{}: replay adapter is not an HTTP endpoint", profile.name)));
        }
        let client = reqwest::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpEndpoint {
            profile,
            credential,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.profile.base_url.trim_end_matches('/'), path)
    }

    fn build(&self, request: &CompletionRequest) -> reqwest::RequestBuilder {
        let messages = json!([{ "role": "user", "content": request.prompt }]);
        match self.profile.adapter {
            Adapter::OpenaiChat => {
                let mut rb = self.client.post(self.url("chat/completions")).json(&json!({
                    "model": request.model,
                    "messages": messages,
                    "temperature": request.temperature,
                    "max_tokens": request.max_output_tokens,
                }));
                if let Some(key) = &self.credential {
                    rb = rb.bearer_auth(key);
                }
                rb
            }
            Adapter::AnthropicMessages => {
                let mut rb = self
                    .client
                    .post(self.url("messages"))
                    .header("anthropic-version", ANTHROPIC_VERSION)
                    .json(&json!({
                        "model": request.model,
                        "messages": messages,
                        "temperature": request.temperature,
                        "max_tokens": request.max_output_tokens,
                    }));
                if let Some(key) = &self.credential {
                    rb = rb.header("x-api-key", key);
                }
                rb
            }
            Adapter::Ollama => {
                let mut rb = self.client.post(self.url("api/chat")).json(&json!({
                    "model": request.model,
                    "messages": messages,
                    "stream": false,
                    "options": {
                        "temperature": request.temperature,
                        "num_predict": request.max_output_tokens,
                    },
                }));
                if let Some(key) = &self.credential {
                    rb = rb.bearer_auth(key);
                }
                rb
            }
            Adapter::Replay => unreachable!("checked in HttpEndpoint::new"),
        }
    }
}

fn tokens(v: &Value, path: &[&str]) -> u64 {
    path.iter().try_fold(v, |v, k| v.get(k)).and_then(Value::as_u64).unwrap_or(0)
}

/// Normalizes a provider response body to a [`Completion`].
pub(crate) fn decode(adapter: Adapter, body: &Value) -> Result<Completion, EndpointError> {
    let missing = || EndpointError::Permanent("response has no text content".to_string());
    match adapter {
        Adapter::OpenaiChat => Ok(Completion {
            raw_text: body["choices"][0]["message"]["content"].as_str().ok_or_else(missing)?.to_string(),
            input_tokens: tokens(body, &["usage", "prompt_tokens"]),
            output_tokens: tokens(body, &["usage", "completion_tokens"]),
        }),
        Adapter::AnthropicMessages => {
            let parts = body["content"].as_array().ok_or_else(missing)?;
            let text: String = parts
                .iter()
                .filter(|p| p["type"] == "text")
                .filter_map(|p| p["text"].as_str())
                .collect();
            Ok(Completion {
                raw_text: text,
                input_tokens: tokens(body, &["usage", "input_tokens"]),
                output_tokens: tokens(body, &["usage", "output_tokens"]),
            })
        }
        Adapter::Ollama => Ok(Completion {
            raw_text: body["message"]["content"].as_str().ok_or_else(missing)?.to_string(),
            input_tokens: tokens(body, &["prompt_eval_count"]),
            output_tokens: tokens(body, &["eval_count"]),
        }),
        Adapter::Replay => Err(EndpointError::Permanent("replay adapter has no wire format".into())),
    }
}

#[async_trait]
impl Endpoint for HttpEndpoint {
    fn name(&self) -> &str {
        &self.profile.name
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, EndpointError> {
        let resp = self
            .build(request)
            .send()
            .await
            .map_err(|e| EndpointError::Transient(format!("{}: {e}", self.profile.name)))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(EndpointError::Transient(format!("{}: HTTP {status}", self.profile.name)));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(EndpointError::Permanent(format!(
                "{}: HTTP {status}: {}",
                self.profile.name,
                text.chars().take(300).collect::<String>()
            )));
        }
        let body: Value = resp
            .json()
            .await
            .map_err(|e| EndpointError::Transient(format!("{}: unreadable body: {e}", self.profile.name)))?;
        decode(self.profile.adapter, &body)
    }
}
