use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Completion, CompletionRequest, Endpoint, EndpointError, GatewayError};

/// Scripted failures for a replay endpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureScript {
    /// The first N calls overall fail transiently.
    #[serde(default)]
    pub fail_first_calls: usize,
    /// Transient failures per unit before its output is served.
    #[serde(default)]
    pub per_unit: BTreeMap<String, u32>,
    /// Units that always fail permanently.
    #[serde(default)]
    pub permanent: BTreeSet<String>,
}

impl FailureScript {
    pub fn fail_first_call() -> Self {
        FailureScript {
            fail_first_calls: 1,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub calls: usize,
    pub max_in_flight: usize,
}

/// Serves fixed outputs keyed by unit id. Token counts are whitespace word
/// counts so that accounting is reproducible.
#[derive(Debug)]
pub struct ReplayEndpoint {
    name: String,
    fixture: HashMap<String, String>,
    script: FailureScript,
    delay: Option<Duration>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    unit_calls: Mutex<HashMap<String, u32>>,
}

impl ReplayEndpoint {
    pub fn new(name: &str, fixture: HashMap<String, String>) -> Self {
        ReplayEndpoint {
            name: name.to_string(),
            fixture,
            script: FailureScript::default(),
            delay: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            unit_calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_script(mut self, script: FailureScript) -> Self {
        self.script = script;
        self
    }

    /// Holds every call open for `delay`, which makes overlap observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn stats(&self) -> ReplayStats {
        ReplayStats {
            calls: self.calls.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    fn respond(&self, call: usize, request: &CompletionRequest) -> Result<Completion, EndpointError> {
        let unit = &request.unit_id;
        let seen = {
            let mut calls = self.unit_calls.lock().unwrap();
            let n = calls.entry(unit.clone()).or_insert(0);
            *n += 1;
            *n
        };
        if call < self.script.fail_first_calls {
            return Err(EndpointError::Transient(format!("scripted failure on call {}", call + 1)));
        }
        if self.script.permanent.contains(unit) {
            return Err(EndpointError::Permanent(format!("scripted permanent failure for {unit}")));
        }
        if let Some(&fails) = self.script.per_unit.get(unit) {
            if seen <= fails {
                return Err(EndpointError::Transient(format!("scripted failure {seen} of {fails} for {unit}")));
            }
        }
        let raw = self
            .fixture
            .get(unit)
            .ok_or_else(|| EndpointError::FixtureGap { unit_id: unit.clone() })?;
        Ok(Completion {
            raw_text: raw.clone(),
            input_tokens: request.prompt.split_whitespace().count() as u64,
            output_tokens: raw.split_whitespace().count() as u64,
        })
    }
}

#[async_trait]
impl Endpoint for ReplayEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, EndpointError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        } else {
            tokio::task::yield_now().await;
        }
        let out = self.respond(call, request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// Reads a JSON object mapping unit ids to raw output text.
pub fn load_fixture(path: impl AsRef<Path>) -> Result<HashMap<String, String>, GatewayError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(unit: &str) -> CompletionRequest {
        CompletionRequest {
            unit_id: unit.into(),
            model: "m".into(),
            prompt: "label this".into(),
            temperature: 0.0,
            max_output_tokens: 10,
        }
    }

    fn fixture() -> HashMap<String, String> {
        [("a", "{\"labels\": []}"), ("b", "continue"), ("c", "x y z")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[tokio::test]
    async fn serves_exact_outputs() {
        let ep = ReplayEndpoint::new("r", fixture());
        for (k, v) in fixture() {
            let c = ep.complete(&req(&k)).await.unwrap();
            assert_eq!(c.raw_text, v);
            assert_eq!(c.input_tokens, 2);
        }
        assert_eq!(ep.stats().calls, 3);
    }

    #[tokio::test]
    async fn first_call_fails_then_succeeds() {
        let ep = ReplayEndpoint::new("r", fixture()).with_script(FailureScript::fail_first_call());
        assert!(ep.complete(&req("a")).await.unwrap_err().is_transient());
        assert!(ep.complete(&req("a")).await.is_ok());
    }

    #[tokio::test]
    async fn missing_unit_names_the_gap() {
        let ep = ReplayEndpoint::new("r", fixture());
        let err = ep.complete(&req("zz")).await.unwrap_err();
        assert_eq!(err, EndpointError::FixtureGap { unit_id: "zz".into() });
        assert!(err.to_string().contains("zz"));
    }

    #[tokio::test]
    async fn per_unit_and_permanent_scripts() {
        let script = FailureScript {
            per_unit: [("a".to_string(), 2)].into(),
            permanent: ["b".to_string()].into(),
            ..Default::default()
        };
        let ep = ReplayEndpoint::new("r", fixture()).with_script(script);
        assert!(ep.complete(&req("a")).await.is_err());
        assert!(ep.complete(&req("a")).await.is_err());
        assert!(ep.complete(&req("a")).await.is_ok());
        assert!(matches!(ep.complete(&req("b")).await, Err(EndpointError::Permanent(_))));
        assert!(ep.complete(&req("c")).await.is_ok());
    }
}
