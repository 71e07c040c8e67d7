mod common;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use qualcode::codebook::seed_codebook;
use qualcode::gateway::{
    annotate_batch, open_endpoint, Adapter, BatchOptions, Endpoint, EndpointProfile, FailureScript, GatewayError,
    HttpEndpoint, ReplayEndpoint,
};
use qualcode::parser::ParseStatus;
use qualcode::prompt::{Phase, PromptTemplate};

use common::single_turn_units;

const GOOD: &str = r#"{"assessment_feedback": ["Generate Formative Assessment"]}"#;

fn fixture_for(units: &[qualcode::corpus::AnnotationUnit], bad: usize) -> HashMap<String, String> {
    units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.unit_id.clone(), if i < bad { "continue".to_string() } else { GOOD.to_string() }))
        .collect()
}

fn options() -> BatchOptions {
    BatchOptions {
        run_id: "test-run".into(),
        seed: Some(7),
        ..Default::default()
    }
}

#[tokio::test]
async fn conserves_units_and_respects_cap() {
    let units = single_turn_units(100);
    let ep = Arc::new(ReplayEndpoint::new("replay", fixture_for(&units, 0)).with_delay(Duration::from_millis(2)));
    let profile = EndpointProfile::replay("replay", 4);
    let cb = seed_codebook();
    let out = annotate_batch(&units, &PromptTemplate::builtin(Phase::Deductive), &cb, ep.clone(), &profile, &options())
        .await
        .unwrap();
    assert_eq!(out.records.len(), 100);
    assert_eq!(out.manifest.unit_count, 100);
    assert_eq!(out.manifest.completed, 100);
    assert!(!out.manifest.incomplete);
    let ids: Vec<_> = out.records.iter().map(|r| r.unit_id.as_str()).collect();
    let expected: Vec<_> = units.iter().map(|u| u.unit_id.as_str()).collect();
    assert_eq!(ids, expected);
    let stats = ep.stats();
    assert!(stats.max_in_flight <= 4, "{stats:?}");
    assert!(stats.max_in_flight >= 2, "{stats:?}");
    assert_eq!(
        out.manifest.total_input_tokens,
        out.records.iter().map(|r| r.input_tokens).sum::<u64>()
    );
    assert!(out.records.iter().all(|r| r.parse_status == ParseStatus::Valid));
    assert!(out.records[0].labels.resolved.contains("af.assessment.generate-formative-assessment"));
}

#[tokio::test]
async fn retries_transient_failures() {
    let units = single_turn_units(1);
    let script = FailureScript {
        per_unit: [(units[0].unit_id.clone(), 2)].into(),
        ..Default::default()
    };
    let ep = Arc::new(ReplayEndpoint::new("replay", fixture_for(&units, 0)).with_script(script));
    let profile = EndpointProfile::replay("replay", 1);
    let out = annotate_batch(&units, &PromptTemplate::builtin(Phase::Deductive), &seed_codebook(), ep, &profile, &options())
        .await
        .unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].attempts, 3);
    assert_eq!(out.transcript.len(), 3);
    assert!(out.transcript[0].error.is_some());
    assert!(out.transcript[2].response.is_some());
}

#[tokio::test]
async fn unparsable_output_is_null_not_retried() {
    let units = single_turn_units(50);
    let ep = Arc::new(ReplayEndpoint::new("replay", fixture_for(&units, 8)));
    let profile = EndpointProfile::replay("replay", 8);
    let out = annotate_batch(&units, &PromptTemplate::builtin(Phase::Deductive), &seed_codebook(), ep.clone(), &profile, &options())
        .await
        .unwrap();
    assert_eq!(out.manifest.null_count, 8);
    assert_eq!(ep.stats().calls, 50);
    let valid = out.records.iter().filter(|r| !r.is_null()).count();
    assert_eq!(valid as f64 / out.records.len() as f64, 0.84);
}

#[tokio::test]
async fn exhausted_retries_abort_with_partial_manifest() {
    let units = single_turn_units(20);
    let mut fixture = fixture_for(&units, 0);
    fixture.remove(&units[0].unit_id);
    let ep = Arc::new(ReplayEndpoint::new("replay", fixture));
    let profile = EndpointProfile::replay("replay", 1);
    let out = annotate_batch(&units, &PromptTemplate::builtin(Phase::Deductive), &seed_codebook(), ep, &profile, &options())
        .await
        .unwrap();
    assert!(out.manifest.incomplete);
    assert_eq!(out.manifest.completed + out.manifest.failures, out.manifest.unit_count);
    assert!(out.failures[0].error.contains(&units[0].unit_id));
    assert!(out.manifest.failures >= 1);
}

#[tokio::test]
async fn missing_credential_fails_before_any_request() {
    let units = single_turn_units(3);
    let ep = Arc::new(ReplayEndpoint::new("replay", fixture_for(&units, 0)));
    let mut profile = EndpointProfile::replay("replay", 1);
    profile.auth_env_var = Some("QC_GATEWAY_TEST_MISSING".into());
    let err = annotate_batch(&units, &PromptTemplate::builtin(Phase::Deductive), &seed_codebook(), ep.clone(), &profile, &options())
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::MissingCredential(_)));
    assert_eq!(ep.stats().calls, 0);
}

#[tokio::test]
async fn replay_runs_are_reproducible() {
    let units = single_turn_units(30);
    let cb = seed_codebook();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let ep = Arc::new(ReplayEndpoint::new("replay", fixture_for(&units, 5)));
        let out = annotate_batch(&units, &PromptTemplate::builtin(Phase::Deductive), &cb, ep, &EndpointProfile::replay("replay", 3), &options())
            .await
            .unwrap();
        let mut recs = out.records;
        for r in &mut recs {
            r.created_at = chrono::DateTime::UNIX_EPOCH;
        }
        runs.push(serde_json::to_string(&recs).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}

#[derive(Clone, Default)]
struct Seen(Arc<std::sync::Mutex<Vec<(HeaderMap, Value)>>>);

async fn mock_server() -> (String, Seen) {
    let seen = Seen::default();
    async fn record(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) {
        seen.0.lock().unwrap().push((headers, body));
    }
    let app = Router::new()
        .route(
            "/v1/messages",
            post(|s: State<Seen>, h: HeaderMap, b: Json<Value>| async move {
                record(s, h, b).await;
                Json(json!({"content":[{"type":"text","text":GOOD}],"usage":{"input_tokens":11,"output_tokens":3}}))
            }),
        )
        .route(
            "/v1/chat/completions",
            post(|s: State<Seen>, h: HeaderMap, b: Json<Value>| async move {
                record(s, h, b).await;
                Json(json!({"choices":[{"message":{"content":GOOD}}],"usage":{"prompt_tokens":9,"completion_tokens":2}}))
            }),
        )
        .route(
            "/api/chat",
            post(|s: State<Seen>, h: HeaderMap, b: Json<Value>| async move {
                record(s, h, b).await;
                Json(json!({"message":{"content":GOOD},"prompt_eval_count":5,"eval_count":1}))
            }),
        )
        .route("/busy/chat/completions", post(|| async { StatusCode::SERVICE_UNAVAILABLE }))
        .route("/denied/chat/completions", post(|| async { StatusCode::UNAUTHORIZED }))
        .with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), seen)
}

fn http_profile(base: &str, adapter: Adapter) -> EndpointProfile {
    EndpointProfile {
        name: format!("{adapter:?}"),
        base_url: base.to_string(),
        model_identifier: "test-model".into(),
        auth_env_var: None,
        temperature: 0.0,
        max_output_tokens: 256,
        concurrency_cap: 2,
        retry: Default::default(),
        adapter,
    }
}

#[tokio::test]
async fn http_adapters_speak_their_wire_formats() {
    let (base, seen) = mock_server().await;
    let units = single_turn_units(2);
    let cb = seed_codebook();
    let template = PromptTemplate::builtin(Phase::Deductive);

    let anthropic = http_profile(&format!("{base}/v1"), Adapter::AnthropicMessages);
    let ep: Arc<dyn Endpoint> = Arc::new(HttpEndpoint::new(anthropic.clone(), Some("k-test".into())).unwrap());
    let out = annotate_batch(&units, &template, &cb, ep, &anthropic, &options()).await.unwrap();
    assert_eq!(out.manifest.total_input_tokens, 22);
    assert!(out.records.iter().all(|r| r.parse_status == ParseStatus::Valid));
    {
        let seen = seen.0.lock().unwrap();
        let (headers, body) = &seen[0];
        assert_eq!(headers["x-api-key"], "k-test");
        assert_eq!(headers["anthropic-version"], "2023-06-01");
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["max_tokens"], 256);
        assert!(body["messages"][0]["content"].as_str().unwrap().contains("<Codebook"));
    }

    let openai = http_profile(&format!("{base}/v1"), Adapter::OpenaiChat);
    let ep = open_endpoint(&openai).unwrap();
    let out = annotate_batch(&units, &template, &cb, ep, &openai, &options()).await.unwrap();
    assert_eq!(out.manifest.total_output_tokens, 4);

    let ollama = http_profile(&base, Adapter::Ollama);
    let ep = open_endpoint(&ollama).unwrap();
    let out = annotate_batch(&units, &template, &cb, ep, &ollama, &options()).await.unwrap();
    assert_eq!(out.manifest.total_input_tokens, 10);
    let seen = seen.0.lock().unwrap();
    assert_eq!(seen.last().unwrap().1["stream"], false);
}

#[tokio::test]
async fn http_status_classes() {
    let (base, _) = mock_server().await;
    let units = single_turn_units(1);
    let cb = seed_codebook();
    let template = PromptTemplate::builtin(Phase::Deductive);

    let mut busy = http_profile(&format!("{base}/busy"), Adapter::OpenaiChat);
    busy.retry.base_backoff_ms = 1;
    let out = annotate_batch(&units, &template, &cb, open_endpoint(&busy).unwrap(), &busy, &options())
        .await
        .unwrap();
    assert_eq!(out.failures[0].attempts, 3);
    assert!(out.manifest.incomplete);

    let denied = http_profile(&format!("{base}/denied"), Adapter::OpenaiChat);
    let out = annotate_batch(&units, &template, &cb, open_endpoint(&denied).unwrap(), &denied, &options())
        .await
        .unwrap();
    assert_eq!(out.failures[0].attempts, 1);
}
