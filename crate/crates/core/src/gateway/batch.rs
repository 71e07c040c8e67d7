use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use super::{Completion, CompletionRequest, Endpoint, EndpointError, EndpointProfile, GatewayError};
use crate::codebook::Codebook;
use crate::corpus::AnnotationUnit;
use crate::parser::{parse_output, AnnotationRecord, Normalizer, DEFAULT_FUZZY_THRESHOLD};
use crate::prompt::{Phase, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub phase: Phase,
    pub codebook_version: u64,
    pub endpoint: String,
    pub unit_count: usize,
    pub completed: usize,
    pub failures: usize,
    pub null_count: usize,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub seed: Option<u64>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    /// Set when the run stopped early; `completed + failures == unit_count`.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub unit_id: String,
    pub attempts: u32,
    pub error: String,
}

/// One request/response exchange, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub unit_id: String,
    pub attempt: u32,
    pub model: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<Completion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub run_id: String,
    pub seed: Option<u64>,
    /// Defaults to the endpoint profile name.
    pub annotator_id: Option<String>,
    pub fuzzy_threshold: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            run_id: uuid::Uuid::new_v4().to_string(),
            seed: None,
            annotator_id: None,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Input order; one per completed unit.
    pub records: Vec<AnnotationRecord>,
    pub manifest: RunManifest,
    pub failures: Vec<UnitFailure>,
    pub transcript: Vec<TranscriptEntry>,
}

enum UnitResult {
    Done { completion: Completion, attempts: u32 },
    Failed { attempts: u32, error: EndpointError },
    Skipped,
}

async fn call_with_retry(
    endpoint: &dyn Endpoint,
    request: &CompletionRequest,
    profile: &EndpointProfile,
    transcript: &mut Vec<TranscriptEntry>,
) -> UnitResult {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let result = endpoint.complete(request).await;
        transcript.push(TranscriptEntry {
            unit_id: request.unit_id.clone(),
            attempt,
            model: request.model.clone(),
            prompt: request.prompt.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        match result {
            Ok(completion) => return UnitResult::Done { completion, attempts: attempt },
            Err(e) if e.is_transient() && attempt < profile.retry.max_attempts => {
                log::debug!("{}: attempt {attempt} failed: {e}", request.unit_id);
                let wait = profile.retry.backoff(attempt);
                if !wait.is_zero() {
                    tokio::time::sleep(wait).await;
                }
            }
            Err(error) => return UnitResult::Failed { attempts: attempt, error },
        }
    }
}

/// Annotates every unit through `endpoint`, at most `concurrency_cap`
/// requests at a time.
///
/// Content that does not parse is data: it yields a null record, never a
/// retry. A unit whose request still fails after its retries stops the run;
/// units not yet dispatched are reported as failures and the manifest is
/// flagged incomplete.
pub async fn annotate_batch(
    units: &[AnnotationUnit],
    template: &PromptTemplate,
    cb: &Codebook,
    endpoint: Arc<dyn Endpoint>,
    profile: &EndpointProfile,
    options: &BatchOptions,
) -> Result<BatchOutcome, GatewayError> {
    profile.validate()?;
    profile.credential()?;
    if units.is_empty() {
        return Err(GatewayError::NoUnits);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = units.iter().find(|u| !seen.insert(u.unit_id.as_str())) {
        return Err(GatewayError::Config(format!("duplicate unit id {}", dup.unit_id)));
    }
    let requests = units
        .iter()
        .map(|u| {
            Ok(CompletionRequest {
                unit_id: u.unit_id.clone(),
                model: profile.model_identifier.clone(),
                prompt: template.render(u, Some(cb))?,
                temperature: profile.temperature,
                max_output_tokens: profile.max_output_tokens,
            })
        })
        .collect::<Result<Vec<_>, GatewayError>>()?;

    let started_at = Utc::now();
    let semaphore = Arc::new(Semaphore::new(profile.concurrency_cap));
    let aborted = Arc::new(AtomicBool::new(false));
    let profile_arc = Arc::new(profile.clone());
    let mut tasks = JoinSet::new();
    for (idx, request) in requests.into_iter().enumerate() {
        let semaphore = Arc::clone(&semaphore);
        let aborted = Arc::clone(&aborted);
        let endpoint = Arc::clone(&endpoint);
        let profile = Arc::clone(&profile_arc);
        tasks.spawn(async move {
            let _permit = semaphore.acquire_owned().await.expect("semaphore closed");
            let mut transcript = Vec::new();
            if aborted.load(Ordering::SeqCst) {
                return (idx, UnitResult::Skipped, transcript);
            }
            let result = call_with_retry(endpoint.as_ref(), &request, &profile, &mut transcript).await;
            if let UnitResult::Failed { error, .. } = &result {
                log::error!("{}: giving up: {error}", request.unit_id);
                aborted.store(true, Ordering::SeqCst);
            }
            (idx, result, transcript)
        });
    }

    let mut results: Vec<Option<(UnitResult, Vec<TranscriptEntry>)>> = (0..units.len()).map(|_| None).collect();
    while let Some(joined) = tasks.join_next().await {
        let (idx, result, transcript) = joined.expect("annotation task panicked");
        results[idx] = Some((result, transcript));
    }

    let normalizer = Normalizer::with_threshold(cb, options.fuzzy_threshold);
    let annotator = options.annotator_id.clone().unwrap_or_else(|| profile.name.clone());
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut transcript = Vec::new();
    for (unit, slot) in units.iter().zip(results) {
        let (result, exchanges) = slot.expect("every unit reports");
        transcript.extend(exchanges);
        match result {
            UnitResult::Done { completion, attempts } => {
                let parsed = parse_output(&completion.raw_text, &normalizer);
                records.push(AnnotationRecord {
                    unit_id: unit.unit_id.clone(),
                    annotator_id: annotator.clone(),
                    codebook_version: cb.version_id,
                    stratum: unit.stratum,
                    labels: parsed.labels,
                    raw_output: completion.raw_text,
                    parse_status: parsed.status,
                    repair_level: parsed.repair,
                    attempts,
                    input_tokens: completion.input_tokens,
                    output_tokens: completion.output_tokens,
                    created_at: Utc::now(),
                });
            }
            UnitResult::Failed { attempts, error } => failures.push(UnitFailure {
                unit_id: unit.unit_id.clone(),
                attempts,
                error: error.to_string(),
            }),
            UnitResult::Skipped => failures.push(UnitFailure {
                unit_id: unit.unit_id.clone(),
                attempts: 0,
                error: "not attempted: run aborted".to_string(),
            }),
        }
    }

    let manifest = RunManifest {
        run_id: options.run_id.clone(),
        phase: template.phase,
        codebook_version: cb.version_id,
        endpoint: endpoint.name().to_string(),
        unit_count: units.len(),
        completed: records.len(),
        failures: failures.len(),
        null_count: records.iter().filter(|r| r.is_null()).count(),
        total_input_tokens: records.iter().map(|r| r.input_tokens).sum(),
        total_output_tokens: records.iter().map(|r| r.output_tokens).sum(),
        seed: options.seed,
        started_at,
        finished_at: Utc::now(),
        incomplete: !failures.is_empty(),
    };
    Ok(BatchOutcome {
        records,
        manifest,
        failures,
        transcript,
    })
}
