use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::live::{AgreementSnapshot, LiveAgreement};
use super::triage::{other_triage, OtherTriageCluster, ProposedCode, TriageStatus};
use super::verified_annotator;
use crate::codebook::{Codebook, CodebookError, CodebookRegistry, NewCode};
use crate::corpus::{sample_ids, AnnotationUnit, Stratum};
use crate::parser::{AnnotationRecord, LabelSet, Normalizer, ParseStatus, ResolutionKind};
use crate::rundir::RunDir;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("codebook version {0} is not in the registry")]
    UnknownVersion(u64),
    #[error("empty sample")]
    EmptySample,
    #[error("sample of {requested} exceeds the {available} eligible records")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("out-of-order decision: expected unit {expected}, got {got}")]
    OutOfOrder { expected: String, got: String },
    #[error("session {0} is complete")]
    SessionComplete(String),
    #[error("session belongs to reviewer {owner}, not {got}")]
    ReviewerMismatch { owner: String, got: String },
    #[error("a correction needs corrected_labels")]
    MissingCorrection,
    #[error("corrected_labels are only allowed with the correct action")]
    UnexpectedCorrection,
    #[error("cannot resolve label {0:?} to an active code")]
    UnresolvableLabel(String),
    #[error("unknown triage cluster {0:?}")]
    UnknownCluster(String),
    #[error("triage cluster {0:?} is already resolved")]
    ClusterClosed(String),
    #[error("accepting a cluster needs domain, group and item")]
    IncompleteProposal,
    #[error("audit log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
}

fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ReviewError + '_ {
    move |source| ReviewError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub runs_dir: PathBuf,
    pub codebook_dir: PathBuf,
    pub audit_log: PathBuf,
    /// Run used for triage when a request names none.
    #[serde(default)]
    pub default_run: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub run_id: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub stratum: Option<Stratum>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub reviewer_id: String,
    pub run_id: String,
    pub spec: SampleSpec,
    pub sample: Vec<String>,
    pub cursor: usize,
    pub codebook_version: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAction {
    Accept,
    Correct,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub session_id: String,
    pub unit_id: String,
    pub reviewer_id: String,
    pub action: DecisionAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_labels: Option<LabelSet>,
    #[serde(default)]
    pub note: String,
    pub decided_at: DateTime<Utc>,
}

/// Decision as submitted. Corrected labels are code ids or code labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionInput {
    pub unit_id: String,
    #[serde(default)]
    pub reviewer_id: Option<String>,
    pub action: Option<DecisionAction>,
    #[serde(default)]
    pub corrected_labels: Option<Vec<String>>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageAction {
    Accept,
    Dismiss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageResolution {
    pub action: TriageAction,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub item: Option<String>,
    #[serde(default)]
    pub definition: Option<String>,
    /// Allow the proposed code to open a new domain.
    #[serde(default)]
    pub allow_new_domain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    SessionOpened { session: ReviewSession },
    Decision { decision: ReviewDecision },
    TriageResolved {
        cluster_key: String,
        status: TriageStatus,
        proposed_code: Option<ProposedCode>,
        code_id: Option<String>,
        codebook_version: Option<u64>,
        resolved_at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub decided: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextUnit {
    Unit {
        position: usize,
        progress: Progress,
        unit_id: String,
        unit: Option<Box<AnnotationUnit>>,
        model_labels: LabelSet,
        parse_status: ParseStatus,
        raw_output: String,
    },
    Done {
        progress: Progress,
        live_agreement: AgreementSnapshot,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub progress: Progress,
    pub live_agreement: AgreementSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub progress: Progress,
    pub accepted: usize,
    pub corrected: usize,
    pub flagged: usize,
    pub live_agreement: AgreementSnapshot,
}

#[derive(Debug)]
struct RunData {
    records: Vec<AnnotationRecord>,
    by_unit: HashMap<String, usize>,
    units: HashMap<String, AnnotationUnit>,
}

#[derive(Debug)]
struct SessionState {
    session: ReviewSession,
    run: Arc<RunData>,
    decisions: Vec<ReviewDecision>,
    live: LiveAgreement,
}

impl SessionState {
    fn model(&self, unit_id: &str) -> &AnnotationRecord {
        &self.run.records[self.run.by_unit[unit_id]]
    }
}

#[derive(Debug, Clone)]
struct TriageState {
    status: TriageStatus,
    proposed_code: Option<ProposedCode>,
    code_id: Option<String>,
    codebook_version: Option<u64>,
}

/// Review state rebuilt from, and persisted to, the audit log.
#[derive(Debug)]
pub struct ReviewDesk {
    config: DeskConfig,
    registry: CodebookRegistry,
    runs: HashMap<String, Arc<RunData>>,
    sessions: BTreeMap<String, SessionState>,
    triage: BTreeMap<String, TriageState>,
}

impl ReviewDesk {
    /// Opens the desk and replays any existing audit log.
    pub fn open(config: DeskConfig) -> Result<Self, ReviewError> {
        let registry = CodebookRegistry::open(&config.codebook_dir)?;
        let mut desk = ReviewDesk {
            config,
            registry,
            runs: HashMap::new(),
            sessions: BTreeMap::new(),
            triage: BTreeMap::new(),
        };
        let path = desk.config.audit_log.clone();
        if path.exists() {
            let file = File::open(&path).map_err(io(&path))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: AuditEvent = serde_json::from_str(&line).map_err(|e| ReviewError::CorruptLog {
                    line: n + 1,
                    message: e.to_string(),
                })?;
                desk.apply(event).map_err(|e| ReviewError::CorruptLog {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            }
        }
        Ok(desk)
    }

    pub fn config(&self) -> &DeskConfig {
        &self.config
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.registry.latest()
    }

    pub fn codebook_version(&self, version: u64) -> Option<&Codebook> {
        self.registry.get(version)
    }

    fn run(&mut self, run_id: &str) -> Result<Arc<RunData>, ReviewError> {
        if let Some(r) = self.runs.get(run_id) {
            return Ok(Arc::clone(r));
        }
        let dir = RunDir::new(&self.config.runs_dir, run_id);
        if !dir.records_path().is_file() {
            return Err(ReviewError::UnknownRun(run_id.to_string()));
        }
        let records = dir.load_records().map_err(io(&dir.records_path()))?;
        let units = if dir.units_path().is_file() {
            dir.unit_index().map_err(io(&dir.units_path()))?
        } else {
            HashMap::new()
        };
        let by_unit = records.iter().enumerate().map(|(i, r)| (r.unit_id.clone(), i)).collect();
        let data = Arc::new(RunData { records, by_unit, units });
        self.runs.insert(run_id.to_string(), Arc::clone(&data));
        Ok(data)
    }

    fn append(&self, event: &AuditEvent) -> Result<(), ReviewError> {
        let path = &self.config.audit_log;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(io(path))?;
        f.flush().map_err(io(path))
    }

    /// Writes the event, then applies it.
    fn commit(&mut self, event: AuditEvent) -> Result<(), ReviewError> {
        self.append(&event)?;
        self.apply(event)
    }

    fn apply(&mut self, event: AuditEvent) -> Result<(), ReviewError> {
        match event {
            AuditEvent::SessionOpened { session } => {
                let run = self.run(&session.run_id)?;
                if let Some(missing) = session.sample.iter().find(|u| !run.by_unit.contains_key(*u)) {
                    return Err(ReviewError::UnknownRun(format!("{} (unit {missing})", session.run_id)));
                }
                self.sessions.insert(
                    session.session_id.clone(),
                    SessionState {
                        session,
                        run,
                        decisions: Vec::new(),
                        live: LiveAgreement::default(),
                    },
                );
            }
            AuditEvent::Decision { decision } => {
                let state = self
                    .sessions
                    .get_mut(&decision.session_id)
                    .ok_or_else(|| ReviewError::UnknownSession(decision.session_id.clone()))?;
                let expected = state.session.sample.get(state.session.cursor);
                if expected != Some(&decision.unit_id) {
                    return Err(ReviewError::OutOfOrder {
                        expected: expected.cloned().unwrap_or_default(),
                        got: decision.unit_id.clone(),
                    });
                }
                let model = state.model(&decision.unit_id).labels.resolved.clone();
                match decision.action {
                    DecisionAction::Accept => state.live.add(&model, &model),
                    DecisionAction::Correct => {
                        let verified = &decision.corrected_labels.as_ref().ok_or(ReviewError::MissingCorrection)?.resolved;
                        state.live.add(verified, &model);
                    }
                    DecisionAction::Flag => {}
                }
                state.session.cursor += 1;
                state.decisions.push(decision);
            }
            AuditEvent::TriageResolved {
                cluster_key,
                status,
                proposed_code,
                code_id,
                codebook_version,
                ..
            } => {
                self.triage.insert(
                    cluster_key,
                    TriageState {
                        status,
                        proposed_code,
                        code_id,
                        codebook_version,
                    },
                );
            }
        }
        Ok(())
    }

    pub fn open_session(&mut self, spec: SampleSpec, reviewer_id: &str) -> Result<ReviewSession, ReviewError> {
        if spec.n == 0 {
            return Err(ReviewError::EmptySample);
        }
        let run = self.run(&spec.run_id)?;
        let population: Vec<String> = run
            .records
            .iter()
            .filter(|r| spec.stratum.is_none() || r.stratum == spec.stratum)
            .map(|r| r.unit_id.clone())
            .collect();
        if spec.n > population.len() {
            return Err(ReviewError::SampleTooLarge {
                requested: spec.n,
                available: population.len(),
            });
        }
        let versions: Vec<u64> = run.records.iter().map(|r| r.codebook_version).collect();
        let version = versions.first().copied().unwrap_or(0);
        if self.registry.get(version).is_none() {
            return Err(ReviewError::UnknownVersion(version));
        }
        let sample = sample_ids(&population, spec.n, spec.seed).expect("size checked");
        let session = ReviewSession {
            session_id: uuid::Uuid::new_v4().to_string(),
            reviewer_id: reviewer_id.to_string(),
            run_id: spec.run_id.clone(),
            spec,
            sample,
            cursor: 0,
            codebook_version: version,
            created_at: Utc::now(),
        };
        self.commit(AuditEvent::SessionOpened { session: session.clone() })?;
        Ok(session)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ReviewSession> {
        self.sessions.values().map(|s| &s.session)
    }

    pub fn session(&self, session_id: &str) -> Result<&ReviewSession, ReviewError> {
        self.state(session_id).map(|s| &s.session)
    }

    fn state(&self, session_id: &str) -> Result<&SessionState, ReviewError> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| ReviewError::UnknownSession(session_id.to_string()))
    }

    fn progress(state: &SessionState) -> Progress {
        Progress {
            decided: state.session.cursor,
            total: state.session.sample.len(),
        }
    }

    /// The unit at the cursor. Reading does not advance.
    pub fn next_unit(&self, session_id: &str) -> Result<NextUnit, ReviewError> {
        let state = self.state(session_id)?;
        let progress = Self::progress(state);
        let Some(unit_id) = state.session.sample.get(state.session.cursor) else {
            return Ok(NextUnit::Done {
                progress,
                live_agreement: state.live.snapshot(),
            });
        };
        let model = state.model(unit_id);
        Ok(NextUnit::Unit {
            position: state.session.cursor,
            progress,
            unit_id: unit_id.clone(),
            unit: state.run.units.get(unit_id).cloned().map(Box::new),
            model_labels: model.labels.clone(),
            parse_status: model.parse_status,
            raw_output: model.raw_output.clone(),
        })
    }

    fn resolve_corrections(cb: &Codebook, labels: &[String]) -> Result<LabelSet, ReviewError> {
        let normalizer = Normalizer::new(cb);
        let mut codes = Vec::new();
        for raw in labels {
            if cb.is_active(raw) {
                codes.push(raw.clone());
                continue;
            }
            let r = normalizer.normalize(raw);
            if !matches!(r.kind, ResolutionKind::Exact | ResolutionKind::Alias) || r.code_ids.is_empty() {
                return Err(ReviewError::UnresolvableLabel(raw.clone()));
            }
            codes.extend(r.code_ids);
        }
        Ok(LabelSet::from_codes(codes))
    }

    pub fn submit_decision(&mut self, session_id: &str, input: DecisionInput) -> Result<DecisionOutcome, ReviewError> {
        let state = self.state(session_id)?;
        let session = &state.session;
        if let Some(r) = input.reviewer_id.as_ref().filter(|r| **r != session.reviewer_id) {
            return Err(ReviewError::ReviewerMismatch {
                owner: session.reviewer_id.clone(),
                got: r.clone(),
            });
        }
        let Some(expected) = session.sample.get(session.cursor) else {
            return Err(ReviewError::SessionComplete(session_id.to_string()));
        };
        if *expected != input.unit_id {
            return Err(ReviewError::OutOfOrder {
                expected: expected.clone(),
                got: input.unit_id,
            });
        }
        let action = input.action.ok_or(ReviewError::MissingCorrection)?;
        let corrected_labels = match (action, &input.corrected_labels) {
            (DecisionAction::Correct, Some(labels)) => {
                let cb = self
                    .registry
                    .get(session.codebook_version)
                    .ok_or(ReviewError::UnknownVersion(session.codebook_version))?;
                Some(Self::resolve_corrections(cb, labels)?)
            }
            (DecisionAction::Correct, None) => return Err(ReviewError::MissingCorrection),
            (_, Some(_)) => return Err(ReviewError::UnexpectedCorrection),
            (_, None) => None,
        };
        let decision = ReviewDecision {
            session_id: session_id.to_string(),
            unit_id: input.unit_id,
            reviewer_id: session.reviewer_id.clone(),
            action,
            corrected_labels,
            note: input.note.unwrap_or_default(),
            decided_at: Utc::now(),
        };
        self.commit(AuditEvent::Decision { decision })?;
        let state = self.state(session_id)?;
        Ok(DecisionOutcome {
            progress: Self::progress(state),
            live_agreement: state.live.snapshot(),
        })
    }

    pub fn metrics(&self, session_id: &str) -> Result<SessionMetrics, ReviewError> {
        let state = self.state(session_id)?;
        let count = |a: DecisionAction| state.decisions.iter().filter(|d| d.action == a).count();
        Ok(SessionMetrics {
            session_id: session_id.to_string(),
            progress: Self::progress(state),
            accepted: count(DecisionAction::Accept),
            corrected: count(DecisionAction::Correct),
            flagged: count(DecisionAction::Flag),
            live_agreement: state.live.snapshot(),
        })
    }

    pub fn decisions(&self, session_id: &str) -> Result<&[ReviewDecision], ReviewError> {
        Ok(&self.state(session_id)?.decisions)
    }

    /// Verified records for accepted and corrected units, in decision order.
    pub fn verified_records(&self, session_id: &str) -> Result<Vec<AnnotationRecord>, ReviewError> {
        let state = self.state(session_id)?;
        Ok(state
            .decisions
            .iter()
            .filter_map(|d| {
                let model = state.model(&d.unit_id);
                let labels = match d.action {
                    DecisionAction::Accept => model.labels.clone(),
                    DecisionAction::Correct => d.corrected_labels.clone()?,
                    DecisionAction::Flag => return None,
                };
                let mut r = AnnotationRecord::manual(
                    &d.unit_id,
                    &verified_annotator(&d.reviewer_id),
                    state.session.codebook_version,
                    labels,
                );
                r.stratum = model.stratum;
                r.created_at = d.decided_at;
                Some(r)
            })
            .collect())
    }

    /// Model records for the units in [`Self::verified_records`].
    pub fn model_records(&self, session_id: &str) -> Result<Vec<AnnotationRecord>, ReviewError> {
        let state = self.state(session_id)?;
        Ok(state
            .decisions
            .iter()
            .filter(|d| d.action != DecisionAction::Flag)
            .map(|d| state.model(&d.unit_id).clone())
            .collect())
    }

    fn triage_run(&self, run_id: Option<&str>) -> Result<String, ReviewError> {
        run_id
            .map(str::to_string)
            .or_else(|| self.config.default_run.clone())
            .ok_or_else(|| ReviewError::UnknownRun("(none given)".into()))
    }

    /// Other clusters of a run with their recorded resolutions.
    pub fn triage(&mut self, run_id: Option<&str>) -> Result<Vec<OtherTriageCluster>, ReviewError> {
        let run_id = self.triage_run(run_id)?;
        let run = self.run(&run_id)?;
        let mut clusters = other_triage(&run.records);
        for c in &mut clusters {
            if let Some(t) = self.triage.get(&c.cluster_key) {
                c.status = t.status;
                c.proposed_code = t.proposed_code.clone();
                c.code_id = t.code_id.clone();
                c.codebook_version = t.codebook_version;
            }
        }
        Ok(clusters)
    }

    /// Accepting adds the proposed code as a new codebook version.
    pub fn resolve_triage(
        &mut self,
        cluster_key: &str,
        resolution: TriageResolution,
    ) -> Result<OtherTriageCluster, ReviewError> {
        let clusters = self.triage(resolution.run_id.as_deref())?;
        let cluster = clusters
            .into_iter()
            .find(|c| c.cluster_key == cluster_key)
            .ok_or_else(|| ReviewError::UnknownCluster(cluster_key.to_string()))?;
        if cluster.status != TriageStatus::Open {
            return Err(ReviewError::ClusterClosed(cluster_key.to_string()));
        }
        let event = match resolution.action {
            TriageAction::Dismiss => AuditEvent::TriageResolved {
                cluster_key: cluster_key.to_string(),
                status: TriageStatus::Dismissed,
                proposed_code: None,
                code_id: None,
                codebook_version: None,
                resolved_at: Utc::now(),
            },
            TriageAction::Accept => {
                let (Some(domain), Some(group), Some(item)) = (&resolution.domain, &resolution.group, &resolution.item)
                else {
                    return Err(ReviewError::IncompleteProposal);
                };
                let latest = self.registry.latest().ok_or(ReviewError::UnknownVersion(0))?;
                let definition = resolution
                    .definition
                    .clone()
                    .unwrap_or_else(|| cluster.entries[0].specification.clone());
                let new = NewCode::new(domain, group, item, &definition, &format!("triage:{cluster_key}"));
                let next = latest.add_code(new, !resolution.allow_new_domain)?;
                let code_id = next
                    .find_by_path(domain, group, item)
                    .map(|c| c.code_id.clone())
                    .expect("code just added");
                let version = next.version_id;
                self.registry.put(next)?;
                AuditEvent::TriageResolved {
                    cluster_key: cluster_key.to_string(),
                    status: TriageStatus::Accepted,
                    proposed_code: Some(ProposedCode {
                        domain: domain.clone(),
                        group: group.clone(),
                        item: item.clone(),
                    }),
                    code_id: Some(code_id),
                    codebook_version: Some(version),
                    resolved_at: Utc::now(),
                }
            }
        };
        self.commit(event)?;
        let run = resolution.run_id.clone();
        self.triage(run.as_deref())?
            .into_iter()
            .find(|c| c.cluster_key == cluster_key)
            .ok_or_else(|| ReviewError::UnknownCluster(cluster_key.to_string()))
    }
}
