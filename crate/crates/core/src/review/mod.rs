//! Human verification desk: sampled review sessions, an append-only audit
//! log, Other triage and live agreement.

mod desk;
mod http;
mod live;
mod triage;

pub use desk::{
    AuditEvent, DecisionAction, DecisionInput, DecisionOutcome, DeskConfig, NextUnit, Progress, ReviewDecision,
    ReviewDesk, ReviewError, ReviewSession, SampleSpec, SessionMetrics, TriageAction, TriageResolution,
};
pub use http::{router, serve, SharedDesk};
pub use live::{AgreementSnapshot, LiveAgreement};
pub use triage::{cluster_key, other_triage, OtherTriageCluster, ProposedCode, TriageEntry, TriageStatus};

/// Annotator id given to verified records.
pub fn verified_annotator(reviewer_id: &str) -> String {
    format!("verified:{reviewer_id}")
}
