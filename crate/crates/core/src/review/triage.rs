use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::parser::AnnotationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageStatus {
    Open,
    Accepted,
    Dismissed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageEntry {
    pub unit_id: String,
    pub specification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedCode {
    pub domain: String,
    pub group: String,
    pub item: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtherTriageCluster {
    pub cluster_key: String,
    pub entries: Vec<TriageEntry>,
    pub proposed_code: Option<ProposedCode>,
    pub status: TriageStatus,
    /// Code created when the cluster was accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_version: Option<u64>,
}

/// Casefolded, whitespace-collapsed specification text.
pub fn cluster_key(specification: &str) -> String {
    specification
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Groups the Other entries of `records` by specification. Largest
/// clusters first; ties by key. Entries without a specification are left
/// out.
pub fn other_triage(records: &[AnnotationRecord]) -> Vec<OtherTriageCluster> {
    let mut clusters: BTreeMap<String, Vec<TriageEntry>> = BTreeMap::new();
    for r in records {
        for e in &r.labels.other_entries {
            let key = cluster_key(&e.specification);
            if key.is_empty() {
                continue;
            }
            clusters.entry(key).or_default().push(TriageEntry {
                unit_id: r.unit_id.clone(),
                specification: e.specification.clone(),
            });
        }
    }
    let mut out: Vec<OtherTriageCluster> = clusters
        .into_iter()
        .map(|(cluster_key, entries)| OtherTriageCluster {
            cluster_key,
            entries,
            proposed_code: None,
            status: TriageStatus::Open,
            code_id: None,
            codebook_version: None,
        })
        .collect();
    out.sort_by(|a, b| b.entries.len().cmp(&a.entries.len()).then_with(|| a.cluster_key.cmp(&b.cluster_key)));
    out
}
