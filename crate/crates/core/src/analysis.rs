//! Conversation-level aggregation, frequencies, uplift and co-occurrence.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::corpus::{Author, CorpusStore};
use crate::metrics::{csv_field, CellCounts, Level};
use crate::parser::AnnotationRecord;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("records mix codebook versions {0:?}; remap them first")]
    MixedVersions(Vec<u64>),
    #[error("record for unit {0} does not match any corpus message")]
    UnknownUnit(String),
    #[error("code {0} is not in the codebook")]
    UnknownCode(String),
    #[error("no conversations with annotations")]
    Empty,
    #[error("co-occurrence needs at least 2 conversations, got {0}")]
    TooFewConversations(usize),
    #[error("axes cover different conversations")]
    ConversationMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Labels of teacher messages only.
    TeacherRequest,
    /// Labels of every message in the conversation.
    Collaboration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationAggregate {
    pub conversation_id: String,
    pub axis: Axis,
    pub labels: BTreeSet<String>,
    pub domains_hit: BTreeSet<String>,
    pub groups_hit: BTreeSet<String>,
    pub items_hit: BTreeSet<String>,
    /// At least one non-null record contributed on this axis.
    pub annotated: bool,
}

impl ConversationAggregate {
    pub fn at(&self, level: Level) -> &BTreeSet<String> {
        match level {
            Level::Domain => &self.domains_hit,
            Level::Group => &self.groups_hit,
            Level::Item => &self.items_hit,
        }
    }
}

/// Which author a record speaks for: single-turn records take the message
/// author; trio records cover an exchange and count toward the
/// collaboration axis only.
fn record_author(unit_id: &str, messages: &HashMap<&str, (&str, Author)>) -> Result<(String, Option<Author>), AnalysisError> {
    if let Some((conv, author)) = messages.get(unit_id) {
        return Ok((conv.to_string(), Some(*author)));
    }
    if let Some(t1) = unit_id.strip_suffix("#trio") {
        if let Some((conv, _)) = messages.get(t1) {
            return Ok((conv.to_string(), None));
        }
    }
    Err(AnalysisError::UnknownUnit(unit_id.to_string()))
}

/// One aggregate per corpus conversation, in corpus order.
pub fn aggregate(
    records: &[AnnotationRecord],
    store: &CorpusStore,
    cb: &Codebook,
    axis: Axis,
) -> Result<Vec<ConversationAggregate>, AnalysisError> {
    let versions: BTreeSet<u64> = records.iter().map(|r| r.codebook_version).collect();
    if versions.len() > 1 {
        return Err(AnalysisError::MixedVersions(versions.into_iter().collect()));
    }
    let messages: HashMap<&str, (&str, Author)> = store
        .messages()
        .map(|m| (m.message_id.as_str(), (m.conversation_id.as_str(), m.author)))
        .collect();
    let mut labels: HashMap<String, (BTreeSet<String>, bool)> = HashMap::new();
    for r in records {
        let (conv, author) = record_author(&r.unit_id, &messages)?;
        if r.is_null() {
            continue;
        }
        let counts = match axis {
            Axis::Collaboration => true,
            Axis::TeacherRequest => author == Some(Author::Teacher),
        };
        if counts {
            let entry = labels.entry(conv).or_default();
            entry.0.extend(r.labels.resolved.iter().cloned());
            entry.1 = true;
        }
    }
    store
        .conversations()
        .iter()
        .map(|c| {
            let (set, annotated) = labels.remove(&c.conversation_id).unwrap_or_default();
            let mut domains = BTreeSet::new();
            let mut groups = BTreeSet::new();
            for id in &set {
                let code = cb.get(id).ok_or_else(|| AnalysisError::UnknownCode(id.clone()))?;
                domains.extend(code.all_domains().map(str::to_string));
                groups.insert(code.group_key());
            }
            Ok(ConversationAggregate {
                conversation_id: c.conversation_id.clone(),
                axis,
                items_hit: set.clone(),
                labels: set,
                domains_hit: domains,
                groups_hit: groups,
                annotated,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub label: String,
    pub conversations: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub level: Level,
    pub axis: Axis,
    pub conversation_count: usize,
    /// Conversations without any non-null record on this axis.
    pub excluded_conversations: usize,
    /// Most frequent first; ties by label.
    pub rows: Vec<FrequencyRow>,
}

fn pct(n: usize, d: usize) -> f64 {
    100.0 * n as f64 / d as f64
}

fn tally<'a>(aggs: impl IntoIterator<Item = &'a ConversationAggregate>, level: Level) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for a in aggs {
        for label in a.at(level) {
            *counts.entry(label.clone()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn frequency_report(aggs: &[ConversationAggregate], level: Level) -> Result<FrequencyReport, AnalysisError> {
    let included: Vec<&ConversationAggregate> = aggs.iter().filter(|a| a.annotated).collect();
    if included.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = included.len();
    let mut rows: Vec<FrequencyRow> = tally(included.iter().copied(), level)
        .into_iter()
        .map(|(label, count)| FrequencyRow {
            label,
            conversations: count,
            percent: pct(count, n),
        })
        .collect();
    rows.sort_by(|a, b| b.conversations.cmp(&a.conversations).then_with(|| a.label.cmp(&b.label)));
    Ok(FrequencyReport {
        level,
        axis: aggs[0].axis,
        conversation_count: n,
        excluded_conversations: aggs.len() - n,
        rows,
    })
}

impl FrequencyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,conversations,percent\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.4}\n", csv_field(&r.label), r.conversations, r.percent));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftRow {
    pub label: String,
    pub request_conversations: usize,
    pub collaboration_conversations: usize,
    pub request_percent: f64,
    pub collaboration_percent: f64,
    /// Percentage points, collaboration minus request.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub level: Level,
    pub conversation_count: usize,
    /// Largest delta first; ties by label.
    pub rows: Vec<UpliftRow>,
}

impl UpliftReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,request_conversations,collaboration_conversations,request_percent,collaboration_percent,delta\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4}\n",
                csv_field(&r.label),
                r.request_conversations,
                r.collaboration_conversations,
                r.request_percent,
                r.collaboration_percent,
                r.delta
            ));
        }
        s
    }
}

/// Request versus collaboration frequencies over the conversations that
/// have annotations on the collaboration axis.
pub fn uplift_report(
    request: &[ConversationAggregate],
    collaboration: &[ConversationAggregate],
    level: Level,
) -> Result<UpliftReport, AnalysisError> {
    let ids = |aggs: &[ConversationAggregate]| -> BTreeSet<String> { aggs.iter().map(|a| a.conversation_id.clone()).collect() };
    if ids(request) != ids(collaboration) {
        return Err(AnalysisError::ConversationMismatch);
    }
    let included: BTreeSet<&str> = collaboration
        .iter()
        .filter(|a| a.annotated)
        .map(|a| a.conversation_id.as_str())
        .collect();
    if included.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = included.len();
    let pick = |aggs: &'_ [ConversationAggregate]| -> BTreeMap<String, usize> {
        tally(aggs.iter().filter(|a| included.contains(a.conversation_id.as_str())), level)
    };
    let req = pick(request);
    let col = pick(collaboration);
    let mut rows: Vec<UpliftRow> = col
        .keys()
        .chain(req.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|label| {
            let r = req.get(label).copied().unwrap_or(0);
            let c = col.get(label).copied().unwrap_or(0);
            UpliftRow {
                label: label.clone(),
                request_conversations: r,
                collaboration_conversations: c,
                request_percent: pct(r, n),
                collaboration_percent: pct(c, n),
                delta: pct(c, n) - pct(r, n),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.label.cmp(&b.label)));
    Ok(UpliftReport {
        level,
        conversation_count: n,
        rows,
    })
}

/// Phi coefficient of a 2×2 table; `None` when either variable is constant.
pub fn phi(c: CellCounts) -> Option<f64> {
    let row1 = (c.n11 + c.n10) as f64;
    let row0 = (c.n01 + c.n00) as f64;
    let col1 = (c.n11 + c.n01) as f64;
    let col0 = (c.n10 + c.n00) as f64;
    let denom = row1 * row0 * col1 * col0;
    if denom == 0.0 {
        return None;
    }
    Some((c.n11 as f64 * c.n00 as f64 - c.n10 as f64 * c.n01 as f64) / denom.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub level: Level,
    pub axis: Axis,
    pub labels: Vec<String>,
    /// Symmetric; `None` where undefined.
    pub phi: Vec<Vec<Option<f64>>>,
    pub support: Vec<Vec<CellCounts>>,
    pub conversation_count: usize,
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.phi[i][j]
    }

    /// Wide CSV; undefined entries are left blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            s.push(',');
            s.push_str(&csv_field(l));
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.phi) {
            s.push_str(&csv_field(l));
            for v in row {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&format!("{v:.6}"));
                }
            }
            s.push('\n');
        }
        s
    }

    /// One line per unordered pair (including the diagonal), for heatmaps.
    pub fn to_long_csv(&self) -> String {
        let mut s = String::from("a,b,phi,n11,n10,n01,n00\n");
        for i in 0..self.labels.len() {
            for j in i..self.labels.len() {
                let c = self.support[i][j];
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    csv_field(&self.labels[i]),
                    csv_field(&self.labels[j]),
                    self.phi[i][j].map(|v| format!("{v:.6}")).unwrap_or_default(),
                    c.n11,
                    c.n10,
                    c.n01,
                    c.n00
                ));
            }
        }
        s
    }
}

/// Co-occurrence over every label hit by at least one annotated conversation.
pub fn cooccurrence(aggs: &[ConversationAggregate], level: Level) -> Result<CooccurrenceMatrix, AnalysisError> {
    let labels: Vec<String> = aggs
        .iter()
        .filter(|a| a.annotated)
        .flat_map(|a| a.at(level).iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    cooccurrence_over(aggs, level, &labels)
}

/// Co-occurrence over an explicit label list, in that order.
pub fn cooccurrence_over(
    aggs: &[ConversationAggregate],
    level: Level,
    labels: &[String],
) -> Result<CooccurrenceMatrix, AnalysisError> {
    let included: Vec<&ConversationAggregate> = aggs.iter().filter(|a| a.annotated).collect();
    if included.len() < 2 {
        return Err(AnalysisError::TooFewConversations(included.len()));
    }
    let indicators: Vec<Vec<bool>> = labels
        .iter()
        .map(|l| included.iter().map(|a| a.at(level).contains(l)).collect())
        .collect();
    let k = labels.len();
    let mut support = vec![vec![CellCounts::default(); k]; k];
    let mut matrix = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let mut c = CellCounts::default();
            for (&x, &y) in indicators[i].iter().zip(&indicators[j]) {
                match (x, y) {
                    (true, true) => c.n11 += 1,
                    (true, false) => c.n10 += 1,
                    (false, true) => c.n01 += 1,
                    (false, false) => c.n00 += 1,
                }
            }
            let v = phi(c).map(|p| p.clamp(-1.0, 1.0));
            support[i][j] = c;
            support[j][i] = CellCounts { n10: c.n01, n01: c.n10, ..c };
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    Ok(CooccurrenceMatrix {
        level,
        axis: included[0].axis,
        labels: labels.to_vec(),
        phi: matrix,
        support,
        conversation_count: included.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(id: &str, labels: &[&str]) -> ConversationAggregate {
        let set: BTreeSet<String> = labels.iter().map(|s| s.to_string()).collect();
        ConversationAggregate {
            conversation_id: id.into(),
            axis: Axis::Collaboration,
            labels: set.clone(),
            domains_hit: set.clone(),
            groups_hit: set.clone(),
            items_hit: set,
            annotated: true,
        }
    }

    #[test]
    fn phi_hand_table() {
        let c = CellCounts { n11: 2, n10: 1, n01: 1, n00: 1 };
        assert!((phi(c).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(phi(CellCounts { n11: 3, n10: 0, n01: 0, n00: 2 }), Some(1.0));
        assert_eq!(phi(CellCounts { n11: 3, n10: 2, n01: 0, n00: 0 }), None);
    }

    #[test]
    fn matrix_from_indicators() {
        let aggs = vec![agg("1", &["x", "y"]), agg("2", &["x", "y"]), agg("3", &["x"]), agg("4", &[]), agg("5", &["y"])];
        let m = cooccurrence(&aggs, Level::Item).unwrap();
        assert!((m.get("x", "y").unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.get("x", "x"), Some(1.0));
        assert_eq!(m.get("x", "y"), m.get("y", "x"));
        let with_const = cooccurrence_over(&aggs, Level::Item, &["x".into(), "never".into()]).unwrap();
        assert_eq!(with_const.get("x", "never"), None);
        assert!(with_const.to_csv().lines().nth(1).unwrap().ends_with(','));
        assert!(matches!(cooccurrence(&aggs[..1], Level::Item), Err(AnalysisError::TooFewConversations(1))));
    }

    #[test]
    fn frequency_and_exclusion() {
        let mut aggs = vec![agg("1", &["D"]), agg("2", &["D"]), agg("3", &["D", "E"]), agg("4", &["E"]), agg("5", &[])];
        aggs[4].annotated = false;
        let r = frequency_report(&aggs, Level::Domain).unwrap();
        assert_eq!(r.conversation_count, 4);
        assert_eq!(r.excluded_conversations, 1);
        assert_eq!(r.rows[0].label, "D");
        assert_eq!(r.rows[0].percent, 75.0);
        assert_eq!(r.rows[1].percent, 50.0);
    }

    #[test]
    fn uplift_pairs() {
        let req = vec![agg("1", &["Y"]), agg("2", &[]), agg("3", &["X"]), agg("4", &["X"])];
        let col = vec![agg("1", &["Y"]), agg("2", &["Y"]), agg("3", &["X", "Y"]), agg("4", &["X"])];
        let r = uplift_report(&req, &col, Level::Item).unwrap();
        let y = r.rows.iter().find(|r| r.label == "Y").unwrap();
        assert_eq!((y.request_percent, y.collaboration_percent, y.delta), (25.0, 75.0, 50.0));
        let x = r.rows.iter().find(|r| r.label == "X").unwrap();
        assert_eq!(x.delta, 0.0);
        assert!(matches!(uplift_report(&req[..3], &col, Level::Item), Err(AnalysisError::ConversationMismatch)));
    }
}
