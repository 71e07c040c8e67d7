use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{RepairLevel, ResolutionKind};
use crate::corpus::Stratum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Valid,
    Recovered,
    Null,
}

/// The five AI response-type labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AiResponseType {
    Information,
    Explanation,
    Guidance,
    Question,
    Summarization,
}

impl AiResponseType {
    pub const ALL: [AiResponseType; 5] = [
        AiResponseType::Information,
        AiResponseType::Explanation,
        AiResponseType::Guidance,
        AiResponseType::Question,
        AiResponseType::Summarization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AiResponseType::Information => "Information",
            AiResponseType::Explanation => "Explanation",
            AiResponseType::Guidance => "Guidance",
            AiResponseType::Question => "Question",
            AiResponseType::Summarization => "Summarization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let t = s.trim();
        Self::ALL.into_iter().find(|r| r.as_str().eq_ignore_ascii_case(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLabel {
    pub text: String,
    /// Payload key the label appeared under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    pub kind: ResolutionKind,
    #[serde(default)]
    pub code_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtherEntry {
    pub category: String,
    pub specification: String,
    #[serde(default)]
    pub missing_justification: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_area: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_level: Option<String>,
    #[serde(default)]
    pub pedagogical_frameworks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai_response_type: Option<AiResponseType>,
    /// Values that failed validation, kept verbatim by field name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub demoted: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub resolved: BTreeSet<String>,
    #[serde(default)]
    pub raw_labels: Vec<RawLabel>,
    #[serde(default)]
    pub other_entries: Vec<OtherEntry>,
    #[serde(default)]
    pub metadata: LabelMetadata,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl LabelSet {
    pub fn from_codes<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelSet {
            resolved: codes.into_iter().map(Into::into).collect(),
            ..LabelSet::default()
        }
    }

    pub fn has_explicit_other(&self) -> bool {
        !self.other_entries.is_empty()
    }
}

/// One annotator's result for one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub unit_id: String,
    pub annotator_id: String,
    pub codebook_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<Stratum>,
    pub labels: LabelSet,
    pub raw_output: String,
    pub parse_status: ParseStatus,
    #[serde(default = "default_repair")]
    pub repair_level: RepairLevel,
    #[serde(default = "one")]
    pub attempts: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub created_at: DateTime<Utc>,
}

fn default_repair() -> RepairLevel {
    RepairLevel::None
}

fn one() -> u32 {
    1
}

impl AnnotationRecord {
    /// A hand-made record (human coding, fixtures). Status is `Null` when
    /// the label set is empty, `Valid` otherwise.
    pub fn manual(unit_id: &str, annotator_id: &str, codebook_version: u64, labels: LabelSet) -> Self {
        let parse_status = if labels.resolved.is_empty() && labels.other_entries.is_empty() {
            ParseStatus::Null
        } else {
            ParseStatus::Valid
        };
        AnnotationRecord {
            unit_id: unit_id.to_string(),
            annotator_id: annotator_id.to_string(),
            codebook_version,
            stratum: None,
            labels,
            raw_output: String::new(),
            parse_status,
            repair_level: RepairLevel::None,
            attempts: 1,
            input_tokens: 0,
            output_tokens: 0,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    pub fn with_stratum(mut self, stratum: Stratum) -> Self {
        self.stratum = Some(stratum);
        self
    }

    pub fn is_null(&self) -> bool {
        self.parse_status == ParseStatus::Null
    }
}

pub fn write_records_jsonl<W: Write>(mut w: W, records: &[AnnotationRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_records(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_records_jsonl(std::io::BufWriter::new(file), records)
}

pub fn read_records_jsonl<R: BufRead>(r: R) -> std::io::Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> std::io::Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path)?;
    read_records_jsonl(BufReader::new(file))
}
