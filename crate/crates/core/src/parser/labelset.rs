use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;
use serde_json::{Map, Value};

use super::normalize::{is_explicit_other, normalize_text, other_specification, Normalizer};
use super::record::{AiResponseType, LabelSet, OtherEntry, ParseStatus, RawLabel};
use super::{extract_structured, RepairLevel};

/// Payload keys of the annotation output contract, paired with the domain
/// each one covers.
pub const DIMENSION_KEYS: [(&str, &str); 5] = [
    ("instructional_practices", "Instructional Practices"),
    ("curriculum_content", "Curriculum and Content Focus"),
    ("student_needs_context", "Student Needs and Context"),
    ("assessment_feedback", "Assessment and Feedback"),
    ("professional_responsibilities", "Professional Responsibilities"),
];
pub const OTHER_KEY: &str = "other";
pub const METADATA_KEY: &str = "metadata";
/// Flat label list accepted in addition to the per-dimension keys.
pub const LABELS_KEY: &str = "labels";

const PLACEHOLDER_SPECIFICATION: &str = "specification";

fn grade_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^Grade_(K|PK|TK|HS|MS|ES|[0-9]{1,2})$").unwrap())
}

pub fn is_grade_label(s: &str) -> bool {
    grade_re().is_match(s)
}

/// Maps a payload key (any spelling) to its dimension's domain name.
fn dimension_for_key(key: &str) -> Option<&'static str> {
    let norm = normalize_text(key);
    DIMENSION_KEYS
        .iter()
        .find(|(k, domain)| normalize_text(k) == norm || normalize_text(domain) == norm)
        .map(|(_, domain)| *domain)
}

struct Builder<'n, 'cb> {
    normalizer: &'n Normalizer<'cb>,
    out: LabelSet,
    seen_raw: HashSet<(String, Option<String>)>,
}

impl Builder<'_, '_> {
    fn label(&mut self, text: &str, dimension: Option<&str>) {
        let text = text.trim();
        if text.is_empty() {
            return;
        }
        if !self
            .seen_raw
            .insert((normalize_text(text), dimension.map(str::to_string)))
        {
            return;
        }
        let res = self.normalizer.normalize(text);
        if res.explicit_other {
            self.other(dimension.unwrap_or("Other"), &other_specification(text));
        } else if res.code_ids.is_empty() {
            self.out
                .warnings
                .push(format!("unresolved label {text:?}"));
        }
        self.out.resolved.extend(res.code_ids.iter().cloned());
        self.out.raw_labels.push(RawLabel {
            text: text.to_string(),
            dimension: dimension.map(str::to_string),
            kind: res.kind,
            code_ids: res.code_ids.into_iter().collect(),
        });
    }

    fn other(&mut self, category: &str, specification: &str) {
        let spec = specification.trim();
        let missing = spec.is_empty() || spec.eq_ignore_ascii_case(PLACEHOLDER_SPECIFICATION);
        if missing {
            self.out
                .warnings
                .push(format!("Other entry under {category:?} has missing justification"));
        }
        let entry = OtherEntry {
            category: category.to_string(),
            specification: spec.to_string(),
            missing_justification: missing,
        };
        if !self.out.other_entries.contains(&entry) {
            self.out.other_entries.push(entry);
        }
    }

    fn labels_from(&mut self, value: &Value, dimension: Option<&str>) {
        match value {
            Value::String(s) => self.label(s, dimension),
            Value::Array(items) => {
                for v in items {
                    self.labels_from(v, dimension);
                }
            }
            Value::Object(obj) => {
                let label = ["label", "code", "name"]
                    .iter()
                    .find_map(|k| obj.get(*k).and_then(Value::as_str));
                let spec = ["specification", "justification"]
                    .iter()
                    .find_map(|k| obj.get(*k).and_then(Value::as_str));
                match (label, spec) {
                    (Some(l), Some(s)) if is_explicit_other(l) => {
                        self.other(dimension.unwrap_or("Other"), s)
                    }
                    (Some(l), _) => self.label(l, dimension),
                    (None, _) => self.out.warnings.push(format!(
                        "label object without a label field under {:?}",
                        dimension.unwrap_or("labels")
                    )),
                }
            }
            Value::Null => {}
            other => self
                .out
                .warnings
                .push(format!("ignored non-text label value {other}")),
        }
    }

    fn others_from(&mut self, value: &Value) {
        match value {
            Value::Array(items) => items.iter().for_each(|v| self.others_from(v)),
            Value::String(s) => {
                let spec = if is_explicit_other(s) {
                    other_specification(s)
                } else {
                    s.clone()
                };
                self.other("Other", &spec);
            }
            Value::Object(obj) => {
                let category = obj
                    .get("label")
                    .or_else(|| obj.get("category"))
                    .and_then(Value::as_str)
                    .unwrap_or("Other");
                let spec = obj
                    .get("specification")
                    .or_else(|| obj.get("justification"))
                    .and_then(Value::as_str)
                    .unwrap_or("");
                self.other(category, spec);
            }
            Value::Null => {}
            other => self
                .out
                .warnings
                .push(format!("ignored non-text Other value {other}")),
        }
    }

    fn metadata_from(&mut self, value: &Value) {
        let Some(obj) = value.as_object() else {
            self.out.warnings.push("metadata is not an object".into());
            return;
        };
        let meta = &mut self.out.metadata;
        let mut warnings = Vec::new();
        for (key, v) in obj {
            match key.as_str() {
                "subject_area" => meta.subject_area = text_of(v).filter(|s| !s.is_empty()),
                "grade_level" => match text_of(v) {
                    Some(g) if is_grade_label(&g) => meta.grade_level = Some(g),
                    Some(g) if g.is_empty() => {}
                    Some(g) => {
                        warnings.push(format!("grade_level {g:?} does not follow Grade_* form"));
                        meta.demoted.insert(key.clone(), g);
                    }
                    None => {}
                },
                "pedagogical_frameworks" => {
                    meta.pedagogical_frameworks = match v {
                        Value::Array(items) => items.iter().filter_map(text_of).filter(|s| !s.is_empty()).collect(),
                        _ => text_of(v).filter(|s| !s.is_empty()).into_iter().collect(),
                    };
                }
                "ai_response_type" => if let Some(t) = text_of(v) { match AiResponseType::parse(&t) {
                    Some(r) => meta.ai_response_type = Some(r),
                    None if t.is_empty() => {}
                    None => {
                        warnings.push(format!("ai_response_type {t:?} is not a known response type"));
                        meta.demoted.insert(key.clone(), t);
                    }
                } },
                other => warnings.push(format!("unknown metadata field {other:?}")),
            }
        }
        self.out.warnings.extend(warnings);
    }
}

fn text_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// Normalizes every label of an extracted payload.
pub fn resolve_labelset(payload: &Map<String, Value>, normalizer: &Normalizer<'_>) -> LabelSet {
    let mut b = Builder {
        normalizer,
        out: LabelSet::default(),
        seen_raw: HashSet::new(),
    };
    for (key, value) in payload {
        if key == METADATA_KEY {
            b.metadata_from(value);
        } else if normalize_text(key) == OTHER_KEY {
            b.others_from(value);
        } else if key == LABELS_KEY {
            b.labels_from(value, None);
        } else if let Some(domain) = dimension_for_key(key) {
            b.labels_from(value, Some(domain));
        } else {
            b.out.warnings.push(format!("unknown payload key {key:?}"));
            b.labels_from(value, None);
        }
    }
    b.out
}

/// Validity from the repair level and what was resolved.
pub fn classify_validity(repair: RepairLevel, labels: &LabelSet) -> ParseStatus {
    let usable = !labels.resolved.is_empty() || labels.has_explicit_other();
    match repair {
        RepairLevel::None if usable => ParseStatus::Valid,
        RepairLevel::Fenced | RepairLevel::Repaired if usable => ParseStatus::Recovered,
        _ => ParseStatus::Null,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedOutput {
    pub labels: LabelSet,
    pub repair: RepairLevel,
    pub status: ParseStatus,
}

/// Extraction, normalization and validity in one step. A null result
/// always carries an empty resolved set.
pub fn parse_output(raw: &str, normalizer: &Normalizer<'_>) -> ParsedOutput {
    let extraction = extract_structured(raw);
    let mut labels = match &extraction.payload {
        Some(p) => resolve_labelset(p, normalizer),
        None => LabelSet::default(),
    };
    let status = classify_validity(extraction.repair, &labels);
    if status == ParseStatus::Null {
        labels.resolved.clear();
    }
    ParsedOutput {
        labels,
        repair: extraction.repair,
        status,
    }
}
