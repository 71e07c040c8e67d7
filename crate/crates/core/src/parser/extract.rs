//! Recovery of a JSON object from raw model output.
//!
//! The ladder is tried in order and stops at the first rung that yields an
//! object: whole-text parse, fenced or embedded balanced object, targeted
//! repairs (preamble/epilogue, trailing commas, truncation).

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairLevel {
    None,
    Fenced,
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub payload: Option<Map<String, Value>>,
    pub repair: RepairLevel,
    /// What was done to get the payload, for the audit trail.
    pub notes: Vec<String>,
}

impl Extraction {
    fn found(payload: Map<String, Value>, repair: RepairLevel, notes: Vec<String>) -> Self {
        Extraction {
            payload: Some(payload),
            repair,
            notes,
        }
    }
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n?(.*?)```").unwrap())
}

fn parse_object(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

pub fn extract_structured(raw: &str) -> Extraction {
    let trimmed = raw.trim();
    if let Some(obj) = parse_object(trimmed) {
        return Extraction::found(obj, RepairLevel::None, Vec::new());
    }

    for cap in fence_re().captures_iter(trimmed) {
        if let Some(obj) = parse_object(cap[1].trim()) {
            return Extraction::found(obj, RepairLevel::Fenced, vec!["fenced block".into()]);
        }
    }
    for (start, end) in balanced_objects(trimmed) {
        if let Some(obj) = parse_object(&trimmed[start..end]) {
            let mut notes = vec!["embedded object".to_string()];
            if start > 0 {
                notes.push("dropped preamble".into());
            }
            if end < trimmed.len() {
                notes.push("dropped epilogue".into());
            }
            return Extraction::found(obj, RepairLevel::Fenced, notes);
        }
    }

    if let Some(start) = trimmed.find('{') {
        let mut candidate = &trimmed[start..];
        let mut notes = Vec::new();
        if start > 0 {
            notes.push("dropped preamble".to_string());
        }
        if let Some(idx) = candidate.find("```") {
            candidate = &candidate[..idx];
            notes.push("dropped unterminated fence".into());
        }
        if let Some((obj, mut repair_notes)) = repair_object(candidate) {
            notes.append(&mut repair_notes);
            log::debug!("repaired model output: {}", notes.join(", "));
            return Extraction::found(obj, RepairLevel::Repaired, notes);
        }
    }

    Extraction {
        payload: None,
        repair: RepairLevel::Failed,
        notes: Vec::new(),
    }
}

/// Byte ranges of top-level balanced `{...}` spans, string-aware.
fn balanced_objects(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut end = None;
        for (j, &b) in bytes.iter().enumerate().skip(i) {
            if in_str {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_str = false;
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        end = Some(j + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                out.push((i, e));
                i = e;
            }
            None => break,
        }
    }
    out
}

struct Scan {
    text: String,
    /// Byte offsets of structural commas, for truncation fallback.
    commas: Vec<usize>,
    closed_early: bool,
    notes: Vec<String>,
}

/// String-aware rewrite: drops trailing commas, stops at the end of the
/// first complete object and closes whatever is left open.
fn scan_and_close(s: &str) -> Scan {
    let mut out = String::with_capacity(s.len() + 8);
    let mut stack: Vec<char> = Vec::new();
    let mut commas = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    let mut closed_early = false;
    let mut notes = Vec::new();
    let mut dropped_trailing_comma = false;

    for ch in s.chars() {
        if in_str {
            out.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
            }
            continue;
        }
        match ch {
            '"' => {
                in_str = true;
                out.push(ch);
            }
            '{' | '[' => {
                stack.push(if ch == '{' { '}' } else { ']' });
                out.push(ch);
            }
            '}' | ']' => {
                let trimmed_len = out.trim_end().len();
                if out[..trimmed_len].ends_with(',') {
                    out.truncate(trimmed_len - 1);
                    dropped_trailing_comma = true;
                }
                // Mismatched closers are replaced by the expected one.
                match stack.pop() {
                    Some(expected) => out.push(expected),
                    None => out.push(ch),
                }
                if stack.is_empty() {
                    closed_early = true;
                    break;
                }
            }
            ',' => {
                commas.push(out.len());
                out.push(ch);
            }
            _ => out.push(ch),
        }
    }
    if dropped_trailing_comma {
        notes.push("stripped trailing comma".to_string());
    }
    if !closed_early {
        if in_str {
            if escaped {
                out.pop();
            }
            out.push('"');
            notes.push("closed unterminated string".into());
        }
        let trimmed_len = out.trim_end().len();
        out.truncate(trimmed_len);
        if out.ends_with(',') {
            out.pop();
        }
        if out.ends_with(':') {
            out.push_str("null");
        }
        if !stack.is_empty() {
            notes.push(format!("closed {} open bracket(s)", stack.len()));
        }
        while let Some(c) = stack.pop() {
            out.push(c);
        }
    } else if out.len() < s.len() {
        notes.push("dropped epilogue".into());
    }
    Scan {
        text: out,
        commas,
        closed_early,
        notes,
    }
}

fn repair_object(candidate: &str) -> Option<(Map<String, Value>, Vec<String>)> {
    let scan = scan_and_close(candidate);
    if let Some(obj) = parse_object(&scan.text) {
        return Some((obj, scan.notes));
    }
    if scan.closed_early {
        return None;
    }
    // Truncated mid-key or mid-value: back off to an earlier comma.
    for &pos in scan.commas.iter().rev().take(32) {
        let retry = scan_and_close(&candidate[..pos.min(candidate.len())]);
        if let Some(obj) = parse_object(&retry.text) {
            let mut notes = retry.notes;
            notes.push("dropped truncated tail".into());
            return Some((obj, notes));
        }
    }
    None
}
