//! Label normalization against a codebook: exact → alias → fuzzy → other.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::codebook::{CodeStatus, Codebook};

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionKind {
    Exact,
    Alias,
    Fuzzy,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub code_ids: BTreeSet<String>,
    pub kind: ResolutionKind,
    /// Similarity of the winning fuzzy candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    /// True for labels of the explicit "Other/..." form.
    #[serde(default)]
    pub explicit_other: bool,
}

impl Resolution {
    fn other(explicit_other: bool) -> Self {
        Resolution {
            code_ids: BTreeSet::new(),
            kind: ResolutionKind::Other,
            similarity: None,
            explicit_other,
        }
    }
}

/// Casefolds, replaces punctuation with spaces and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Normalized edit-distance similarity in [0, 1].
pub fn similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Precomputed lookup tables for one codebook version.
#[derive(Debug)]
pub struct Normalizer<'a> {
    cb: &'a Codebook,
    threshold: f64,
    exact: HashMap<String, usize>,
    alias: HashMap<String, usize>,
    fuzzy: Vec<(String, usize)>,
}

impl<'a> Normalizer<'a> {
    pub fn new(cb: &'a Codebook) -> Self {
        Self::with_threshold(cb, DEFAULT_FUZZY_THRESHOLD)
    }

    pub fn with_threshold(cb: &'a Codebook, threshold: f64) -> Self {
        let mut exact = HashMap::new();
        let mut alias = HashMap::new();
        let mut fuzzy = Vec::new();
        for (pos, code) in cb.codes().iter().enumerate() {
            if code.status == CodeStatus::Retired {
                continue;
            }
            let item = normalize_text(&code.item);
            for key in [
                item.clone(),
                normalize_text(&code.group_item_path()),
                normalize_text(&format!("{}/{}/{}", code.domain, code.group, code.item)),
            ] {
                // First in document order wins when two groups share an item label.
                exact.entry(key).or_insert(pos);
            }
            fuzzy.push((item, pos));
            for a in &code.aliases {
                let key = normalize_text(a);
                alias.entry(key.clone()).or_insert(pos);
                fuzzy.push((key, pos));
            }
        }
        Normalizer {
            cb,
            threshold,
            exact,
            alias,
            fuzzy,
        }
    }

    pub fn codebook(&self) -> &'a Codebook {
        self.cb
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn resolved(&self, pos: usize, kind: ResolutionKind, sim: Option<f64>) -> Resolution {
        let id = &self.cb.codes()[pos].code_id;
        let code_ids = self
            .cb
            .resolve_active(id)
            .expect("normalizer tables only reference known codes");
        Resolution {
            code_ids,
            kind,
            similarity: sim,
            explicit_other: false,
        }
    }

    pub fn normalize(&self, raw: &str) -> Resolution {
        let key = normalize_text(raw);
        if key.is_empty() {
            return Resolution::other(false);
        }
        let last_segment = raw
            .rsplit_once('/')
            .map(|(_, tail)| normalize_text(tail))
            .filter(|t| !t.is_empty() && *t != key);

        if let Some(&pos) = self.exact.get(&key) {
            return self.resolved(pos, ResolutionKind::Exact, None);
        }
        if let Some(&pos) = self.alias.get(&key) {
            return self.resolved(pos, ResolutionKind::Alias, None);
        }
        if let Some(tail) = &last_segment {
            if let Some(&pos) = self.exact.get(tail) {
                return self.resolved(pos, ResolutionKind::Exact, None);
            }
            if let Some(&pos) = self.alias.get(tail) {
                return self.resolved(pos, ResolutionKind::Alias, None);
            }
        }
        if is_explicit_other(raw) {
            return Resolution::other(true);
        }

        let mut best: Option<(f64, usize)> = None;
        let mut tied = false;
        for probe in std::iter::once(&key).chain(last_segment.as_ref()) {
            for (cand, pos) in &self.fuzzy {
                let sim = similarity(probe, cand);
                if sim < self.threshold {
                    continue;
                }
                match best {
                    None => best = Some((sim, *pos)),
                    Some((b, bpos)) => {
                        if sim > b || (sim == b && *pos < bpos) {
                            tied = sim == b && *pos != bpos;
                            best = Some((sim, *pos));
                        } else if sim == b && *pos != bpos {
                            tied = true;
                        }
                    }
                }
            }
        }
        match best {
            Some((sim, pos)) => {
                if tied {
                    log::info!(
                        "fuzzy tie for {raw:?} at similarity {sim:.3}; kept {} by document order",
                        self.cb.codes()[pos].code_id
                    );
                }
                self.resolved(pos, ResolutionKind::Fuzzy, Some(sim))
            }
            None => Resolution::other(false),
        }
    }
}

/// "Other", "Other/…", "Other: …" (case-insensitive).
pub fn is_explicit_other(raw: &str) -> bool {
    let t = raw.trim();
    let lower = t.to_lowercase();
    match lower.strip_prefix("other") {
        Some(rest) => {
            let rest = rest.trim_start();
            rest.is_empty() || rest.starts_with('/') || rest.starts_with(':') || rest.starts_with('-')
        }
        None => false,
    }
}

/// Specification text of an explicit Other label, if any was given.
pub fn other_specification(raw: &str) -> String {
    let t = raw.trim();
    let rest = t.get(5..).unwrap_or("").trim_start();
    rest.trim_start_matches(['/', ':', '-']).trim().to_string()
}

/// Convenience wrapper using the default threshold.
pub fn normalize_label(raw: &str, cb: &Codebook) -> Resolution {
    Normalizer::new(cb).normalize(raw)
}
