//! Hierarchical codebook: domain → group → item.
//!
//! A [`Codebook`] is an immutable, versioned value. Every mutation
//! ([`Codebook::merge_codes`], [`Codebook::add_code`]) returns a new version
//! whose `predecessor` points at the version it was derived from, so the
//! refinement history can be audited and older annotations remapped.

mod file;
mod registry;
mod remap;
mod seed;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{CodebookFile, DomainEntry, GroupEntry, ItemEntry};
pub use registry::CodebookRegistry;
pub use remap::remap_annotations;
pub use seed::{seed_codebook, SEED_CODEBOOK_JSON};

/// Name of the catch-all domain that receives unmatched or retired labels.
pub const OTHER_DOMAIN: &str = "Other";

/// The metadata fields captured as open text alongside codes.
pub const DEFAULT_METADATA_FIELDS: [&str; 3] =
    ["subject_area", "grade_level", "pedagogical_frameworks"];

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("failed to read codebook {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed codebook file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("empty codebook")]
    Empty,
    #[error("duplicate code path {domain}/{group}/{item} (code {code_id})")]
    DuplicateTriple {
        code_id: String,
        domain: String,
        group: String,
        item: String,
    },
    #[error("duplicate code id {0}")]
    DuplicateId(String),
    #[error("alias {alias:?} on code {code_id} collides with code {other}")]
    AliasCollision {
        alias: String,
        code_id: String,
        other: String,
    },
    #[error("merge chain through code {0} is cyclic")]
    CyclicMerge(String),
    #[error("code {code_id} has status {status} but {problem}")]
    BadMergeState {
        code_id: String,
        status: CodeStatus,
        problem: &'static str,
    },
    #[error("code {code_id} merges into unknown code {target}")]
    DanglingMergeTarget { code_id: String, target: String },
    #[error("version {version} is not greater than predecessor {predecessor}")]
    VersionOrder { version: u64, predecessor: u64 },
    #[error("unknown code id {0}")]
    UnknownCode(String),
    #[error("cannot merge code {0} into itself")]
    SelfMerge(String),
    #[error("code {0} is not active")]
    NotActive(String),
    #[error("merge of {0} needs at least one target")]
    NoTargets(String),
    #[error("unknown domain {0:?} (strict-domain mode)")]
    UnknownDomain(String),
    #[error("record for unit {unit_id} is at codebook version {found}, expected {expected}")]
    LineageMismatch {
        unit_id: String,
        found: u64,
        expected: u64,
    },
    #[error("codebook version {to} does not descend from version {from}")]
    NotDescendant { from: u64, to: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeStatus {
    Active,
    Merged,
    Retired,
}

impl std::fmt::Display for CodeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CodeStatus::Active => "active",
            CodeStatus::Merged => "merged",
            CodeStatus::Retired => "retired",
        })
    }
}

/// One action item of the codebook, addressed by its (domain, group, item) path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub code_id: String,
    pub domain: String,
    pub group: String,
    pub item: String,
    pub definition: String,
    pub aliases: Vec<String>,
    pub cross_listed_domains: Vec<String>,
    pub status: CodeStatus,
    pub merge_targets: Vec<String>,
    /// Where the code came from (seed, triage, manual edit).
    pub provenance: Option<String>,
}

impl Code {
    pub fn is_active(&self) -> bool {
        self.status == CodeStatus::Active
    }

    /// "Group/Item", the form used in prompt option lists.
    pub fn group_item_path(&self) -> String {
        format!("{}/{}", self.group, self.item)
    }

    /// "Domain/Group", the key used for group-level analysis.
    pub fn group_key(&self) -> String {
        format!("{}/{}", self.domain, self.group)
    }

    /// Primary domain first, then cross-listed domains in declared order.
    pub fn all_domains(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.domain.as_str())
            .chain(self.cross_listed_domains.iter().map(String::as_str))
    }
}

/// A versioned hierarchical codebook.
///
/// Codes are stored in document order: grouped by domain (in `domains`
/// order), then by group in first-appearance order.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub version_id: u64,
    pub predecessor: Option<u64>,
    pub provenance_note: String,
    pub metadata_fields: Vec<String>,
    domains: Vec<String>,
    codes: Vec<Code>,
    index: HashMap<String, usize>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.version_id == other.version_id
            && self.predecessor == other.predecessor
            && self.provenance_note == other.provenance_note
            && self.metadata_fields == other.metadata_fields
            && self.domains == other.domains
            && self.codes == other.codes
    }
}

/// Arguments for [`Codebook::add_code`].
#[derive(Debug, Clone)]
pub struct NewCode {
    pub domain: String,
    pub group: String,
    pub item: String,
    pub definition: String,
    pub origin: String,
    pub aliases: Vec<String>,
}

impl NewCode {
    pub fn new(domain: &str, group: &str, item: &str, definition: &str, origin: &str) -> Self {
        NewCode {
            domain: domain.to_string(),
            group: group.to_string(),
            item: item.to_string(),
            definition: definition.to_string(),
            origin: origin.to_string(),
            aliases: Vec::new(),
        }
    }
}

impl Codebook {
    /// Builds and validates a codebook. `codes` may be in any order; they are
    /// rearranged into document order (domain order, then group first appearance).
    pub fn new(
        version_id: u64,
        predecessor: Option<u64>,
        provenance_note: impl Into<String>,
        metadata_fields: Vec<String>,
        domains: Vec<String>,
        codes: Vec<Code>,
    ) -> Result<Self, CodebookError> {
        let mut domains = domains;
        for code in &codes {
            if !domains.contains(&code.domain) {
                domains.push(code.domain.clone());
            }
        }
        let codes = document_order(&domains, codes);
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.code_id.clone(), i))
            .collect();
        let cb = Codebook {
            version_id,
            predecessor,
            provenance_note: provenance_note.into(),
            metadata_fields,
            domains,
            codes,
            index,
        };
        cb.validate()?;
        Ok(cb)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodebookError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CodebookError> {
        let file: CodebookFile = serde_json::from_str(text)?;
        file.into_codebook()
    }

    /// Canonical JSON encoding (pretty-printed, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&CodebookFile::from_codebook(self))
            .expect("codebook serialization is infallible");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodebookError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn active_codes(&self) -> impl Iterator<Item = &Code> {
        self.codes.iter().filter(|c| c.is_active())
    }

    pub fn get(&self, code_id: &str) -> Option<&Code> {
        self.index.get(code_id).map(|&i| &self.codes[i])
    }

    pub fn position(&self, code_id: &str) -> Option<usize> {
        self.index.get(code_id).copied()
    }

    pub fn is_active(&self, code_id: &str) -> bool {
        self.get(code_id).is_some_and(Code::is_active)
    }

    pub fn find_by_path(&self, domain: &str, group: &str, item: &str) -> Option<&Code> {
        self.codes
            .iter()
            .find(|c| c.domain == domain && c.group == group && c.item == item)
    }

    /// Groups of one domain in document order.
    pub fn groups_of(&self, domain: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in self.codes.iter().filter(|c| c.domain == domain) {
            if !out.contains(&c.group.as_str()) {
                out.push(&c.group);
            }
        }
        out
    }

    /// Follows merge chains to the set of active codes a code stands for.
    /// Active codes map to themselves, retired codes to the empty set.
    pub fn resolve_active(&self, code_id: &str) -> Result<BTreeSet<String>, CodebookError> {
        let mut out = BTreeSet::new();
        let mut stack = vec![code_id.to_string()];
        let mut seen = HashSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            let code = self
                .get(&id)
                .ok_or_else(|| CodebookError::UnknownCode(id.clone()))?;
            match code.status {
                CodeStatus::Active => {
                    out.insert(id);
                }
                CodeStatus::Merged => stack.extend(code.merge_targets.iter().cloned()),
                CodeStatus::Retired => {}
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<(), CodebookError> {
        if self.codes.is_empty() {
            return Err(CodebookError::Empty);
        }
        if let Some(pred) = self.predecessor {
            if self.version_id <= pred {
                return Err(CodebookError::VersionOrder {
                    version: self.version_id,
                    predecessor: pred,
                });
            }
        }
        let mut ids = HashSet::new();
        let mut triples = HashSet::new();
        for c in &self.codes {
            if !ids.insert(c.code_id.as_str()) {
                return Err(CodebookError::DuplicateId(c.code_id.clone()));
            }
            if !triples.insert((c.domain.as_str(), c.group.as_str(), c.item.as_str())) {
                return Err(CodebookError::DuplicateTriple {
                    code_id: c.code_id.clone(),
                    domain: c.domain.clone(),
                    group: c.group.clone(),
                    item: c.item.clone(),
                });
            }
            match c.status {
                CodeStatus::Merged if c.merge_targets.is_empty() => {
                    return Err(CodebookError::BadMergeState {
                        code_id: c.code_id.clone(),
                        status: c.status,
                        problem: "has no merge targets",
                    })
                }
                CodeStatus::Active | CodeStatus::Retired if !c.merge_targets.is_empty() => {
                    return Err(CodebookError::BadMergeState {
                        code_id: c.code_id.clone(),
                        status: c.status,
                        problem: "lists merge targets",
                    })
                }
                _ => {}
            }
        }
        for c in &self.codes {
            for t in &c.merge_targets {
                if !self.index.contains_key(t) {
                    return Err(CodebookError::DanglingMergeTarget {
                        code_id: c.code_id.clone(),
                        target: t.clone(),
                    });
                }
            }
        }
        self.check_merge_acyclic()?;
        self.check_aliases()?;
        Ok(())
    }

    fn check_merge_acyclic(&self) -> Result<(), CodebookError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        fn visit(cb: &Codebook, i: usize, marks: &mut [Mark]) -> Result<(), CodebookError> {
            match marks[i] {
                Mark::Done => return Ok(()),
                Mark::Open => return Err(CodebookError::CyclicMerge(cb.codes[i].code_id.clone())),
                Mark::New => {}
            }
            marks[i] = Mark::Open;
            for t in &cb.codes[i].merge_targets {
                visit(cb, cb.index[t], marks)?;
            }
            marks[i] = Mark::Done;
            Ok(())
        }
        let mut marks = vec![Mark::New; self.codes.len()];
        for i in 0..self.codes.len() {
            visit(self, i, &mut marks)?;
        }
        Ok(())
    }

    fn check_aliases(&self) -> Result<(), CodebookError> {
        let mut seen: HashMap<String, &str> = HashMap::new();
        for c in &self.codes {
            for a in &c.aliases {
                let key = crate::parser::normalize_text(a);
                if let Some(other) = seen.get(&key) {
                    if *other != c.code_id {
                        return Err(CodebookError::AliasCollision {
                            alias: a.clone(),
                            code_id: c.code_id.clone(),
                            other: other.to_string(),
                        });
                    }
                }
                seen.insert(key, &c.code_id);
            }
        }
        // An alias may not shadow another code's own label.
        for c in &self.codes {
            let key = crate::parser::normalize_text(&c.item);
            if let Some(owner) = seen.get(&key) {
                if *owner != c.code_id {
                    return Err(CodebookError::AliasCollision {
                        alias: c.item.clone(),
                        code_id: owner.to_string(),
                        other: c.code_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn successor(&self, codes: Vec<Code>, domains: Vec<String>, note: String) -> Result<Self, CodebookError> {
        Codebook::new(
            self.version_id + 1,
            Some(self.version_id),
            note,
            self.metadata_fields.clone(),
            domains,
            codes,
        )
    }

    /// Marks `source` as merged into `targets` in a new version.
    pub fn merge_codes(&self, source: &str, targets: &[&str]) -> Result<Self, CodebookError> {
        let src = self
            .get(source)
            .ok_or_else(|| CodebookError::UnknownCode(source.to_string()))?;
        if targets.is_empty() {
            return Err(CodebookError::NoTargets(source.to_string()));
        }
        if targets.contains(&source) {
            return Err(CodebookError::SelfMerge(source.to_string()));
        }
        if !src.is_active() {
            return Err(CodebookError::NotActive(source.to_string()));
        }
        for t in targets {
            let code = self
                .get(t)
                .ok_or_else(|| CodebookError::UnknownCode(t.to_string()))?;
            if !code.is_active() {
                return Err(CodebookError::NotActive(t.to_string()));
            }
        }
        let mut merge_targets: Vec<String> = Vec::new();
        for t in targets {
            if !merge_targets.iter().any(|m| m == t) {
                merge_targets.push(t.to_string());
            }
        }
        let codes = self
            .codes
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if c.code_id == source {
                    c.status = CodeStatus::Merged;
                    c.merge_targets = merge_targets.clone();
                }
                c
            })
            .collect();
        let note = format!("merged {} into {}", source, merge_targets.join(", "));
        self.successor(codes, self.domains.clone(), note)
    }

    /// Marks `code_id` as retired in a new version.
    pub fn retire_code(&self, code_id: &str) -> Result<Self, CodebookError> {
        let code = self
            .get(code_id)
            .ok_or_else(|| CodebookError::UnknownCode(code_id.to_string()))?;
        if !code.is_active() {
            return Err(CodebookError::NotActive(code_id.to_string()));
        }
        let codes = self
            .codes
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if c.code_id == code_id {
                    c.status = CodeStatus::Retired;
                }
                c
            })
            .collect();
        self.successor(codes, self.domains.clone(), format!("retired {code_id}"))
    }

    /// Appends a code under domain/group in a new version. A group that does
    /// not exist yet is created at the end of its domain. With `strict_domains`
    /// the domain must already exist.
    pub fn add_code(&self, new: NewCode, strict_domains: bool) -> Result<Self, CodebookError> {
        if self.find_by_path(&new.domain, &new.group, &new.item).is_some() {
            let existing = self.find_by_path(&new.domain, &new.group, &new.item).unwrap();
            return Err(CodebookError::DuplicateTriple {
                code_id: existing.code_id.clone(),
                domain: new.domain,
                group: new.group,
                item: new.item,
            });
        }
        let mut domains = self.domains.clone();
        if !domains.contains(&new.domain) {
            if strict_domains {
                return Err(CodebookError::UnknownDomain(new.domain));
            }
            domains.push(new.domain.clone());
        }
        let code_id = self.fresh_id(&new.domain, &new.group, &new.item);
        let note = format!("added {} ({})", code_id, new.origin);
        let code = Code {
            code_id,
            domain: new.domain,
            group: new.group,
            item: new.item,
            definition: new.definition,
            aliases: new.aliases,
            cross_listed_domains: Vec::new(),
            status: CodeStatus::Active,
            merge_targets: Vec::new(),
            provenance: Some(new.origin),
        };
        let mut codes = self.codes.clone();
        codes.push(code);
        self.successor(codes, domains, note)
    }

    fn fresh_id(&self, domain: &str, group: &str, item: &str) -> String {
        let base = make_code_id(domain, group, item);
        if !self.index.contains_key(&base) {
            return base;
        }
        (2..)
            .map(|n| format!("{base}-{n}"))
            .find(|id| !self.index.contains_key(id))
            .unwrap()
    }

    /// Lists code-level differences from `older` to `self`.
    pub fn diff(&self, older: &Codebook) -> Vec<CodeChange> {
        let mut out = Vec::new();
        for c in &self.codes {
            match older.get(&c.code_id) {
                None => out.push(CodeChange::Added(c.code_id.clone())),
                Some(prev) if prev.status != c.status => out.push(CodeChange::StatusChanged {
                    code_id: c.code_id.clone(),
                    from: prev.status,
                    to: c.status,
                }),
                Some(prev) if prev != c => out.push(CodeChange::Edited(c.code_id.clone())),
                Some(_) => {}
            }
        }
        for c in &older.codes {
            if self.get(&c.code_id).is_none() {
                out.push(CodeChange::Removed(c.code_id.clone()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum CodeChange {
    Added(String),
    Removed(String),
    Edited(String),
    StatusChanged {
        code_id: String,
        from: CodeStatus,
        to: CodeStatus,
    },
}

impl std::fmt::Display for CodeChange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CodeChange::Added(id) => write!(f, "+ {id}"),
            CodeChange::Removed(id) => write!(f, "- {id}"),
            CodeChange::Edited(id) => write!(f, "~ {id}"),
            CodeChange::StatusChanged { code_id, from, to } => {
                write!(f, "~ {code_id}: {from} -> {to}")
            }
        }
    }
}

/// Builds a readable stable id: `<domain initials>.<group slug>.<item slug>`.
pub fn make_code_id(domain: &str, group: &str, item: &str) -> String {
    let initials: String = domain
        .split_whitespace()
        .filter(|w| w.chars().next().is_some_and(char::is_alphanumeric))
        .filter(|w| !matches!(w.to_ascii_lowercase().as_str(), "and" | "of" | "the"))
        .filter_map(|w| w.chars().next())
        .flat_map(char::to_lowercase)
        .collect();
    format!("{}.{}.{}", initials, slug(group), slug(item))
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

fn document_order(domains: &[String], codes: Vec<Code>) -> Vec<Code> {
    let mut out = Vec::with_capacity(codes.len());
    for d in domains {
        let in_domain: Vec<&Code> = codes.iter().filter(|c| &c.domain == d).collect();
        let mut groups: Vec<&str> = Vec::new();
        for c in &in_domain {
            if !groups.contains(&c.group.as_str()) {
                groups.push(&c.group);
            }
        }
        for g in groups {
            out.extend(in_domain.iter().filter(|c| c.group == g).map(|c| (*c).clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(id: &str, domain: &str, group: &str, item: &str) -> Code {
        Code {
            code_id: id.into(),
            domain: domain.into(),
            group: group.into(),
            item: item.into(),
            definition: String::new(),
            aliases: vec![],
            cross_listed_domains: vec![],
            status: CodeStatus::Active,
            merge_targets: vec![],
            provenance: None,
        }
    }

    fn three_codes() -> Codebook {
        Codebook::new(
            1,
            None,
            "fixture",
            vec![],
            vec!["IP".into()],
            vec![
                code("gw", "IP", "Collaborative Learning", "Gallery Walk"),
                code("grp", "IP", "Collaborative Learning", "Group Work"),
                code("sd", "IP", "Collaborative Learning", "Student Discourse"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn empty_codebook_rejected() {
        let err = Codebook::new(1, None, "", vec![], vec![], vec![]).unwrap_err();
        assert!(matches!(err, CodebookError::Empty));
        assert_eq!(err.to_string(), "empty codebook");
    }

    #[test]
    fn duplicate_triple_rejected() {
        let err = Codebook::new(
            1,
            None,
            "",
            vec![],
            vec![],
            vec![code("a", "D", "G", "I"), code("b", "D", "G", "I")],
        )
        .unwrap_err();
        assert!(matches!(err, CodebookError::DuplicateTriple { ref code_id, .. } if code_id == "b"));
    }

    #[test]
    fn alias_collision_names_offender() {
        let mut a = code("a", "D", "G", "English Language Learners (ELLs)");
        a.aliases = vec!["ELL".into()];
        let mut b = code("b", "D", "G", "Emergent Literacy");
        b.aliases = vec!["ell".into()];
        let err = Codebook::new(1, None, "", vec![], vec![], vec![a, b]).unwrap_err();
        match err {
            CodebookError::AliasCollision { code_id, other, .. } => {
                assert_eq!(code_id, "b");
                assert_eq!(other, "a");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn cyclic_merge_rejected() {
        let mut a = code("a", "D", "G", "A");
        a.status = CodeStatus::Merged;
        a.merge_targets = vec!["b".into()];
        let mut b = code("b", "D", "G", "B");
        b.status = CodeStatus::Merged;
        b.merge_targets = vec!["a".into()];
        let err = Codebook::new(1, None, "", vec![], vec![], vec![a, b, code("c", "D", "G", "C")])
            .unwrap_err();
        assert!(matches!(err, CodebookError::CyclicMerge(_)));
    }

    #[test]
    fn merge_one_to_many() {
        let v1 = three_codes();
        let v2 = v1.merge_codes("gw", &["grp", "sd"]).unwrap();
        assert_eq!(v2.version_id, 2);
        assert_eq!(v2.predecessor, Some(1));
        let gw = v2.get("gw").unwrap();
        assert_eq!(gw.status, CodeStatus::Merged);
        assert_eq!(gw.merge_targets, vec!["grp", "sd"]);
        assert_eq!(v2.get("grp"), v1.get("grp"));
        // v1 untouched
        assert!(v1.get("gw").unwrap().is_active());
        let resolved: Vec<_> = v2.resolve_active("gw").unwrap().into_iter().collect();
        assert_eq!(resolved, vec!["grp", "sd"]);
    }

    #[test]
    fn merge_errors() {
        let v1 = three_codes();
        assert!(matches!(v1.merge_codes("gw", &["gw"]), Err(CodebookError::SelfMerge(_))));
        assert!(matches!(v1.merge_codes("nope", &["gw"]), Err(CodebookError::UnknownCode(_))));
        assert!(matches!(v1.merge_codes("gw", &["nope"]), Err(CodebookError::UnknownCode(_))));
        let v2 = v1.merge_codes("gw", &["grp"]).unwrap();
        assert!(matches!(v2.merge_codes("gw", &["sd"]), Err(CodebookError::NotActive(_))));
        assert!(matches!(v2.merge_codes("sd", &["gw"]), Err(CodebookError::NotActive(_))));
    }

    #[test]
    fn merge_chain_resolution() {
        let v2 = three_codes().merge_codes("gw", &["grp", "sd"]).unwrap();
        let v3 = v2.merge_codes("sd", &["grp"]).unwrap();
        let resolved: Vec<_> = v3.resolve_active("gw").unwrap().into_iter().collect();
        assert_eq!(resolved, vec!["grp"]);
    }

    #[test]
    fn add_code_creates_group_in_document_order() {
        let v1 = three_codes();
        let v2 = v1
            .add_code(NewCode::new("IP", "Routines", "Warm-ups", "d", "triage"), true)
            .unwrap();
        let v3 = v2
            .add_code(NewCode::new("IP", "Collaborative Learning", "Jigsaw", "d", "triage"), true)
            .unwrap();
        let items: Vec<_> = v3.codes().iter().map(|c| c.item.as_str()).collect();
        assert_eq!(
            items,
            vec!["Gallery Walk", "Group Work", "Student Discourse", "Jigsaw", "Warm-ups"]
        );
        assert_eq!(v3.version_id, 3);
        assert_eq!(v3.get("i.routines.warm-ups").unwrap().provenance.as_deref(), Some("triage"));
    }

    #[test]
    fn add_code_errors() {
        let v1 = three_codes();
        let dup = v1.add_code(NewCode::new("IP", "Collaborative Learning", "Group Work", "", "x"), false);
        assert!(matches!(dup, Err(CodebookError::DuplicateTriple { .. })));
        let strict = v1.add_code(NewCode::new("Nope", "G", "I", "", "x"), true);
        assert!(matches!(strict, Err(CodebookError::UnknownDomain(_))));
        let lenient = v1.add_code(NewCode::new("Nope", "G", "I", "", "x"), false).unwrap();
        assert_eq!(lenient.domains().last().unwrap(), "Nope");
    }

    #[test]
    fn code_ids_are_readable() {
        assert_eq!(
            make_code_id("Student Needs and Context", "Classroom Setting", "Low-Tech"),
            "snc.classroom-setting.low-tech"
        );
        assert_eq!(
            make_code_id("Student Needs and Context", "Student Profile", "Special Education (IEP/504)"),
            "snc.student-profile.special-education-iep-504"
        );
    }

    #[test]
    fn diff_reports_changes() {
        let v1 = three_codes();
        let v2 = v1.merge_codes("gw", &["grp"]).unwrap();
        let v3 = v2.add_code(NewCode::new("IP", "G", "New", "", "x"), true).unwrap();
        let changes = v3.diff(&v1);
        assert_eq!(changes.len(), 2);
        assert!(changes.contains(&CodeChange::Added("i.g.new".into())));
    }
}
