//! Conversation corpus: ingest with PII scrubbing, trio and single-turn
//! annotation units, and seeded sampling.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sample of {requested} exceeds population of {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("unknown unit {0}")]
    UnknownUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Teacher,
    Assistant,
}

/// Which side of the exchange a single-turn unit comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Request,
    Response,
}

impl Stratum {
    pub fn of(author: Author) -> Self {
        match author {
            Author::Teacher => Stratum::Request,
            Author::Assistant => Stratum::Response,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stratum::Request => "Request",
            Stratum::Response => "Response",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: String,
    pub conversation_id: String,
    pub index: u32,
    pub author: Author,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub messages: Vec<Message>,
}

/// Teacher request, assistant response and optional teacher follow-up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trio {
    pub t1: Message,
    pub a1: Message,
    pub t2: Option<Message>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Trio,
    SingleTurn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UnitPayload {
    Trio(Trio),
    Message(Message),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationUnit {
    pub unit_id: String,
    pub kind: UnitKind,
    pub payload: UnitPayload,
    /// Set for single turns only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<Stratum>,
}

impl AnnotationUnit {
    pub fn conversation_id(&self) -> &str {
        match &self.payload {
            UnitPayload::Trio(t) => &t.t1.conversation_id,
            UnitPayload::Message(m) => &m.conversation_id,
        }
    }

    /// Message ids covered by this unit.
    pub fn message_ids(&self) -> Vec<&str> {
        match &self.payload {
            UnitPayload::Trio(t) => std::iter::once(&t.t1)
                .chain(std::iter::once(&t.a1))
                .chain(t.t2.as_ref())
                .map(|m| m.message_id.as_str())
                .collect(),
            UnitPayload::Message(m) => vec![m.message_id.as_str()],
        }
    }
}

pub fn trio_unit_id(t1: &Message) -> String {
    format!("{}#trio", t1.message_id)
}

/// Incoming record before validation. Every field is optional so that
/// incomplete lines can be reported instead of aborting the ingest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawMessage {
    pub message_id: Option<String>,
    pub conversation_id: Option<String>,
    pub index: Option<u32>,
    pub author: Option<String>,
    pub text: Option<String>,
    pub timestamp: Option<String>,
}

/// Text rewrite applied before anything is stored.
pub trait Scrubber: Send + Sync {
    fn scrub(&self, text: &str) -> String;
}

impl<F> Scrubber for F
where
    F: Fn(&str) -> String + Send + Sync,
{
    fn scrub(&self, text: &str) -> String {
        self(text)
    }
}

/// Replaces e-mail addresses and phone numbers with placeholders.
#[derive(Debug, Default, Clone, Copy)]
pub struct PatternScrubber;

impl Scrubber for PatternScrubber {
    fn scrub(&self, text: &str) -> String {
        static EMAIL: OnceLock<Regex> = OnceLock::new();
        static PHONE: OnceLock<Regex> = OnceLock::new();
        let email = EMAIL.get_or_init(|| Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap());
        let phone = PHONE.get_or_init(|| {
            Regex::new(r"(?:\+?1[\s.-]?)?\(?\b[0-9]{3}\)?[\s.-]?[0-9]{3}[\s.-][0-9]{4}\b").unwrap()
        });
        let t = email.replace_all(text, "[EMAIL]");
        phone.replace_all(&t, "[PHONE]").into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based position in the input stream.
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub conversations: usize,
    pub messages: usize,
    pub rejected: Vec<Rejection>,
    /// Conversations whose timestamps decrease along the index order.
    pub ordering_warnings: Vec<String>,
}

/// Ingested corpus, conversations in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStore {
    conversations: Vec<Conversation>,
}

fn parse_author(s: &str) -> Option<Author> {
    match s.trim().to_ascii_lowercase().as_str() {
        "teacher" | "user" | "human" => Some(Author::Teacher),
        "assistant" | "ai" | "model" | "bot" => Some(Author::Assistant),
        _ => None,
    }
}

/// Validates, scrubs and indexes a stream of raw messages. Bad records are
/// rejected and reported; ingest continues.
pub fn ingest<I>(stream: I, scrub: Option<&dyn Scrubber>) -> (CorpusStore, IngestReport)
where
    I: IntoIterator<Item = Result<RawMessage, String>>,
{
    let mut report = IngestReport::default();
    let mut order: Vec<String> = Vec::new();
    let mut by_conv: HashMap<String, Vec<(Option<u32>, usize, Message)>> = HashMap::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (n, item) in stream.into_iter().enumerate() {
        let record = n + 1;
        let raw = match item {
            Ok(raw) => raw,
            Err(reason) => {
                report.rejected.push(Rejection { record, reason });
                continue;
            }
        };
        let reject = |reason: String, report: &mut IngestReport| {
            log::warn!("rejected record {record}: {reason}");
            report.rejected.push(Rejection { record, reason });
        };
        let Some(conversation_id) = raw.conversation_id.filter(|s| !s.is_empty()) else {
            reject("missing conversation_id".into(), &mut report);
            continue;
        };
        let Some(author_text) = raw.author else {
            reject("missing author".into(), &mut report);
            continue;
        };
        let Some(author) = parse_author(&author_text) else {
            reject(format!("unknown author {author_text:?}"), &mut report);
            continue;
        };
        let Some(text) = raw.text else {
            reject("missing text".into(), &mut report);
            continue;
        };
        let Some(ts_text) = raw.timestamp else {
            reject("missing timestamp".into(), &mut report);
            continue;
        };
        let timestamp = match DateTime::parse_from_rfc3339(&ts_text) {
            Ok(t) => t.with_timezone(&Utc),
            Err(e) => {
                reject(format!("bad timestamp {ts_text:?}: {e}"), &mut report);
                continue;
            }
        };
        let entries = by_conv.entry(conversation_id.clone()).or_default();
        if entries.is_empty() {
            order.push(conversation_id.clone());
        }
        let message_id = raw
            .message_id
            .unwrap_or_else(|| format!("{conversation_id}-{}", entries.len()));
        if !seen_ids.insert(message_id.clone()) {
            reject(format!("duplicate message_id {message_id}"), &mut report);
            continue;
        }
        if let Some(i) = raw.index {
            if entries.iter().any(|(given, _, _)| *given == Some(i)) {
                reject(format!("duplicate index {i} in conversation {conversation_id}"), &mut report);
                continue;
            }
        }
        let text = match scrub {
            Some(s) => s.scrub(&text),
            None => text,
        };
        let arrival = entries.len();
        entries.push((
            raw.index,
            arrival,
            Message {
                message_id,
                conversation_id,
                index: 0,
                author,
                text,
                timestamp,
            },
        ));
    }

    let mut conversations = Vec::with_capacity(order.len());
    for id in order {
        let mut entries = by_conv.remove(&id).unwrap_or_default();
        entries.sort_by_key(|(given, arrival, _)| (given.unwrap_or(u32::MAX), *arrival));
        let messages: Vec<Message> = entries
            .into_iter()
            .enumerate()
            .map(|(i, (_, _, mut m))| {
                m.index = i as u32;
                m
            })
            .collect();
        if messages.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            report.ordering_warnings.push(id.clone());
        }
        report.messages += messages.len();
        conversations.push(Conversation {
            conversation_id: id,
            messages,
        });
    }
    report.conversations = conversations.len();
    (CorpusStore { conversations }, report)
}

/// Reads JSONL raw messages; unparsable lines become rejections.
pub fn ingest_jsonl<R: BufRead>(reader: R, scrub: Option<&dyn Scrubber>) -> (CorpusStore, IngestReport) {
    let lines = reader
        .lines()
        .filter_map(|line| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str::<RawMessage>(&l).map_err(|e| format!("malformed line: {e}"))),
            Err(e) => Some(Err(format!("read error: {e}"))),
        });
    ingest(lines, scrub)
}

impl CorpusStore {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, IngestReport), CorpusError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(ingest_jsonl(std::io::BufReader::new(file), None))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        for m in self.messages() {
            let line = serde_json::json!({
                "message_id": m.message_id,
                "conversation_id": m.conversation_id,
                "index": m.index,
                "author": m.author,
                "text": m.text,
                "timestamp": m.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            });
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.conversations.iter().flat_map(|c| c.messages.iter())
    }

    pub fn message_count(&self) -> usize {
        self.conversations.iter().map(|c| c.messages.len()).sum()
    }

    pub fn message(&self, message_id: &str) -> Option<&Message> {
        self.messages().find(|m| m.message_id == message_id)
    }

    /// message_id → message lookup table.
    pub fn message_index(&self) -> HashMap<&str, &Message> {
        self.messages().map(|m| (m.message_id.as_str(), m)).collect()
    }

    /// All units of one kind in corpus order.
    pub fn units(&self, kind: UnitKind) -> Vec<AnnotationUnit> {
        self.conversations
            .iter()
            .flat_map(|c| match kind {
                UnitKind::SingleTurn => extract_single_turns(c),
                UnitKind::Trio => extract_trios(c)
                    .into_iter()
                    .map(|t| AnnotationUnit {
                        unit_id: trio_unit_id(&t.t1),
                        kind: UnitKind::Trio,
                        payload: UnitPayload::Trio(t),
                        stratum: None,
                    })
                    .collect(),
            })
            .collect()
    }
}

/// One trio per teacher message immediately answered by the assistant.
/// Trios overlap when a follow-up opens the next exchange.
pub fn extract_trios(conv: &Conversation) -> Vec<Trio> {
    let msgs = &conv.messages;
    let mut out = Vec::new();
    for i in 0..msgs.len().saturating_sub(1) {
        if msgs[i].author == Author::Teacher && msgs[i + 1].author == Author::Assistant {
            let t2 = msgs[i + 2..].iter().find(|m| m.author == Author::Teacher).cloned();
            out.push(Trio {
                t1: msgs[i].clone(),
                a1: msgs[i + 1].clone(),
                t2,
            });
        }
    }
    out
}

pub fn extract_single_turns(conv: &Conversation) -> Vec<AnnotationUnit> {
    conv.messages
        .iter()
        .map(|m| AnnotationUnit {
            unit_id: m.message_id.clone(),
            kind: UnitKind::SingleTurn,
            payload: UnitPayload::Message(m.clone()),
            stratum: Some(Stratum::of(m.author)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFilter {
    pub kind: Option<UnitKind>,
    pub stratum: Option<Stratum>,
}

impl UnitFilter {
    pub fn matches(&self, unit: &AnnotationUnit) -> bool {
        self.kind.is_none_or(|k| k == unit.kind) && self.stratum.is_none_or(|s| unit.stratum == Some(s))
    }
}

/// Uniform sample without replacement, in sampled order. The same
/// (population, n, seed) always gives the same list.
pub fn sample_ids<T: Clone>(population: &[T], n: usize, seed: u64) -> Result<Vec<T>, CorpusError> {
    if n > population.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            population: population.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, population.len(), n)
        .into_iter()
        .map(|i| population[i].clone())
        .collect())
}

pub fn sample_units(
    store: &CorpusStore,
    n: usize,
    seed: u64,
    filter: UnitFilter,
) -> Result<Vec<String>, CorpusError> {
    let kinds: Vec<UnitKind> = match filter.kind {
        Some(k) => vec![k],
        None if filter.stratum.is_some() => vec![UnitKind::SingleTurn],
        None => vec![UnitKind::Trio, UnitKind::SingleTurn],
    };
    let population: Vec<String> = kinds
        .into_iter()
        .flat_map(|k| store.units(k))
        .filter(|u| filter.matches(u))
        .map(|u| u.unit_id)
        .collect();
    sample_ids(&population, n, seed)
}
