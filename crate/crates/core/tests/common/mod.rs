#![allow(dead_code)]

use chrono::{Duration, TimeZone, Utc};
use qualcode::corpus::{ingest, CorpusStore, RawMessage, UnitKind};
use qualcode::corpus::AnnotationUnit;

/// `n_conv` conversations alternating teacher/assistant, `per_conv` messages each.
pub fn synthetic_store(n_conv: usize, per_conv: usize) -> CorpusStore {
    let base = Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap();
    let mut raws = Vec::new();
    for c in 0..n_conv {
        for i in 0..per_conv {
            let teacher = i % 2 == 0;
            raws.push(Ok(RawMessage {
                message_id: Some(format!("c{c:03}-m{i:02}")),
                conversation_id: Some(format!("c{c:03}")),
                index: Some(i as u32),
                author: Some(if teacher { "teacher" } else { "assistant" }.to_string()),
                text: Some(if teacher {
                    format!("Please make a rubric for lesson {c}.{i}")
                } else {
                    format!("Here is a rubric draft for lesson {c}.{i}")
                }),
                timestamp: Some((base + Duration::minutes((c * 100 + i) as i64)).to_rfc3339()),
            }));
        }
    }
    let (store, report) = ingest(raws, None);
    assert!(report.rejected.is_empty(), "{:?}", report.rejected);
    store
}

pub fn single_turn_units(n: usize) -> Vec<AnnotationUnit> {
    let per_conv = 10;
    let store = synthetic_store(n.div_ceil(per_conv), per_conv);
    let mut units = store.units(UnitKind::SingleTurn);
    units.truncate(n);
    units
}

use qualcode::codebook::{seed_codebook, CodebookRegistry};
use qualcode::gateway::RunManifest;
use qualcode::parser::{AnnotationRecord, LabelSet, OtherEntry};
use qualcode::prompt::Phase;
use qualcode::rundir::RunDir;

/// Seed codes used by the fixtures, in a fixed order.
pub fn fixture_codes() -> Vec<String> {
    seed_codebook().active_codes().map(|c| c.code_id.clone()).take(12).collect()
}

/// Model records over `units`: two codes each, every fifth unit also
/// carries an Other entry.
pub fn model_records(units: &[AnnotationUnit], annotator: &str) -> Vec<AnnotationRecord> {
    let codes = fixture_codes();
    units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut labels = LabelSet::from_codes([codes[i % codes.len()].as_str(), codes[(i * 7 + 3) % codes.len()].as_str()]);
            if i % 5 == 0 {
                labels.other_entries.push(OtherEntry {
                    category: "Other".into(),
                    specification: if i % 10 == 0 { "Homeschooling".into() } else { "career readiness".into() },
                    missing_justification: false,
                });
            }
            let mut r = AnnotationRecord::manual(&u.unit_id, annotator, 1, labels);
            r.stratum = u.stratum;
            r
        })
        .collect()
}

/// Writes a run directory holding `n` single-turn units and model records,
/// and a registry holding the seed codebook.
pub fn make_run(root: &std::path::Path, run_id: &str, n: usize) -> (RunDir, Vec<AnnotationRecord>) {
    let units = single_turn_units(n);
    let records = model_records(&units, "model");
    let dir = RunDir::new(root.join("runs"), run_id);
    dir.create().unwrap();
    dir.write_units(&units).unwrap();
    dir.write_records(&records).unwrap();
    let now = chrono::Utc::now();
    dir.write_manifest(&RunManifest {
        run_id: run_id.into(),
        phase: Phase::Deductive,
        codebook_version: 1,
        endpoint: "fixture".into(),
        unit_count: n,
        completed: n,
        failures: 0,
        null_count: 0,
        total_input_tokens: 0,
        total_output_tokens: 0,
        seed: None,
        started_at: now,
        finished_at: now,
        incomplete: false,
    })
    .unwrap();
    let mut reg = CodebookRegistry::open(root.join("codebooks")).unwrap();
    reg.put(seed_codebook()).unwrap();
    (dir, records)
}

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use qualcode::codebook::Codebook;

/// Raw model output naming `code_ids` in "Group/Item" form.
pub fn fixture_output(cb: &Codebook, code_ids: &[&str]) -> String {
    let labels: Vec<String> = code_ids.iter().map(|id| cb.get(id).unwrap().group_item_path()).collect();
    serde_json::json!({ "labels": labels }).to_string()
}

/// Writes `<root>/endpoints/<name>.json`, a replay profile backed by
/// `<root>/endpoints/<name>.fixture.json`.
pub fn write_replay_profile(root: &Path, name: &str, fixture: &HashMap<String, String>, cap: usize) -> PathBuf {
    let dir = root.join("endpoints");
    std::fs::create_dir_all(&dir).unwrap();
    let fixture_name = format!("{name}.fixture.json");
    std::fs::write(dir.join(&fixture_name), serde_json::to_string(fixture).unwrap()).unwrap();
    let mut profile = qualcode::gateway::EndpointProfile::replay(name, cap);
    profile.base_url = fixture_name;
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&profile).unwrap()).unwrap();
    path
}

/// Corpus and seed codebook files under `root`.
pub struct Workspace {
    pub root: PathBuf,
    pub corpus: PathBuf,
    pub codebook: PathBuf,
    pub store: CorpusStore,
}

pub fn workspace(root: &Path, n_conv: usize, per_conv: usize) -> Workspace {
    let store = synthetic_store(n_conv, per_conv);
    let corpus = root.join("corpus.jsonl");
    store.save(&corpus).unwrap();
    let codebook = root.join("codebook.json");
    seed_codebook().save(&codebook).unwrap();
    Workspace {
        root: root.to_path_buf(),
        corpus,
        codebook,
        store,
    }
}

/// Deterministic fixture over `units`: mostly clean JSON, every seventh
/// output fenced, every eleventh unparseable.
pub fn mixed_fixture(units: &[AnnotationUnit], cb: &Codebook) -> HashMap<String, String> {
    let codes = fixture_codes();
    units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let a = codes[i % codes.len()].as_str();
            let b = codes[(i * 5 + 1) % codes.len()].as_str();
            let clean = fixture_output(cb, &[a, b]);
            let raw = if i % 11 == 0 {
                "I cannot classify this message.".to_string()
            } else if i % 7 == 0 {
                format!("Sure.\n```json\n{clean}\n```")
            } else {
                clean
            };
            (u.unit_id.clone(), raw)
        })
        .collect()
}
