mod common;

use std::collections::HashMap;
use std::process::Command;

use common::*;
use qualcode::codebook::{seed_codebook, CodebookRegistry, NewCode};
use qualcode::corpus::UnitKind;
use qualcode::error::{EXIT_CONFIG, EXIT_ENDPOINT};
use qualcode::metrics::{Level, StratumSelect, Universe};
use qualcode::parser::{ParseStatus, AnnotationRecord};
use qualcode::pipeline::{run_analysis, run_bench, run_phase, AnalysisConfig, BenchConfig, RunConfig};
use qualcode::prompt::Phase;
use qualcode::rundir::RunDir;
use qualcode::Error;

fn deductive_config(ws: &Workspace, endpoint: &str, run_id: &str) -> RunConfig {
    let mut cfg = RunConfig::new(&ws.corpus, &ws.codebook, Phase::Deductive, endpoint);
    cfg.endpoints_dir = ws.root.join("endpoints");
    cfg.output_dir = ws.root.join("runs");
    cfg.run_id = Some(run_id.into());
    cfg
}

fn strip_times(records: &[AnnotationRecord]) -> Vec<AnnotationRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.created_at = chrono::DateTime::<chrono::Utc>::UNIX_EPOCH;
            r
        })
        .collect()
}

#[tokio::test]
async fn deductive_run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 10, 10);
    let units = ws.store.units(UnitKind::SingleTurn);
    assert_eq!(units.len(), 100);
    write_replay_profile(&ws.root, "replay-a", &mixed_fixture(&units, &seed_codebook()), 4);

    let mut cfg = deductive_config(&ws, "replay-a", "r1");
    cfg.write_prompts = true;
    cfg.transcript = true;
    let summary = run_phase(&cfg).await.unwrap();

    let m = &summary.manifest;
    assert_eq!(m.unit_count, 100);
    assert_eq!(m.completed + m.failures, m.unit_count);
    assert_eq!(m.failures, 0);
    assert!(!m.incomplete);
    // every eleventh output is prose only
    assert_eq!(m.null_count, 10);

    let dir = &summary.run_dir;
    let records = dir.load_records().unwrap();
    let ids: Vec<_> = records.iter().map(|r| r.unit_id.as_str()).collect();
    let expected: Vec<_> = units.iter().map(|u| u.unit_id.as_str()).collect();
    assert_eq!(ids, expected, "records follow unit order");
    assert!(records.iter().all(|r| r.annotator_id == "replay-a" && r.codebook_version == 1));
    let recovered = records.iter().filter(|r| r.parse_status == ParseStatus::Recovered).count();
    assert!(recovered > 0);

    let q = summary.quality.as_ref().unwrap();
    assert!((q.valid_rate - 0.9).abs() < 1e-12);
    assert!(dir.reports_dir().join("quality.json").is_file());
    assert_eq!(std::fs::read_dir(dir.prompts_dir()).unwrap().count(), 100);
    let transcript = std::fs::read_to_string(dir.transcript_path()).unwrap();
    assert_eq!(transcript.lines().count(), 100);
    assert_eq!(dir.load_manifest().unwrap(), *m);
    assert!(summary.render().contains("units 100"));
}

#[tokio::test]
async fn reruns_are_identical_apart_from_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 10, 10);
    let units = ws.store.units(UnitKind::SingleTurn);
    write_replay_profile(&ws.root, "replay-a", &mixed_fixture(&units, &seed_codebook()), 8);

    let a = run_phase(&deductive_config(&ws, "replay-a", "a")).await.unwrap();
    let b = run_phase(&deductive_config(&ws, "replay-a", "b")).await.unwrap();
    let ra = strip_times(&a.run_dir.load_records().unwrap());
    let rb = strip_times(&b.run_dir.load_records().unwrap());
    assert_eq!(ra, rb);
    assert_eq!(a.manifest.total_input_tokens, b.manifest.total_input_tokens);
}

#[tokio::test]
async fn existing_run_id_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 2, 4);
    let units = ws.store.units(UnitKind::SingleTurn);
    write_replay_profile(&ws.root, "replay-a", &mixed_fixture(&units, &seed_codebook()), 2);
    run_phase(&deductive_config(&ws, "replay-a", "dup")).await.unwrap();
    let err = run_phase(&deductive_config(&ws, "replay-a", "dup")).await.unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}

#[tokio::test]
async fn open_phase_samples_trios_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 10, 10);
    let trios = ws.store.units(UnitKind::Trio);
    let fixture: HashMap<String, String> = trios
        .iter()
        .map(|u| (u.unit_id.clone(), r#"{"codes": ["rubric drafting"]}"#.to_string()))
        .collect();
    write_replay_profile(&ws.root, "replay-open", &fixture, 2);

    let run = |id: &str, seed: u64| {
        let mut cfg = RunConfig::new(&ws.corpus, &ws.codebook, Phase::Open, "replay-open");
        cfg.endpoints_dir = ws.root.join("endpoints");
        cfg.output_dir = ws.root.join("runs");
        cfg.run_id = Some(id.into());
        cfg.sample.n = Some(12);
        cfg.sample.seed = seed;
        cfg
    };
    let a = run_phase(&run("o1", 7)).await.unwrap();
    let b = run_phase(&run("o2", 7)).await.unwrap();
    let c = run_phase(&run("o3", 8)).await.unwrap();
    let ua = a.run_dir.load_units().unwrap();
    assert_eq!(ua.len(), 12);
    assert!(ua.iter().all(|u| u.unit_id.ends_with("#trio")));
    assert_eq!(ua, b.run_dir.load_units().unwrap());
    assert_ne!(ua, c.run_dir.load_units().unwrap());
    assert_eq!(a.manifest.seed, Some(7));
}

#[tokio::test]
async fn trio_phase_rejects_a_stratum() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 2, 4);
    write_replay_profile(&ws.root, "replay-a", &HashMap::new(), 1);
    let mut cfg = RunConfig::new(&ws.corpus, &ws.codebook, Phase::Axial, "replay-a");
    cfg.endpoints_dir = ws.root.join("endpoints");
    cfg.sample.stratum = Some(qualcode::corpus::Stratum::Request);
    assert_eq!(run_phase(&cfg).await.unwrap_err().exit_code(), EXIT_CONFIG);
}

#[tokio::test]
async fn selective_phase_embeds_the_configured_codebook_version() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 4, 6);
    let v2 = seed_codebook()
        .add_code(
            NewCode::new("Student Needs and Context", "Learning Context", "Homeschooling", "Home-based instruction.", "test"),
            true,
        )
        .unwrap();
    let v2_path = ws.root.join("codebook.v2.json");
    v2.save(&v2_path).unwrap();
    let trios = ws.store.units(UnitKind::Trio);
    let fixture: HashMap<String, String> = trios
        .iter()
        .map(|u| (u.unit_id.clone(), r#"{"labels": ["Learning Context/Homeschooling"]}"#.to_string()))
        .collect();
    write_replay_profile(&ws.root, "replay-s", &fixture, 2);

    let mut cfg = RunConfig::new(&ws.corpus, &v2_path, Phase::Selective, "replay-s");
    cfg.endpoints_dir = ws.root.join("endpoints");
    cfg.output_dir = ws.root.join("runs");
    cfg.run_id = Some("s".into());
    cfg.write_prompts = true;
    let summary = run_phase(&cfg).await.unwrap();
    assert_eq!(summary.manifest.codebook_version, 2);
    let prompt_file = std::fs::read_dir(summary.run_dir.prompts_dir()).unwrap().next().unwrap().unwrap();
    let prompt = std::fs::read_to_string(prompt_file.path()).unwrap();
    assert!(prompt.contains("Homeschooling"));
    let records = summary.run_dir.load_records().unwrap();
    let code = v2.find_by_path("Student Needs and Context", "Learning Context", "Homeschooling").unwrap();
    assert!(records.iter().all(|r| r.labels.resolved.contains(&code.code_id) && r.codebook_version == 2));
}

#[tokio::test]
async fn fixture_gap_leaves_an_incomplete_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 4, 6);
    let units = ws.store.units(UnitKind::SingleTurn);
    let mut fixture = mixed_fixture(&units, &seed_codebook());
    fixture.remove(&units[5].unit_id);
    write_replay_profile(&ws.root, "replay-gap", &fixture, 1);

    let err = run_phase(&deductive_config(&ws, "replay-gap", "gap")).await.unwrap_err();
    assert_eq!(err.exit_code(), EXIT_ENDPOINT);
    let Error::Incomplete { failures, unit_count, .. } = err else {
        panic!("expected an incomplete run");
    };
    assert!(failures >= 1);
    let dir = RunDir::new(ws.root.join("runs"), "gap");
    let m = dir.load_manifest().unwrap();
    assert!(m.incomplete);
    assert_eq!(m.unit_count, unit_count);
    assert_eq!(m.completed + m.failures, m.unit_count);
    assert!(dir.reports_dir().join("failures.json").is_file());
}

#[test]
fn config_file_paths_resolve_against_its_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 1, 2);
    std::fs::write(
        ws.root.join("run.json"),
        r#"{"corpus": "corpus.jsonl", "codebook": "codebook.json", "phase": "deductive", "endpoint": "replay-a"}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(ws.root.join("run.json")).unwrap();
    assert_eq!(cfg.corpus, ws.corpus);
    assert_eq!(cfg.endpoint_path(), ws.root.join("endpoints").join("replay-a.json"));
    assert_eq!(cfg.output_dir, ws.root.join("runs"));

    std::fs::write(ws.root.join("bad.json"), r#"{"corpus": "x", "codebook": "y", "phase": "deductive", "endpoint": "e", "api_key": "k"}"#)
        .unwrap();
    assert_eq!(RunConfig::load(ws.root.join("bad.json")).unwrap_err().exit_code(), EXIT_CONFIG);
}

#[test]
fn bench_compares_two_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, reference) = make_run(tmp.path(), "human", 40);
    let units = single_turn_units(40);
    let mut m1 = model_records(&units, "model-one");
    let mut m2 = model_records(&units, "model-two");
    // perturb the candidates differently
    for r in m1.iter_mut().step_by(4) {
        r.labels.resolved.clear();
        r.labels.resolved.insert(fixture_codes()[0].clone());
    }
    for r in m2.iter_mut().step_by(2) {
        r.labels.resolved.pop_first();
    }
    for (id, recs) in [("m1", &m1), ("m2", &m2)] {
        let d = RunDir::new(tmp.path().join("runs"), id);
        d.create().unwrap();
        d.write_records(recs).unwrap();
    }
    let cb_path = tmp.path().join("codebooks").join("codebook.v1.json");
    let out = tmp.path().join("bench");
    let report = run_bench(&BenchConfig {
        runs_dir: tmp.path().join("runs"),
        reference: "human".into(),
        candidates: vec!["m1".into(), "m2".into()],
        codebook: cb_path,
        level: Level::Item,
        universe: Universe::Used,
        output_dir: out.clone(),
    })
    .unwrap();
    let models: std::collections::BTreeSet<_> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(models.len(), 2);
    assert!(reference.len() == 40);
    let text = std::fs::read_to_string(out.join("benchmark.txt")).unwrap();
    assert!(text.contains("Cohen's Kappa"));
    assert!(out.join("benchmark.json").is_file());
    let kappa = |model: &str, stratum: StratumSelect| {
        report.rows.iter().find(|r| r.model == model && r.stratum == stratum).unwrap().kappa.unwrap()
    };
    // perturbations only touch even positions, which are teacher requests
    assert!(kappa("m1", StratumSelect::Request) < 1.0);
    assert!(kappa("m2", StratumSelect::Request) < 1.0);
    assert_eq!(kappa("m1", StratumSelect::Response), 1.0);
}

#[test]
fn analysis_writes_reports_for_both_axes() {
    let tmp = tempfile::tempdir().unwrap();
    make_run(tmp.path(), "r", 40);
    let store = synthetic_store(4, 10);
    let corpus = tmp.path().join("corpus.jsonl");
    store.save(&corpus).unwrap();
    let out = tmp.path().join("analysis");
    let summary = run_analysis(&AnalysisConfig {
        runs_dir: tmp.path().join("runs"),
        runs: vec!["r".into()],
        corpus,
        codebooks: tmp.path().join("codebooks"),
        codebook_version: None,
        remap: false,
        output_dir: out.clone(),
    })
    .unwrap();
    assert_eq!(summary.conversations, 4);
    assert_eq!(summary.annotated_conversations, 4);
    for f in [
        "frequency_request_domain.csv",
        "frequency_collaboration_item.json",
        "cooccurrence_collaboration_group.csv",
        "uplift_domain.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!summary.top_domains.is_empty());
}

#[test]
fn analysis_refuses_mixed_versions_without_remap() {
    let tmp = tempfile::tempdir().unwrap();
    make_run(tmp.path(), "r", 20);
    let mut reg = CodebookRegistry::open(tmp.path().join("codebooks")).unwrap();
    let v2 = reg
        .latest()
        .unwrap()
        .merge_codes("ip.collaborative-learning.gallery-walk", &["ip.collaborative-learning.group-work"])
        .unwrap();
    reg.put(v2).unwrap();
    let store = synthetic_store(2, 10);
    let corpus = tmp.path().join("corpus.jsonl");
    store.save(&corpus).unwrap();
    let mut cfg = AnalysisConfig {
        runs_dir: tmp.path().join("runs"),
        runs: vec!["r".into()],
        corpus,
        codebooks: tmp.path().join("codebooks"),
        codebook_version: None,
        remap: false,
        output_dir: tmp.path().join("analysis"),
    };
    assert!(run_analysis(&cfg).is_err());
    cfg.remap = true;
    assert!(run_analysis(&cfg).is_ok());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qualcode"))
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli().args(["run", "--config"]).arg(tmp.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(tmp.path().join("run.json"), r#"{"corpus": "nope.jsonl", "codebook": "cb.json", "phase": "deductive", "endpoint": "e"}"#)
        .unwrap();
    let out = cli().args(["run", "--config"]).arg(tmp.path().join("run.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));

    let reg = tmp.path().join("codebooks");
    let out = cli().args(["codebook", "init", "--registry"]).arg(&reg).output().unwrap();
    assert!(out.status.success());
    let out = cli().args(["codebook", "validate"]).arg(reg.join("codebook.v1.json")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("codebook v1"));
    let out = cli()
        .args(["codebook", "merge", "--registry"])
        .arg(&reg)
        .args(["--source", "ip.collaborative-learning.gallery-walk", "--into", "ip.collaborative-learning.group-work"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli()
        .args(["codebook", "diff"])
        .arg(reg.join("codebook.v1.json"))
        .arg(reg.join("codebook.v2.json"))
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("gallery-walk"));
    let out = cli().args(["codebook", "merge", "--registry"]).arg(&reg).args(["--source", "nope", "--into", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[tokio::test]
async fn cli_run_reports_incomplete_runs_with_endpoint_code() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = workspace(tmp.path(), 2, 4);
    write_replay_profile(&ws.root, "replay-empty", &HashMap::new(), 1);
    std::fs::write(
        ws.root.join("run.json"),
        r#"{"corpus": "corpus.jsonl", "codebook": "codebook.json", "phase": "deductive", "endpoint": "replay-empty", "run_id": "x"}"#,
    )
    .unwrap();
    let out = cli().args(["run", "--config"]).arg(ws.root.join("run.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ENDPOINT), "{}", String::from_utf8_lossy(&out.stderr));
}
