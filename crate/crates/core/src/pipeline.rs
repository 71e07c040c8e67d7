//! Run orchestration: annotation phases, benchmarks and analyses.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{aggregate, cooccurrence, frequency_report, uplift_report, Axis};
use crate::codebook::{remap_annotations, Codebook, CodebookRegistry};
use crate::corpus::{sample_ids, CorpusStore, Stratum, UnitKind};
use crate::error::{Error, Result};
use crate::gateway::{annotate_batch, open_endpoint, BatchOptions, EndpointProfile, RunManifest};
use crate::metrics::{benchmark_report, run_quality, BenchmarkReport, Level, RunQuality, Universe};
use crate::parser::{load_records, AnnotationRecord, DEFAULT_FUZZY_THRESHOLD};
use crate::prompt::{Phase, PromptBudget, PromptTemplate};
use crate::rundir::RunDir;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// `None` annotates every eligible unit.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Single turns only.
    #[serde(default)]
    pub stratum: Option<Stratum>,
}

/// Declarative run configuration. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub codebook: PathBuf,
    pub phase: Phase,
    /// Profile path, or a name looked up as `<endpoints_dir>/<name>.json`.
    pub endpoint: String,
    #[serde(default = "default_endpoints_dir")]
    pub endpoints_dir: PathBuf,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default)]
    pub budget: PromptBudget,
    #[serde(default)]
    pub write_prompts: bool,
    #[serde(default)]
    pub transcript: bool,
    #[serde(default = "default_threshold")]
    pub fuzzy_threshold: f64,
}

fn default_endpoints_dir() -> PathBuf {
    PathBuf::from("endpoints")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_threshold() -> f64 {
    DEFAULT_FUZZY_THRESHOLD
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, codebook: impl Into<PathBuf>, phase: Phase, endpoint: &str) -> Self {
        RunConfig {
            corpus: corpus.into(),
            codebook: codebook.into(),
            phase,
            endpoint: endpoint.to_string(),
            endpoints_dir: default_endpoints_dir(),
            sample: SampleConfig::default(),
            output_dir: default_output_dir(),
            run_id: None,
            template_dir: None,
            budget: PromptBudget::default(),
            write_prompts: false,
            transcript: false,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.codebook);
        fix(&mut self.endpoints_dir);
        fix(&mut self.output_dir);
        if let Some(t) = &mut self.template_dir {
            fix(t);
        }
        if self.endpoint.ends_with(".json") && Path::new(&self.endpoint).is_relative() {
            self.endpoint = base.join(&self.endpoint).display().to_string();
        }
    }

    pub fn endpoint_path(&self) -> PathBuf {
        if self.endpoint.ends_with(".json") {
            PathBuf::from(&self.endpoint)
        } else {
            self.endpoints_dir.join(format!("{}.json", self.endpoint))
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("corpus", &self.corpus), ("codebook", &self.codebook)] {
            if !p.is_file() {
                return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
            }
        }
        if !self.endpoint_path().is_file() {
            return Err(Error::Config(format!("endpoint profile {} does not exist", self.endpoint_path().display())));
        }
        if self.phase.uses_trios() && self.sample.stratum.is_some() {
            return Err(Error::Config(format!(
                "{} phase annotates trios; a request/response stratum applies to single turns only",
                self.phase
            )));
        }
        if self.sample.n == Some(0) {
            return Err(Error::Config("sample.n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(Error::Config("fuzzy_threshold must be within [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: RunDir,
    pub manifest: RunManifest,
    pub quality: Option<RunQuality>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let m = &self.manifest;
        let mut s = format!(
            "run {}: {} phase, codebook v{}, endpoint {}\n  units {}  completed {}  failures {}  null {}\n  tokens in {}  out {}\n",
            m.run_id,
            m.phase,
            m.codebook_version,
            m.endpoint,
            m.unit_count,
            m.completed,
            m.failures,
            m.null_count,
            m.total_input_tokens,
            m.total_output_tokens
        );
        if let Some(q) = &self.quality {
            s.push_str(&format!(
                "  valid rate {:.1}% (strict {:.1}%)  null rate {:.1}%  label density {}\n",
                q.valid_rate * 100.0,
                q.strict_valid_rate * 100.0,
                q.null_rate * 100.0,
                q.label_density_mean.map_or("n/a".to_string(), |d| format!("{d:.2}"))
            ));
        }
        s.push_str(&format!("  output {}\n", self.run_dir.root.display()));
        s
    }
}

fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(Error::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Sample, prompt, annotate, parse and persist one phase.
pub async fn run_phase(config: &RunConfig) -> Result<RunSummary> {
    let ctx = |e: Error| e.context(format!("{} phase", config.phase));
    config.validate().map_err(ctx)?;
    let (store, report) = CorpusStore::load(&config.corpus).map_err(|e| ctx(e.into()))?;
    if !report.rejected.is_empty() {
        log::warn!("{} corpus records rejected on load", report.rejected.len());
    }
    let cb = Codebook::load(&config.codebook).map_err(|e| ctx(e.into()))?;
    let profile = EndpointProfile::load(config.endpoint_path()).map_err(|e| ctx(e.into()))?;
    let template = PromptTemplate::load(config.template_dir.as_deref(), config.phase)
        .map_err(|e| ctx(e.into()))?
        .with_budget(config.budget);

    let kind = if config.phase.uses_trios() { UnitKind::Trio } else { UnitKind::SingleTurn };
    let eligible: Vec<_> = store
        .units(kind)
        .into_iter()
        .filter(|u| config.sample.stratum.is_none() || u.stratum == config.sample.stratum)
        .collect();
    let units = match config.sample.n {
        Some(n) => sample_ids(&eligible, n, config.sample.seed).map_err(|e| ctx(e.into()))?,
        None => eligible,
    };
    if units.is_empty() {
        return Err(ctx(Error::Config("no eligible units in corpus".into())));
    }

    let run_id = config.run_id.clone().unwrap_or_else(|| {
        format!(
            "{}-{}-{}",
            config.phase,
            chrono::Utc::now().format("%Y%m%dT%H%M%S"),
            &uuid::Uuid::new_v4().simple().to_string()[..8]
        )
    });
    let run_dir = RunDir::new(&config.output_dir, &run_id);
    if run_dir.exists() {
        return Err(ctx(Error::Config(format!("run {run_id} already exists"))));
    }
    run_dir.create().map_err(Error::io(&run_dir.root))?;
    run_dir.write_units(&units).map_err(Error::io(run_dir.units_path()))?;
    if config.write_prompts {
        let dir = run_dir.prompts_dir();
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        for u in &units {
            let prompt = template.render(u, Some(&cb)).map_err(|e| ctx(e.into()))?;
            write_text(&dir.join(format!("{}.txt", safe_file_name(&u.unit_id))), &prompt)?;
        }
    }

    let endpoint = open_endpoint(&profile).map_err(|e| ctx(e.into()))?;
    let options = BatchOptions {
        run_id: run_id.clone(),
        seed: Some(config.sample.seed),
        annotator_id: Some(profile.name.clone()),
        fuzzy_threshold: config.fuzzy_threshold,
    };
    let outcome = annotate_batch(&units, &template, &cb, endpoint, &profile, &options)
        .await
        .map_err(|e| ctx(e.into()))?;

    run_dir.write_records(&outcome.records).map_err(Error::io(run_dir.records_path()))?;
    run_dir.write_manifest(&outcome.manifest).map_err(Error::io(run_dir.manifest_path()))?;
    if config.transcript {
        let mut text = String::new();
        for t in &outcome.transcript {
            text.push_str(&serde_json::to_string(t).expect("serializable"));
            text.push('\n');
        }
        write_text(&run_dir.transcript_path(), &text)?;
    }
    if !outcome.failures.is_empty() {
        write_json(&run_dir.reports_dir().join("failures.json"), &outcome.failures)?;
    }
    let quality = run_quality(&outcome.records).ok();
    if let Some(q) = &quality {
        write_json(&run_dir.reports_dir().join("quality.json"), q)?;
    }
    if outcome.manifest.incomplete {
        return Err(Error::Incomplete {
            run_id,
            failures: outcome.manifest.failures,
            unit_count: outcome.manifest.unit_count,
            first: outcome.failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }
    Ok(RunSummary {
        run_dir,
        manifest: outcome.manifest,
        quality,
    })
}

/// Records from a run id under `runs_dir`, or from a JSONL file path.
pub fn load_run_records(runs_dir: &Path, run: &str) -> Result<(String, Vec<AnnotationRecord>)> {
    let as_path = Path::new(run);
    if run.ends_with(".jsonl") && as_path.is_file() {
        let records = load_records(as_path).map_err(Error::io(as_path))?;
        let name = as_path.file_stem().map_or(run.to_string(), |s| s.to_string_lossy().into_owned());
        return Ok((name, records));
    }
    let dir = RunDir::new(runs_dir, run);
    if !dir.records_path().is_file() {
        return Err(Error::Config(format!("unknown run {run} under {}", runs_dir.display())));
    }
    let records = dir.load_records().map_err(Error::io(dir.records_path()))?;
    let name = dir.load_manifest().map(|m| m.endpoint).unwrap_or_else(|_| run.to_string());
    Ok((name, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub runs_dir: PathBuf,
    pub reference: String,
    pub candidates: Vec<String>,
    pub codebook: PathBuf,
    pub level: Level,
    pub universe: Universe,
    pub output_dir: PathBuf,
}

/// Writes `benchmark.txt` and `benchmark.json` to the output directory.
pub fn run_bench(config: &BenchConfig) -> Result<BenchmarkReport> {
    let cb = Codebook::load(&config.codebook)?;
    let (_, reference) = load_run_records(&config.runs_dir, &config.reference)?;
    let mut candidates = Vec::new();
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    for c in &config.candidates {
        let (mut name, records) = load_run_records(&config.runs_dir, c)?;
        let seen = names.entry(name.clone()).or_insert(0);
        *seen += 1;
        if *seen > 1 {
            name = format!("{name} ({c})");
        }
        candidates.push((name, records));
    }
    let report = benchmark_report(&reference, &candidates, &cb, config.level, config.universe)?;
    std::fs::create_dir_all(&config.output_dir).map_err(Error::io(&config.output_dir))?;
    write_text(&config.output_dir.join("benchmark.txt"), &report.render_text())?;
    write_text(&config.output_dir.join("benchmark.json"), &report.to_json())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub runs_dir: PathBuf,
    pub runs: Vec<String>,
    pub corpus: PathBuf,
    pub codebooks: PathBuf,
    /// Target version; defaults to the latest in the registry.
    pub codebook_version: Option<u64>,
    /// Carry older records forward to the target version.
    pub remap: bool,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSummary {
    pub conversations: usize,
    pub annotated_conversations: usize,
    pub files: Vec<PathBuf>,
    pub top_domains: Vec<(String, f64)>,
}

impl AnalysisSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} conversations, {} with annotations\n",
            self.conversations, self.annotated_conversations
        );
        for (d, p) in &self.top_domains {
            s.push_str(&format!("  {p:5.1}%  {d}\n"));
        }
        s.push_str(&format!("{} report files written\n", self.files.len()));
        s
    }
}

/// Frequency, uplift and co-occurrence reports for every level and axis.
pub fn run_analysis(config: &AnalysisConfig) -> Result<AnalysisSummary> {
    let registry = CodebookRegistry::open(&config.codebooks)?;
    let target = match config.codebook_version {
        Some(v) => registry.get(v),
        None => registry.latest(),
    }
    .ok_or_else(|| Error::Config(format!("no codebook version found in {}", config.codebooks.display())))?
    .clone();
    let (store, _) = CorpusStore::load(&config.corpus)?;

    let mut records = Vec::new();
    for run in &config.runs {
        let (_, recs) = load_run_records(&config.runs_dir, run)?;
        records.extend(recs);
    }
    let mut by_version: BTreeMap<u64, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_version.entry(r.codebook_version).or_default().push(r);
    }
    let mut aligned = Vec::new();
    for (v, recs) in by_version {
        if v == target.version_id {
            aligned.extend(recs);
        } else if config.remap {
            let from = registry
                .get(v)
                .ok_or_else(|| Error::Config(format!("codebook v{v} missing from registry")))?;
            aligned.extend(remap_annotations(&recs, from, &target)?);
        } else {
            return Err(crate::analysis::AnalysisError::MixedVersions(vec![v, target.version_id]).into());
        }
    }

    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        let p = out.join(name);
        write_text(&p, &text)?;
        files.push(p);
        Ok(())
    };
    let request = aggregate(&aligned, &store, &target, Axis::TeacherRequest)?;
    let collab = aggregate(&aligned, &store, &target, Axis::Collaboration)?;
    let mut top_domains = Vec::new();
    for level in [Level::Domain, Level::Group, Level::Item] {
        let lname = serde_json::to_value(level).unwrap().as_str().unwrap().to_string();
        for (axis_name, aggs) in [("request", &request), ("collaboration", &collab)] {
            let Ok(freq) = frequency_report(aggs, level) else {
                log::warn!("no annotated conversations on the {axis_name} axis");
                continue;
            };
            if level == Level::Domain && axis_name == "collaboration" {
                top_domains = freq.rows.iter().map(|r| (r.label.clone(), r.percent)).collect();
            }
            emit(format!("frequency_{axis_name}_{lname}.json"), serde_json::to_string_pretty(&freq).unwrap() + "\n")?;
            emit(format!("frequency_{axis_name}_{lname}.csv"), freq.to_csv())?;
            match cooccurrence(aggs, level) {
                Ok(m) => {
                    emit(format!("cooccurrence_{axis_name}_{lname}.json"), serde_json::to_string_pretty(&m).unwrap() + "\n")?;
                    emit(format!("cooccurrence_{axis_name}_{lname}.csv"), m.to_csv())?;
                    emit(format!("cooccurrence_{axis_name}_{lname}_long.csv"), m.to_long_csv())?;
                }
                Err(e) => log::warn!("co-occurrence skipped ({axis_name}, {lname}): {e}"),
            }
        }
        if let Ok(up) = uplift_report(&request, &collab, level) {
            emit(format!("uplift_{lname}.json"), serde_json::to_string_pretty(&up).unwrap() + "\n")?;
            emit(format!("uplift_{lname}.csv"), up.to_csv())?;
        }
    }
    Ok(AnalysisSummary {
        conversations: collab.len(),
        annotated_conversations: collab.iter().filter(|a| a.annotated).count(),
        files,
        top_domains,
    })
}
