use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qualcode::codebook::{seed_codebook, Codebook, CodebookRegistry, NewCode};
use qualcode::corpus::{ingest_jsonl, sample_units, CorpusStore, PatternScrubber, Stratum, UnitFilter, UnitKind};
use qualcode::metrics::{Level, Universe};
use qualcode::pipeline::{self, AnalysisConfig, BenchConfig, RunConfig};
use qualcode::review::{self, other_triage, DeskConfig, ReviewDesk};
use qualcode::{Error, Result};

#[derive(Parser)]
#[command(name = "qualcode", version, about = "LLM-assisted qualitative coding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, scrub and store a raw message export (JSONL).
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Keep emails and phone numbers as they are.
        #[arg(long)]
        no_scrub: bool,
    },
    /// Draw a seeded sample of unit ids.
    Sample {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<UnitKind>,
        #[arg(long, value_parser = parse_stratum)]
        stratum: Option<Stratum>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one annotation phase from a config file.
    Run(RunArgs),
    /// Compare candidate runs against a reference run.
    Bench {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Run id or records JSONL path.
        #[arg(long)]
        reference: String,
        #[arg(long = "candidate", required = true)]
        candidates: Vec<String>,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, default_value = "item")]
        level: Level,
        /// Use every active code as a cell column.
        #[arg(long)]
        full_universe: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conversation-level frequency, uplift and co-occurrence reports.
    Analyze {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
        #[arg(long)]
        codebook_version: Option<u64>,
        #[arg(long)]
        remap: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Codebook maintenance.
    #[command(subcommand)]
    Codebook(CodebookCommand),
    /// Review desk.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Cluster the Other entries of a run.
    Triage {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long)]
        run: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    codebook: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CodebookCommand {
    /// Check a codebook file.
    Validate { path: PathBuf },
    /// Write the built-in seed codebook into a registry.
    Init {
        #[arg(long)]
        registry: PathBuf,
    },
    /// Merge a code into one or more targets as a new version.
    Merge {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long = "into", required = true)]
        targets: Vec<String>,
    },
    /// Add a code as a new version.
    Add {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        group: String,
        #[arg(long)]
        item: String,
        #[arg(long, default_value = "")]
        definition: String,
        #[arg(long)]
        alias: Vec<String>,
        #[arg(long)]
        allow_new_domain: bool,
    },
    /// List changes between two codebook files.
    Diff { older: PathBuf, newer: PathBuf },
}

#[derive(Subcommand)]
enum ReviewCommand {
    /// Serve the review API and console assets.
    Serve {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
        #[arg(long, default_value = "review/audit.jsonl")]
        audit_log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long)]
        assets: Option<PathBuf>,
        /// Run used for triage by default.
        #[arg(long)]
        run: Option<String>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<UnitKind, String> {
    match s {
        "trio" => Ok(UnitKind::Trio),
        "single-turn" | "single_turn" => Ok(UnitKind::SingleTurn),
        _ => Err(format!("unknown unit kind {s:?} (trio, single-turn)")),
    }
}

fn parse_stratum(s: &str) -> std::result::Result<Stratum, String> {
    match s.to_ascii_lowercase().as_str() {
        "request" => Ok(Stratum::Request),
        "response" => Ok(Stratum::Response),
        _ => Err(format!("unknown stratum {s:?} (request, response)")),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Io {
            path: "tokio runtime".into(),
            source: e,
        })
}

fn registry_put(registry: &mut CodebookRegistry, cb: Codebook) -> Result<()> {
    let v = cb.version_id;
    registry.put(cb)?;
    println!("wrote {}", registry.path_for(v).display());
    Ok(())
}

fn latest(registry: &CodebookRegistry) -> Result<&Codebook> {
    registry
        .latest()
        .ok_or_else(|| Error::Config("registry is empty; run `qualcode codebook init` first".into()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, output, no_scrub } => {
            let file = File::open(&input).map_err(Error::io(&input))?;
            let scrubber = PatternScrubber;
            let scrub: Option<&dyn qualcode::corpus::Scrubber> = if no_scrub { None } else { Some(&scrubber) };
            let (store, report) = ingest_jsonl(BufReader::new(file), scrub);
            store.save(&output)?;
            println!(
                "{} conversations, {} messages, {} rejected, {} ordering warnings",
                report.conversations,
                report.messages,
                report.rejected.len(),
                report.ordering_warnings.len()
            );
            for r in report.rejected.iter().take(20) {
                eprintln!("  record {}: {}", r.record, r.reason);
            }
        }
        Command::Sample { corpus, n, seed, kind, stratum, output } => {
            let (store, _) = CorpusStore::load(&corpus)?;
            let ids = sample_units(&store, n, seed, UnitFilter { kind, stratum })?;
            let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
            match output {
                Some(p) => std::fs::write(&p, text).map_err(Error::io(&p))?,
                None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::io("stdout"))?,
            }
        }
        Command::Run(args) => {
            let mut config = RunConfig::load(&args.config)?;
            if let Some(id) = args.run_id {
                config.run_id = Some(id);
            }
            if let Some(n) = args.n {
                config.sample.n = Some(n);
            }
            if let Some(seed) = args.seed {
                config.sample.seed = seed;
            }
            if let Some(ep) = args.endpoint {
                config.endpoint = ep;
            }
            if let Some(cb) = args.codebook {
                config.codebook = cb;
            }
            let summary = runtime()?.block_on(pipeline::run_phase(&config))?;
            print!("{}", summary.render());
        }
        Command::Bench { runs_dir, reference, candidates, codebook, level, full_universe, out } => {
            let output_dir = out.unwrap_or_else(|| runs_dir.join(&reference).join("reports"));
            let report = pipeline::run_bench(&BenchConfig {
                runs_dir,
                reference,
                candidates,
                codebook,
                level,
                universe: if full_universe { Universe::Full } else { Universe::Used },
                output_dir: output_dir.clone(),
            })?;
            print!("{}", report.render_text());
            println!("written to {}", output_dir.display());
        }
        Command::Analyze { runs_dir, runs, corpus, codebooks, codebook_version, remap, out } => {
            let summary = pipeline::run_analysis(&AnalysisConfig {
                runs_dir,
                runs,
                corpus,
                codebooks,
                codebook_version,
                remap,
                output_dir: out,
            })?;
            print!("{}", summary.render());
        }
        Command::Codebook(cmd) => match cmd {
            CodebookCommand::Validate { path } => {
                let cb = Codebook::load(&path)?;
                println!(
                    "codebook v{}: {} domains, {} codes ({} active)",
                    cb.version_id,
                    cb.domains().len(),
                    cb.codes().len(),
                    cb.active_codes().count()
                );
            }
            CodebookCommand::Init { registry } => {
                let mut reg = CodebookRegistry::open(&registry)?;
                registry_put(&mut reg, seed_codebook())?;
            }
            CodebookCommand::Merge { registry, source, targets } => {
                let mut reg = CodebookRegistry::open(&registry)?;
                let targets: Vec<&str> = targets.iter().map(String::as_str).collect();
                let next = latest(&reg)?.merge_codes(&source, &targets)?;
                registry_put(&mut reg, next)?;
            }
            CodebookCommand::Add { registry, domain, group, item, definition, alias, allow_new_domain } => {
                let mut reg = CodebookRegistry::open(&registry)?;
                let mut new = NewCode::new(&domain, &group, &item, &definition, "cli");
                new.aliases = alias;
                let next = latest(&reg)?.add_code(new, !allow_new_domain)?;
                registry_put(&mut reg, next)?;
            }
            CodebookCommand::Diff { older, newer } => {
                let older = Codebook::load(&older)?;
                let newer = Codebook::load(&newer)?;
                for change in newer.diff(&older) {
                    println!("{change}");
                }
            }
        },
        Command::Review(ReviewCommand::Serve { runs_dir, codebooks, audit_log, bind, assets, run }) => {
            let desk = ReviewDesk::open(DeskConfig {
                runs_dir,
                codebook_dir: codebooks,
                audit_log,
                default_run: run,
            })?;
            println!("review desk on http://{bind}");
            runtime()?
                .block_on(review::serve(desk, bind, assets))
                .map_err(Error::io(bind.to_string()))?;
        }
        Command::Triage { runs_dir, run } => {
            let (_, records) = pipeline::load_run_records(&runs_dir, &run)?;
            let clusters = other_triage(&records);
            println!("{}", serde_json::to_string_pretty(&clusters).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
