//! On-disk layout of a run: `<runs>/<run_id>/{manifest.json, records.jsonl,
//! units.jsonl, prompts/, reports/}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::corpus::AnnotationUnit;
use crate::gateway::RunManifest;
use crate::parser::{load_records, save_records, AnnotationRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub run_id: String,
    pub root: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
}

impl RunDir {
    pub fn new(runs_dir: impl AsRef<Path>, run_id: &str) -> Self {
        RunDir {
            run_id: run_id.to_string(),
            root: runs_dir.as_ref().join(run_id),
        }
    }

    pub fn exists(&self) -> bool {
        self.manifest_path().is_file()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }

    pub fn units_path(&self) -> PathBuf {
        self.root.join("units.jsonl")
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.root.join("prompts")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.root.join("transcript.jsonl")
    }

    pub fn create(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(self.reports_dir())
    }

    pub fn write_manifest(&self, m: &RunManifest) -> std::io::Result<()> {
        std::fs::write(self.manifest_path(), serde_json::to_string_pretty(m)? + "\n")
    }

    pub fn load_manifest(&self) -> std::io::Result<RunManifest> {
        let path = self.manifest_path();
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| io_err(&path, e))
    }

    pub fn write_records(&self, records: &[AnnotationRecord]) -> std::io::Result<()> {
        save_records(self.records_path(), records)
    }

    pub fn load_records(&self) -> std::io::Result<Vec<AnnotationRecord>> {
        load_records(self.records_path())
    }

    pub fn write_units(&self, units: &[AnnotationUnit]) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(self.units_path())?);
        for u in units {
            serde_json::to_writer(&mut w, u)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn load_units(&self) -> std::io::Result<Vec<AnnotationUnit>> {
        let path = self.units_path();
        let mut out = Vec::new();
        for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| io_err(&path, format!("line {}: {e}", n + 1)))?);
        }
        Ok(out)
    }

    pub fn unit_index(&self) -> std::io::Result<HashMap<String, AnnotationUnit>> {
        Ok(self.load_units()?.into_iter().map(|u| (u.unit_id.clone(), u)).collect())
    }
}
