//! Inter-annotator agreement and run quality.
//!
//! Agreement is computed over binary unit × code cells: a cell is 1 when
//! the annotator assigned the code (projected to the chosen level) to the
//! unit.

mod bench;
mod confusion;
mod quality;

pub use bench::{benchmark_report, BenchmarkReport, BenchmarkRow};
pub(crate) use confusion::csv_field;
pub use confusion::{confusion_matrix, ConfusionCell, ConfusionMatrix, NO_LABEL};
pub use quality::{run_quality, RunQuality};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::corpus::Stratum;
use crate::parser::AnnotationRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("annotators cover different units: {only_a} only in A (e.g. {example_a:?}), {only_b} only in B (e.g. {example_b:?})")]
    UnitSetMismatch {
        only_a: usize,
        only_b: usize,
        example_a: Option<String>,
        example_b: Option<String>,
    },
    #[error("records use codebook versions {found:?}, expected {expected}")]
    VersionMismatch { found: Vec<u64>, expected: u64 },
    #[error("unit {unit_id} appears more than once for annotator {annotator}")]
    DuplicateUnit { unit_id: String, annotator: String },
    #[error("code {0} is not in the codebook")]
    UnknownCode(String),
    #[error("no records")]
    Empty,
    #[error("candidates do not cover the reference units: {0:?}")]
    Coverage(BTreeMap<String, String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Domain,
    Group,
    #[default]
    Item,
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "domain" => Ok(Level::Domain),
            "group" => Ok(Level::Group),
            "item" => Ok(Level::Item),
            _ => Err(format!("unknown level {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumSelect {
    Request,
    Response,
    #[default]
    All,
}

impl StratumSelect {
    pub fn admits(self, stratum: Option<Stratum>) -> bool {
        match self {
            StratumSelect::All => true,
            StratumSelect::Request => stratum == Some(Stratum::Request),
            StratumSelect::Response => stratum == Some(Stratum::Response),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StratumSelect::Request => "Request",
            StratumSelect::Response => "Response",
            StratumSelect::All => "All",
        }
    }
}

impl std::str::FromStr for StratumSelect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "request" => Ok(StratumSelect::Request),
            "response" => Ok(StratumSelect::Response),
            "all" => Ok(StratumSelect::All),
            _ => Err(format!("unknown stratum {s:?}")),
        }
    }
}

/// Which codes form the cell columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Universe {
    /// Codes used by either annotator on at least one unit.
    #[default]
    Used,
    /// Every active code of the codebook, plus any code either side used.
    Full,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub level: Level,
    pub stratum: StratumSelect,
    pub universe: Universe,
    /// Also compute macro-averaged F1.
    pub macro_f1: bool,
}

pub type LabelSets = BTreeSet<String>;

/// Projects a record's resolved codes to the requested level.
pub fn project(record: &AnnotationRecord, cb: &Codebook, level: Level) -> Result<LabelSets, MetricsError> {
    let mut out = BTreeSet::new();
    for id in &record.labels.resolved {
        if level == Level::Item {
            out.insert(id.clone());
            continue;
        }
        let code = cb.get(id).ok_or_else(|| MetricsError::UnknownCode(id.clone()))?;
        match level {
            Level::Group => {
                out.insert(code.group_key());
            }
            Level::Domain => out.extend(code.all_domains().map(str::to_string)),
            Level::Item => unreachable!(),
        }
    }
    Ok(out)
}

fn full_universe(cb: &Codebook, level: Level) -> LabelSets {
    cb.active_codes()
        .flat_map(|c| -> Vec<String> {
            match level {
                Level::Item => vec![c.code_id.clone()],
                Level::Group => vec![c.group_key()],
                Level::Domain => c.all_domains().map(str::to_string).collect(),
            }
        })
        .collect()
}

/// Aligned label sets of two annotators over one unit set.
#[derive(Debug, Clone, PartialEq)]
pub struct Paired {
    pub annotator_a: String,
    pub annotator_b: String,
    /// (unit_id, A's labels, B's labels) in unit-id order.
    pub units: Vec<(String, LabelSets, LabelSets)>,
}

fn index(records: &[AnnotationRecord]) -> Result<BTreeMap<&str, &AnnotationRecord>, MetricsError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.unit_id.as_str(), r).is_some() {
            return Err(MetricsError::DuplicateUnit {
                unit_id: r.unit_id.clone(),
                annotator: r.annotator_id.clone(),
            });
        }
    }
    Ok(map)
}

fn annotator_name(records: &[AnnotationRecord]) -> String {
    let names: BTreeSet<&str> = records.iter().map(|r| r.annotator_id.as_str()).collect();
    names.into_iter().collect::<Vec<_>>().join("+")
}

/// Checks that both sides cover the same units under `cb`'s version, then
/// projects each unit's labels. A unit's stratum comes from A, or from B
/// when A's record carries none.
pub fn pair_records(
    a: &[AnnotationRecord],
    b: &[AnnotationRecord],
    cb: &Codebook,
    level: Level,
    stratum: StratumSelect,
) -> Result<Paired, MetricsError> {
    let versions: BTreeSet<u64> = a.iter().chain(b).map(|r| r.codebook_version).collect();
    if versions.iter().any(|&v| v != cb.version_id) {
        return Err(MetricsError::VersionMismatch {
            found: versions.into_iter().collect(),
            expected: cb.version_id,
        });
    }
    let ia = index(a)?;
    let ib = index(b)?;
    let only_a: Vec<&str> = ia.keys().filter(|k| !ib.contains_key(*k)).copied().collect();
    let only_b: Vec<&str> = ib.keys().filter(|k| !ia.contains_key(*k)).copied().collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(MetricsError::UnitSetMismatch {
            only_a: only_a.len(),
            only_b: only_b.len(),
            example_a: only_a.first().map(|s| s.to_string()),
            example_b: only_b.first().map(|s| s.to_string()),
        });
    }
    let mut units = Vec::new();
    for (id, ra) in &ia {
        let rb = ib[id];
        if !stratum.admits(ra.stratum.or(rb.stratum)) {
            continue;
        }
        units.push((id.to_string(), project(ra, cb, level)?, project(rb, cb, level)?));
    }
    Ok(Paired {
        annotator_a: annotator_name(a),
        annotator_b: annotator_name(b),
        units,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl CellCounts {
    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    /// `None` when the code universe is empty.
    pub kappa: Option<f64>,
    pub po: f64,
    pub pe: f64,
    pub cells: CellCounts,
    pub unit_count: usize,
    pub code_universe_size: usize,
    /// Set when a marginal is 0 or 1, or there is nothing to compare.
    pub degenerate: bool,
}

pub fn cell_counts<'s>(units: impl IntoIterator<Item = (&'s LabelSets, &'s LabelSets)>, universe: &LabelSets) -> CellCounts {
    let mut c = CellCounts::default();
    for (a, b) in units {
        for code in universe {
            match (a.contains(code), b.contains(code)) {
                (true, true) => c.n11 += 1,
                (true, false) => c.n10 += 1,
                (false, true) => c.n01 += 1,
                (false, false) => c.n00 += 1,
            }
        }
    }
    c
}

/// Cohen's kappa from pooled binary cells.
pub fn kappa_from_cells(c: CellCounts, unit_count: usize, universe_size: usize) -> KappaResult {
    let n = c.total();
    if n == 0 {
        return KappaResult {
            kappa: None,
            po: 0.0,
            pe: 0.0,
            cells: c,
            unit_count,
            code_universe_size: universe_size,
            degenerate: true,
        };
    }
    let nf = n as f64;
    let a_pos = c.n11 + c.n10;
    let b_pos = c.n11 + c.n01;
    let po = (c.n11 + c.n00) as f64 / nf;
    let pa = a_pos as f64 / nf;
    let pb = b_pos as f64 / nf;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    let extreme = |k: u64| k == 0 || k == n;
    let degenerate = extreme(a_pos) || extreme(b_pos);
    let kappa = if extreme(a_pos) && a_pos == b_pos {
        // pe == 1
        if c.n10 + c.n01 == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (po - pe) / (1.0 - pe)
    };
    KappaResult {
        kappa: Some(kappa),
        po,
        pe,
        cells: c,
        unit_count,
        code_universe_size: universe_size,
        degenerate,
    }
}

fn universe_of(paired: &Paired, cb: &Codebook, opts: &MetricOptions) -> LabelSets {
    let mut universe: LabelSets = paired.units.iter().flat_map(|(_, a, b)| a.iter().chain(b)).cloned().collect();
    if opts.universe == Universe::Full {
        universe.extend(full_universe(cb, opts.level));
    }
    universe
}

pub fn pooled_kappa(
    a: &[AnnotationRecord],
    b: &[AnnotationRecord],
    cb: &Codebook,
    opts: &MetricOptions,
) -> Result<KappaResult, MetricsError> {
    let paired = pair_records(a, b, cb, opts.level, opts.stratum)?;
    let universe = universe_of(&paired, cb, opts);
    let cells = cell_counts(paired.units.iter().map(|(_, a, b)| (a, b)), &universe);
    Ok(kappa_from_cells(cells, paired.units.len(), universe.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub f1: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: u64,
    pub predicted: u64,
    pub reference: u64,
    /// Neither side labeled anything; f1 is reported as 1.
    pub empty_both: bool,
}

/// Micro-F1 with `a` as prediction and `b` as reference.
pub fn f1_from_sets<'s>(units: impl IntoIterator<Item = (&'s LabelSets, &'s LabelSets)>) -> F1Result {
    let (mut tp, mut pred, mut reference) = (0u64, 0u64, 0u64);
    for (a, b) in units {
        tp += a.intersection(b).count() as u64;
        pred += a.len() as u64;
        reference += b.len() as u64;
    }
    let precision = (pred > 0).then(|| tp as f64 / pred as f64);
    let recall = (reference > 0).then(|| tp as f64 / reference as f64);
    let empty_both = pred == 0 && reference == 0;
    let f1 = if empty_both {
        1.0
    } else if pred + reference == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (pred + reference) as f64
    };
    F1Result {
        f1,
        precision,
        recall,
        true_positives: tp,
        predicted: pred,
        reference,
        empty_both,
    }
}

pub fn micro_f1(
    a: &[AnnotationRecord],
    b: &[AnnotationRecord],
    cb: &Codebook,
    opts: &MetricOptions,
) -> Result<F1Result, MetricsError> {
    let paired = pair_records(a, b, cb, opts.level, opts.stratum)?;
    Ok(f1_from_sets(paired.units.iter().map(|(_, a, b)| (a, b))))
}

/// Mean of per-code F1 over the code universe.
pub fn macro_f1_from_paired(paired: &Paired, universe: &LabelSets) -> Option<f64> {
    if universe.is_empty() {
        return None;
    }
    let total: f64 = universe
        .iter()
        .map(|code| {
            let only = |s: &LabelSets| -> LabelSets { s.iter().filter(|c| *c == code).cloned().collect() };
            let sets: Vec<(LabelSets, LabelSets)> = paired.units.iter().map(|(_, a, b)| (only(a), only(b))).collect();
            f1_from_sets(sets.iter().map(|(a, b)| (a, b))).f1
        })
        .sum();
    Some(total / universe.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAgreement {
    pub kappa: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotator_a: String,
    pub annotator_b: String,
    pub stratum: StratumSelect,
    pub level: Level,
    pub universe: Universe,
    pub kappa: Option<f64>,
    pub po: f64,
    pub pe: f64,
    pub micro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    pub cell_counts: CellCounts,
    pub per_domain: BTreeMap<String, DomainAgreement>,
    pub unit_count: usize,
    pub code_universe_size: usize,
    pub degenerate: bool,
    pub f1_empty_both: bool,
}

fn domain_of(label: &str, cb: &Codebook, level: Level) -> String {
    match level {
        Level::Domain => label.to_string(),
        Level::Group => label.split('/').next().unwrap_or(label).to_string(),
        Level::Item => cb.get(label).map_or_else(|| label.to_string(), |c| c.domain.clone()),
    }
}

pub fn agreement_from_paired(paired: &Paired, cb: &Codebook, opts: &MetricOptions) -> AgreementReport {
    let universe = universe_of(paired, cb, opts);
    let pairs = || paired.units.iter().map(|(_, a, b)| (a, b));
    let k = kappa_from_cells(cell_counts(pairs(), &universe), paired.units.len(), universe.len());
    let f = f1_from_sets(pairs());

    let mut by_domain: BTreeMap<String, LabelSets> = BTreeMap::new();
    for label in &universe {
        by_domain.entry(domain_of(label, cb, opts.level)).or_default().insert(label.clone());
    }
    let per_domain = by_domain
        .into_iter()
        .map(|(domain, codes)| {
            let restrict = |s: &LabelSets| -> LabelSets { s.intersection(&codes).cloned().collect() };
            let sets: Vec<(LabelSets, LabelSets)> = paired.units.iter().map(|(_, a, b)| (restrict(a), restrict(b))).collect();
            let cells = cell_counts(sets.iter().map(|(a, b)| (a, b)), &codes);
            let dk = kappa_from_cells(cells, sets.len(), codes.len());
            let df = f1_from_sets(sets.iter().map(|(a, b)| (a, b)));
            (domain, DomainAgreement { kappa: dk.kappa, f1: df.f1 })
        })
        .collect();

    AgreementReport {
        annotator_a: paired.annotator_a.clone(),
        annotator_b: paired.annotator_b.clone(),
        stratum: opts.stratum,
        level: opts.level,
        universe: opts.universe,
        kappa: k.kappa,
        po: k.po,
        pe: k.pe,
        micro_f1: f.f1,
        macro_f1: if opts.macro_f1 { macro_f1_from_paired(paired, &universe) } else { None },
        cell_counts: k.cells,
        per_domain,
        unit_count: k.unit_count,
        code_universe_size: k.code_universe_size,
        degenerate: k.degenerate,
        f1_empty_both: f.empty_both,
    }
}

pub fn agreement_report(
    a: &[AnnotationRecord],
    b: &[AnnotationRecord],
    cb: &Codebook,
    opts: &MetricOptions,
) -> Result<AgreementReport, MetricsError> {
    let paired = pair_records(a, b, cb, opts.level, opts.stratum)?;
    Ok(agreement_from_paired(&paired, cb, opts))
}
