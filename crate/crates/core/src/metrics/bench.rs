use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    agreement_from_paired, pair_records, run_quality, CellCounts, Level, MetricOptions, MetricsError, RunQuality,
    StratumSelect, Universe,
};
use crate::codebook::Codebook;
use crate::parser::AnnotationRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub comparison: String,
    pub model: String,
    pub stratum: StratumSelect,
    pub kappa: Option<f64>,
    pub f1: f64,
    pub cell_counts: CellCounts,
    pub unit_count: usize,
    pub degenerate: bool,
    /// Candidate run quality within the stratum.
    pub quality: Option<RunQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub reference: String,
    pub level: Level,
    pub universe: Universe,
    pub rows: Vec<BenchmarkRow>,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned plain-text table, one row per candidate and stratum.
    pub fn render_text(&self) -> String {
        let header = ["Comparison", "Domain", "Cohen's Kappa", "F1 Score", "Units", "Valid", "Null", "Density"];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                let q = r.quality.as_ref();
                [
                    r.comparison.clone(),
                    r.stratum.label().to_string(),
                    format!("{}{}", fmt_opt(r.kappa, 2), if r.degenerate { "*" } else { "" }),
                    format!("{:.2}", r.f1),
                    r.unit_count.to_string(),
                    fmt_opt(q.map(|q| q.valid_rate * 100.0), 1) + "%",
                    fmt_opt(q.map(|q| q.null_rate * 100.0), 1) + "%",
                    fmt_opt(q.and_then(|q| q.label_density_mean), 2),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i < 2 {
                    s.push_str(&format!("{cell:<w$}"));
                } else {
                    s.push_str(&format!("{cell:>w$}"));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&header.map(String::from));
        out.push_str(&line(&widths.map(|w| "-".repeat(w))));
        for row in &body {
            out.push_str(&line(row));
        }
        if self.rows.iter().any(|r| r.degenerate) {
            out.push_str("* degenerate marginals\n");
        }
        out
    }
}

/// Compares each candidate against the reference, per Request and Response
/// stratum. Every candidate must cover exactly the reference units.
pub fn benchmark_report(
    reference: &[AnnotationRecord],
    candidates: &[(String, Vec<AnnotationRecord>)],
    cb: &Codebook,
    level: Level,
    universe: Universe,
) -> Result<BenchmarkReport, MetricsError> {
    let reference_name = super::annotator_name(reference);
    let mut coverage = BTreeMap::new();
    for (model, records) in candidates {
        if let Err(e) = pair_records(reference, records, cb, level, StratumSelect::All) {
            coverage.insert(model.clone(), e.to_string());
        }
    }
    if !coverage.is_empty() {
        return Err(MetricsError::Coverage(coverage));
    }
    let mut rows = Vec::new();
    for (model, records) in candidates {
        let by_unit: std::collections::HashMap<&str, &AnnotationRecord> =
            records.iter().map(|r| (r.unit_id.as_str(), r)).collect();
        for stratum in [StratumSelect::Request, StratumSelect::Response] {
            let opts = MetricOptions {
                level,
                stratum,
                universe,
                macro_f1: false,
            };
            let paired = pair_records(reference, records, cb, level, stratum)?;
            let report = agreement_from_paired(&paired, cb, &opts);
            let in_stratum: Vec<AnnotationRecord> = paired
                .units
                .iter()
                .map(|(id, _, _)| by_unit[id.as_str()].clone())
                .collect();
            rows.push(BenchmarkRow {
                comparison: format!("{reference_name} vs {model}"),
                model: model.clone(),
                stratum,
                kappa: report.kappa,
                f1: report.micro_f1,
                cell_counts: report.cell_counts,
                unit_count: report.unit_count,
                degenerate: report.degenerate,
                quality: run_quality(&in_stratum).ok(),
            });
        }
    }
    Ok(BenchmarkReport {
        reference: reference_name,
        level,
        universe,
        rows,
    })
}
