use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::parser::{AnnotationRecord, ParseStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunQuality {
    pub total: usize,
    pub valid: usize,
    pub recovered: usize,
    pub null: usize,
    /// (valid + recovered) / total.
    pub valid_rate: f64,
    /// valid / total.
    pub strict_valid_rate: f64,
    pub null_rate: f64,
    /// Resolved codes per non-null record; `None` when every record is null.
    pub label_density_mean: Option<f64>,
    pub label_density_p10: Option<f64>,
    pub label_density_p90: Option<f64>,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
pub(crate) fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn run_quality(records: &[AnnotationRecord]) -> Result<RunQuality, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let count = |s: ParseStatus| records.iter().filter(|r| r.parse_status == s).count();
    let (valid, recovered, null) = (count(ParseStatus::Valid), count(ParseStatus::Recovered), count(ParseStatus::Null));
    let total = records.len();
    let mut density: Vec<f64> = records
        .iter()
        .filter(|r| !r.is_null())
        .map(|r| r.labels.resolved.len() as f64)
        .collect();
    density.sort_by(f64::total_cmp);
    let mean = (!density.is_empty()).then(|| density.iter().sum::<f64>() / density.len() as f64);
    Ok(RunQuality {
        total,
        valid,
        recovered,
        null,
        valid_rate: (valid + recovered) as f64 / total as f64,
        strict_valid_rate: valid as f64 / total as f64,
        null_rate: null as f64 / total as f64,
        label_density_mean: mean,
        label_density_p10: percentile(&density, 0.1),
        label_density_p90: percentile(&density, 0.9),
    })
}
