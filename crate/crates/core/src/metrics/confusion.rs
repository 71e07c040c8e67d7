use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{pair_records, Level, MetricsError, StratumSelect};
use crate::codebook::Codebook;
use crate::parser::AnnotationRecord;

/// Row or column label for "the other annotator assigned nothing here".
pub const NO_LABEL: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub a: String,
    pub b: String,
    pub count: u64,
}

/// Co-assignment counts between annotator A (rows) and B (columns).
///
/// Per unit, codes both sides assigned land on the diagonal. The remaining
/// codes of A are crossed with the remaining codes of B; if one side has
/// nothing left, the other side's codes pair with [`NO_LABEL`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: BTreeMap<String, BTreeMap<String, u64>>,
}

impl ConfusionMatrix {
    pub fn get(&self, a: &str, b: &str) -> u64 {
        self.cells.get(a).and_then(|r| r.get(b)).copied().unwrap_or(0)
    }

    fn bump(&mut self, a: &str, b: &str) {
        *self.cells.entry(a.to_string()).or_default().entry(b.to_string()).or_default() += 1;
    }

    pub fn diagonal(&self) -> u64 {
        self.cells.iter().map(|(a, row)| row.get(a).copied().unwrap_or(0)).sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.values().flat_map(|r| r.values()).sum()
    }

    /// Off-diagonal cells, most frequent first; ties by label.
    pub fn misalignments(&self) -> Vec<ConfusionCell> {
        let mut out: Vec<ConfusionCell> = self
            .cells
            .iter()
            .flat_map(|(a, row)| {
                row.iter().filter(move |(b, _)| *b != a).map(move |(b, &count)| ConfusionCell {
                    a: a.clone(),
                    b: b.clone(),
                    count,
                })
            })
            .collect();
        out.sort_by(|x, y| y.count.cmp(&x.count).then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b))));
        out
    }

    /// Long-format CSV: a,b,count.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,b,count\n");
        for (a, row) in &self.cells {
            for (b, n) in row {
                s.push_str(&format!("{},{},{n}\n", csv_field(a), csv_field(b)));
            }
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn confusion_matrix(
    a: &[AnnotationRecord],
    b: &[AnnotationRecord],
    cb: &Codebook,
    level: Level,
    stratum: StratumSelect,
) -> Result<ConfusionMatrix, MetricsError> {
    let paired = pair_records(a, b, cb, level, stratum)?;
    let mut m = ConfusionMatrix::default();
    for (_, sa, sb) in &paired.units {
        for x in sa.intersection(sb) {
            m.bump(x, x);
        }
        let ra: Vec<&String> = sa.difference(sb).collect();
        let rb: Vec<&String> = sb.difference(sa).collect();
        match (ra.is_empty(), rb.is_empty()) {
            (true, true) => {}
            (false, true) => ra.iter().for_each(|x| m.bump(x, NO_LABEL)),
            (true, false) => rb.iter().for_each(|y| m.bump(NO_LABEL, y)),
            (false, false) => {
                for x in &ra {
                    for y in &rb {
                        m.bump(x, y);
                    }
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::seed_codebook;
    use crate::parser::LabelSet;

    fn rec(unit: &str, who: &str, codes: &[&str]) -> AnnotationRecord {
        AnnotationRecord::manual(unit, who, 1, LabelSet::from_codes(codes.iter().copied()))
    }

    #[test]
    fn agreement_is_diagonal() {
        let cb = seed_codebook();
        let a = vec![rec("u1", "A", &["x.a", "x.b"]), rec("u2", "A", &["x.c"])];
        let m = confusion_matrix(&a, &a, &cb, Level::Item, StratumSelect::All).unwrap();
        assert_eq!(m.diagonal(), m.total());
        assert_eq!(m.total(), 3);
        assert!(m.misalignments().is_empty());
    }

    #[test]
    fn broad_versus_narrow_dominates() {
        let cb = seed_codebook();
        let broad = "ccf.planning.in-class-activity-design-and-adjustment";
        let narrow = ["ip.collaborative-learning.group-work", "ip.collaborative-learning.gallery-walk"];
        let a: Vec<_> = (0..6).map(|i| rec(&format!("u{i}"), "A", &[broad])).collect();
        let b: Vec<_> = (0..6).map(|i| rec(&format!("u{i}"), "B", &[narrow[usize::from(i >= 4)]])).collect();
        let m = confusion_matrix(&a, &b, &cb, Level::Item, StratumSelect::All).unwrap();
        let top = &m.misalignments()[0];
        assert_eq!(top.a, broad);
        assert_eq!(top.count, 4);
    }

    #[test]
    fn worked_fixture_pairs() {
        let cb = seed_codebook();
        let a = vec![rec("u1", "A", &["c1"]), rec("u2", "A", &["c1", "c2"]), rec("u3", "A", &[]), rec("u4", "A", &["c2"])];
        let b = vec![rec("u1", "B", &["c1"]), rec("u2", "B", &["c1"]), rec("u3", "B", &["c2"]), rec("u4", "B", &["c2"])];
        let m = confusion_matrix(&a, &b, &cb, Level::Item, StratumSelect::All).unwrap();
        assert_eq!(m.get("c1", "c1"), 2);
        assert_eq!(m.get("c2", "c2"), 1);
        assert_eq!(m.get("c2", NO_LABEL), 1);
        assert_eq!(m.get(NO_LABEL, "c2"), 1);
        assert_eq!(m.total(), 5);
        assert!(m.to_csv().starts_with("a,b,count\n"));
    }
}
