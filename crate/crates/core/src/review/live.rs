use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::metrics::{kappa_from_cells, CellCounts};

/// Running pooled agreement between verified (A) and model (B) label sets.
///
/// Under the used-code universe every 1-cell involves a code of the
/// universe, so n11/n10/n01 accumulate per unit and n00 follows from the
/// universe size.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiveAgreement {
    units: u64,
    universe: BTreeSet<String>,
    n11: u64,
    n10: u64,
    n01: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSnapshot {
    pub units: u64,
    pub kappa: Option<f64>,
    pub f1: Option<f64>,
    pub cell_counts: CellCounts,
    pub degenerate: bool,
}

impl LiveAgreement {
    pub fn add(&mut self, verified: &BTreeSet<String>, model: &BTreeSet<String>) {
        self.units += 1;
        self.universe.extend(verified.iter().cloned());
        self.universe.extend(model.iter().cloned());
        let both = verified.intersection(model).count() as u64;
        self.n11 += both;
        self.n10 += verified.len() as u64 - both;
        self.n01 += model.len() as u64 - both;
    }

    pub fn cells(&self) -> CellCounts {
        let total = self.units * self.universe.len() as u64;
        CellCounts {
            n11: self.n11,
            n10: self.n10,
            n01: self.n01,
            n00: total - self.n11 - self.n10 - self.n01,
        }
    }

    pub fn snapshot(&self) -> AgreementSnapshot {
        let cells = self.cells();
        let k = kappa_from_cells(cells, self.units as usize, self.universe.len());
        let labeled = 2 * self.n11 + self.n10 + self.n01;
        let f1 = match (self.units, labeled) {
            (0, _) => None,
            (_, 0) => Some(1.0),
            _ => Some(2.0 * self.n11 as f64 / labeled as f64),
        };
        AgreementSnapshot {
            units: self.units,
            kappa: k.kappa,
            f1,
            cell_counts: cells,
            degenerate: k.degenerate,
        }
    }
}
