use std::io::Write;

use crate::error::{invalid, Result};

pub const CSV_HEADER: &str = "time,mass,mass_drift,energy,delta_E_coarsen,num_elements,num_dofs";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    /// Zero on steps without a coarsening event.
    pub delta_e_coarsen: f64,
    pub num_elements: usize,
    pub num_dofs: usize,
}

/// Per-step time series of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    rows: Vec<DiagnosticsRow>,
}

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a row; times must be strictly increasing.
    pub fn push(&mut self, row: DiagnosticsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.time > last.time) {
                return invalid(format!("time {} does not follow {}", row.time, last.time));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[DiagnosticsRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `Δm(t) = ∫φ(t) − ∫φ(0)` for every row.
    pub fn mass_drift(&self) -> Result<Vec<f64>> {
        let Some(first) = self.rows.first() else {
            return invalid("mass drift of an empty series".to_string());
        };
        Ok(self.rows.iter().map(|r| r.mass - first.mass).collect())
    }

    pub fn max_abs_drift(&self) -> Result<f64> {
        Ok(self.mass_drift()?.into_iter().fold(0.0, |m, d| m.max(d.abs())))
    }

    /// Energy mismatches of the steps that coarsened.
    pub fn coarsening_mismatches(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.delta_e_coarsen).filter(|&d| d != 0.0).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        let first = self.rows.first().map(|r| r.mass).unwrap_or(0.0);
        for r in &self.rows {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{},{}",
                r.time,
                r.mass,
                r.mass - first,
                r.energy,
                r.delta_e_coarsen,
                r.num_elements,
                r.num_dofs
            )?;
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
