//! Finite-J versus Gaussian comparison rows.

use std::io::Write;

use crate::error::Result;

pub const ORACLE_CSV_HEADER: &str = "J,kappa_t,eta,quantity,finite_J_value,gaussian_value,rel_gap,stderr";

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub total_spin: f64,
    pub kappa_t: f64,
    pub eta: f64,
    pub quantity: String,
    pub finite_j_value: f64,
    pub gaussian_value: f64,
    /// Monte-Carlo standard error, zero for deterministic quantities.
    pub stderr: f64,
}

impl OracleRow {
    pub fn rel_gap(&self) -> f64 {
        ((self.finite_j_value - self.gaussian_value) / self.gaussian_value).abs()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.total_spin,
            self.kappa_t,
            self.eta,
            self.quantity,
            self.finite_j_value,
            self.gaussian_value,
            self.rel_gap(),
            self.stderr
        )
    }
}

pub fn write_oracle_csv<W: Write>(mut w: W, rows: &[OracleRow]) -> Result<()> {
    writeln!(w, "{ORACLE_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
