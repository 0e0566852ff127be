//! Result reports. Every command ends in one table, written twice: a
//! fixed-width text rendering for the terminal and a JSON document for
//! scripts. Each row carries its provenance; a fitted value always shows
//! an uncertainty, and a frozen one is marked as such instead, so no
//! number leaves the tool without a statement of how firm it is.

use std::fmt::Write as _;
use std::path::Path;

use rabifit::units::{rad_s_to_mhz, tesla_to_gauss};
use rabifit::FitResult;

use crate::{CliError, Result};

/// Presentation unit of one report row. Values arrive in internal SI and
/// convert on construction; uncertainties scale by the same linear factor.
#[derive(Debug, Clone, Copy)]
pub enum Unit {
    /// rad/s shown as MHz.
    RateMhz,
    /// rad/s shown as Hz; used for the single-spin coupling.
    RateHz,
    /// tesla shown as gauss.
    FieldGauss,
    /// meters shown as millimeters.
    LengthMm,
    Radian,
    Dimensionless,
}

impl Unit {
    fn convert(self, v: f64) -> f64 {
        match self {
            Unit::RateMhz => rad_s_to_mhz(v),
            Unit::RateHz => v / std::f64::consts::TAU,
            Unit::FieldGauss => tesla_to_gauss(v),
            Unit::LengthMm => v * 1e3,
            Unit::Radian | Unit::Dimensionless => v,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Unit::RateMhz => "MHz",
            Unit::RateHz => "Hz",
            Unit::FieldGauss => "G",
            Unit::LengthMm => "mm",
            Unit::Radian => "rad",
            Unit::Dimensionless => "",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub name: String,
    pub value: f64,
    pub unit: &'static str,
    pub uncertainty: Option<f64>,
    pub frozen: bool,
    /// Where the number comes from: "fitted", "frozen", "derived",
    /// "input", "scanned", or "reference".
    pub provenance: &'static str,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub residual_norm: Option<f64>,
    pub engine_note: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            command: command.to_string(),
            converged: None,
            iterations: None,
            residual_norm: None,
            engine_note: None,
            rows: Vec::new(),
        }
    }

    /// Copies the solver diagnostics out of a fit result.
    pub fn with_fit_status(mut self, fit: &FitResult) -> Self {
        self.converged = Some(fit.converged);
        self.iterations = Some(fit.iterations);
        self.residual_norm = Some(fit.residual_norm);
        self.engine_note = fit.note.clone();
        self
    }

    /// Appends one fitted (or frozen) parameter, converted to `unit`.
    pub fn push_param(&mut self, fit: &FitResult, param: &str, name: &str, unit: Unit) {
        let p = fit
            .param(param)
            .unwrap_or_else(|| panic!("fit result lacks parameter {param:?}"));
        let scale = unit.convert(1.0);
        let uncertainty = if p.frozen {
            None
        } else {
            let stderr = p.variance.sqrt() * scale;
            stderr.is_finite().then_some(stderr)
        };
        self.rows.push(ReportRow {
            name: name.to_string(),
            value: unit.convert(p.value),
            unit: unit.label(),
            uncertainty,
            frozen: p.frozen,
            provenance: if p.frozen { "frozen" } else { "fitted" },
        });
    }

    /// Appends a non-fitted quantity (derived, input, scanned, reference).
    pub fn push_value(&mut self, name: &str, value: f64, unit: Unit, provenance: &'static str) {
        self.rows.push(ReportRow {
            name: name.to_string(),
            value: unit.convert(value),
            unit: unit.label(),
            uncertainty: None,
            frozen: false,
            provenance,
        });
    }

    /// Appends a derived quantity with an uncertainty propagated by the
    /// caller, both already in internal units.
    pub fn push_derived(&mut self, name: &str, value: f64, uncertainty: Option<f64>, unit: Unit) {
        let scale = unit.convert(1.0);
        self.rows.push(ReportRow {
            name: name.to_string(),
            value: unit.convert(value),
            unit: unit.label(),
            uncertainty: uncertainty.map(|u| u * scale).filter(|u| u.is_finite()),
            frozen: false,
            provenance: "derived",
        });
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        if let Some(converged) = self.converged {
            let iters = self.iterations.unwrap_or(0);
            let norm = self.residual_norm.unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "converged: {converged} ({iters} iterations, residual norm {})",
                format_value(norm)
            );
        }
        if let Some(note) = &self.engine_note {
            let _ = writeln!(out, "note: {note}");
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<20} {:>14} {:<4} {:>14}  {}",
            "quantity", "value", "unit", "uncertainty", "provenance"
        );
        for row in &self.rows {
            let unc = match (&row.uncertainty, row.frozen) {
                (Some(u), _) => format_value(*u),
                (None, true) => "frozen".to_string(),
                (None, false) => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<20} {:>14} {:<4} {:>14}  {}",
                row.name,
                format_value(row.value),
                row.unit,
                unc,
                row.provenance
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                serde_json::json!({
                    "name": row.name,
                    "value": row.value,
                    "unit": row.unit,
                    "uncertainty": row.uncertainty,
                    "frozen": row.frozen,
                    "provenance": row.provenance,
                })
            })
            .collect();
        serde_json::json!({
            "command": self.command,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "note": self.engine_note,
            "rows": rows,
        })
    }

    /// Writes `report.txt` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.text()).map_err(|e| CliError::write_failed(&txt, e))?;
        let json = dir.join("report.json");
        let body = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| CliError::Internal(format!("report serialization: {e}")))?;
        std::fs::write(&json, body + "\n").map_err(|e| CliError::write_failed(&json, e))
    }
}

/// Fixed point with the decimal count tied to the magnitude, switching to
/// scientific notation outside the range where fixed point stays readable.
fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs();
    if (1e-4..1e7).contains(&magnitude) {
        let digits = (6 - magnitude.log10().floor() as i32).max(0) as usize;
        format!("{v:.digits$}")
    } else {
        format!("{v:.5e}")
    }
}
