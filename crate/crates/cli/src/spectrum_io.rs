//! Spectrum CSV format.
//!
//! Layout, chosen so any spreadsheet opens it unmodified:
//!
//! ```text
//! # scale: linear            (or: # scale: dB)
//! field_G\freq_MHz,9785,9785.1,...
//! 3466,0.93,0.91,...
//! 3466.25,0.94,0.90,...
//! ```
//!
//! The first data column is the field axis in gauss; the header row after
//! the scale line is the frequency axis in MHz. Every number is written
//! with the shortest representation that parses back to the identical f64,
//! so a linear map survives a write/read cycle bit-exactly. Axis values
//! live internally in tesla and rad/s; because the unit factors are not
//! powers of two, the writer searches the neighboring representable
//! presentation values for one whose conversion reproduces the stored bits
//! exactly, rather than trusting a single rounded conversion.
//!
//! Read errors carry `path:line:` prefixes pointing at the offending row.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rabifit::units::{
    db_to_linear, gauss_to_tesla, linear_to_db, mhz_to_rad_s, rad_s_to_mhz, tesla_to_gauss,
};
use rabifit::{Branch, DipTrack, PowerScale, SpectrumMap};

use crate::{CliError, Result};

const CORNER_LABEL: &str = "field_G\\freq_MHz";

fn next_after(x: f64, up: bool) -> f64 {
    let bits = x.to_bits();
    let next = if (x >= 0.0) == up { bits + 1 } else { bits - 1 };
    f64::from_bits(next)
}

/// Presentation value whose conversion back to internal units returns the
/// identical f64, found by probing two ulps around the rounded conversion.
/// Falls back to the rounded value when no exact preimage exists.
fn exact_presentation(internal: f64, present: fn(f64) -> f64, restore: fn(f64) -> f64) -> f64 {
    let base = present(internal);
    if restore(base) == internal {
        return base;
    }
    let mut up = base;
    let mut down = base;
    for _ in 0..2 {
        up = next_after(up, true);
        down = next_after(down, false);
        for candidate in [up, down] {
            if restore(candidate) == internal {
                return candidate;
            }
        }
    }
    base
}

/// Field axis value in gauss that restores the stored tesla bits.
pub fn gauss_repr(tesla: f64) -> f64 {
    exact_presentation(tesla, tesla_to_gauss, gauss_to_tesla)
}

/// Frequency axis value in MHz that restores the stored rad/s bits.
pub fn mhz_repr(rad_s: f64) -> f64 {
    exact_presentation(rad_s, rad_s_to_mhz, mhz_to_rad_s)
}

/// Writes a map in the requested scale. Pixel values convert between
/// scales as needed; the map's own values are never mutated.
pub fn write_map(map: &SpectrumMap, scale: PowerScale, path: &Path) -> Result<()> {
    let mut out = String::new();
    let tag = match scale {
        PowerScale::Linear => "linear",
        PowerScale::Db => "dB",
    };
    let _ = writeln!(out, "# scale: {tag}");
    let _ = write!(out, "{CORNER_LABEL}");
    for &w in &map.frequency_axis {
        let _ = write!(out, ",{}", mhz_repr(w));
    }
    out.push('\n');
    for (i, &b) in map.field_axis.iter().enumerate() {
        let _ = write!(out, "{}", gauss_repr(b));
        for j in 0..map.n_frequencies() {
            let raw = map.power[(i, j)];
            let value = match (map.scale, scale) {
                (PowerScale::Linear, PowerScale::Db) => linear_to_db(raw),
                (PowerScale::Db, PowerScale::Linear) => db_to_linear(raw),
                _ => raw,
            };
            let _ = write!(out, ",{value}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::write_failed(path, e))
}

/// Reads a spectrum CSV and returns the map in linear power regardless of
/// the scale the file declares.
pub fn read_map(path: &Path) -> Result<SpectrumMap> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let loc = |line: usize, msg: String| CliError::Data(format!("{}:{line}: {msg}", path.display()));

    let mut lines = text.lines().enumerate();

    let (_, scale_line) = lines
        .next()
        .ok_or_else(|| loc(1, "empty file; expected a \"# scale:\" header".into()))?;
    let scale = match scale_line.trim().strip_prefix("# scale:").map(str::trim) {
        Some(s) if s.eq_ignore_ascii_case("linear") => PowerScale::Linear,
        Some(s) if s.eq_ignore_ascii_case("db") => PowerScale::Db,
        Some(other) => {
            return Err(loc(
                1,
                format!("scale must be \"linear\" or \"dB\", got \"{other}\""),
            ))
        }
        None => {
            return Err(loc(
                1,
                format!("expected \"# scale: linear\" or \"# scale: dB\", got \"{scale_line}\""),
            ))
        }
    };

    let (_, header) = lines
        .next()
        .ok_or_else(|| loc(2, "missing frequency-axis header row".into()))?;
    let mut freq_mhz = Vec::new();
    for (k, cell) in header.trim_end().split(',').enumerate().skip(1) {
        let v: f64 = cell.trim().parse().map_err(|_| {
            loc(
                2,
                format!("header column {} is not a number: \"{cell}\"", k + 1),
            )
        })?;
        if !v.is_finite() {
            return Err(loc(2, format!("header column {} is not finite: {v}", k + 1)));
        }
        freq_mhz.push(v);
    }
    if freq_mhz.len() < 2 {
        return Err(loc(2, "frequency axis needs at least 2 points".into()));
    }
    for (k, w) in freq_mhz.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(loc(
                2,
                format!(
                    "frequency axis must be strictly increasing; column {} ({}) after {}",
                    k + 3,
                    w[1],
                    w[0]
                ),
            ));
        }
    }

    let mut field_gauss: Vec<f64> = Vec::new();
    let mut power_rows: Vec<Vec<f64>> = Vec::new();
    for (index, row) in lines {
        let line_no = index + 1;
        let row = row.trim_end();
        if row.is_empty() {
            continue;
        }
        let mut cells = row.split(',');
        let field_cell = cells.next().unwrap();
        let b: f64 = field_cell.trim().parse().map_err(|_| {
            loc(
                line_no,
                format!("field value is not a number: \"{field_cell}\""),
            )
        })?;
        if !b.is_finite() {
            return Err(loc(line_no, format!("field value is not finite: {b}")));
        }
        if let Some(&prev) = field_gauss.last() {
            if b <= prev {
                return Err(loc(
                    line_no,
                    format!("field axis must be strictly increasing; {b} after {prev}"),
                ));
            }
        }
        let mut values = Vec::with_capacity(freq_mhz.len());
        for (k, cell) in cells.enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                loc(
                    line_no,
                    format!("column {} is not a number: \"{cell}\"", k + 2),
                )
            })?;
            if !v.is_finite() {
                return Err(loc(line_no, format!("column {} is not finite: {v}", k + 2)));
            }
            if scale == PowerScale::Linear && v < 0.0 {
                return Err(loc(
                    line_no,
                    format!("column {} holds negative linear power: {v}", k + 2),
                ));
            }
            values.push(v);
        }
        if values.len() != freq_mhz.len() {
            return Err(loc(
                line_no,
                format!(
                    "row has {} power values but the header declares {} frequencies",
                    values.len(),
                    freq_mhz.len()
                ),
            ));
        }
        field_gauss.push(b);
        power_rows.push(values);
    }
    if field_gauss.len() < 2 {
        return Err(loc(
            power_rows.len() + 2,
            "field axis needs at least 2 rows".into(),
        ));
    }

    let n_fields = field_gauss.len();
    let n_freqs = freq_mhz.len();
    let power = DMatrix::from_fn(n_fields, n_freqs, |i, j| {
        let raw = power_rows[i][j];
        match scale {
            PowerScale::Linear => raw,
            PowerScale::Db => db_to_linear(raw),
        }
    });
    let field_axis: Vec<f64> = field_gauss.iter().map(|&b| gauss_to_tesla(b)).collect();
    let frequency_axis: Vec<f64> = freq_mhz.iter().map(|&f| mhz_to_rad_s(f)).collect();
    SpectrumMap::new(field_axis, frequency_axis, power, PowerScale::Linear)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes an extracted dip track as `field_G,freq_MHz,branch` rows.
pub fn write_track(track: &DipTrack, path: &Path) -> Result<()> {
    let mut out = String::from("field_G,freq_MHz,branch\n");
    for k in 0..track.len() {
        let tag = match track.branch[k] {
            Branch::Single => "single",
            Branch::Lower => "lower",
            Branch::Upper => "upper",
        };
        let _ = writeln!(
            out,
            "{},{},{tag}",
            gauss_repr(track.field[k]),
            mhz_repr(track.frequency[k])
        );
    }
    std::fs::write(path, out).map_err(|e| CliError::write_failed(path, e))
}

/// Writes a two-column CSV of presentation-unit values.
pub fn write_xy_csv(path: &Path, x_header: &str, y_header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = format!("{x_header},{y_header}\n");
    for &(x, y) in rows {
        let _ = writeln!(out, "{x},{y}");
    }
    std::fs::write(path, out).map_err(|e| CliError::write_failed(path, e))
}
