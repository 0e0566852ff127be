//! Digitizing spectrum maps: dip positions per field row (one or two
//! branches) and half-depth linewidths.

use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::parabola_vertex;
use crate::spectrum::{PowerScale, SpectrumMap};

/// Which dip a track row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The only dip of a single-dip spectrum.
    Single,
    /// The lower-frequency dip of a split spectrum.
    Lower,
    /// The upper-frequency dip of a split spectrum.
    Upper,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Single => "single",
            Branch::Lower => "lower",
            Branch::Upper => "upper",
        })
    }
}

/// How many dips per field row the extraction should resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedBranches {
    One,
    Two,
}

/// Dip positions indexed by (field, branch). Rows are flattened: a split
/// spectrum contributes a lower and an upper row per field value.
#[derive(Debug, Clone, PartialEq)]
pub struct DipTrack {
    /// Field values, tesla.
    pub field: Vec<f64>,
    /// Dip frequency at that field, rad/s.
    pub frequency: Vec<f64>,
    /// Branch the row belongs to.
    pub branch: Vec<Branch>,
}

impl DipTrack {
    /// Validates equal lengths, finite values, and strictly increasing
    /// fields within each branch.
    pub fn new(field: Vec<f64>, frequency: Vec<f64>, branch: Vec<Branch>) -> Result<Self> {
        if field.is_empty() {
            return Err(Error::EmptyAxis { name: "track" });
        }
        if field.len() != frequency.len() {
            return Err(Error::LengthMismatch {
                left_name: "field",
                left: field.len(),
                right_name: "frequency",
                right: frequency.len(),
            });
        }
        if field.len() != branch.len() {
            return Err(Error::LengthMismatch {
                left_name: "field",
                left: field.len(),
                right_name: "branch",
                right: branch.len(),
            });
        }
        for (&b, &f) in field.iter().zip(frequency.iter()) {
            if !b.is_finite() {
                return Err(Error::NonFinite {
                    name: "field",
                    value: b,
                });
            }
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    name: "frequency",
                    value: f,
                });
            }
        }
        let mut last: [Option<f64>; 3] = [None, None, None];
        for (i, (&b, &tag)) in field.iter().zip(branch.iter()).enumerate() {
            let slot = match tag {
                Branch::Single => 0,
                Branch::Lower => 1,
                Branch::Upper => 2,
            };
            if let Some(prev) = last[slot] {
                if b <= prev {
                    return Err(Error::NonMonotonicAxis {
                        name: "track field (per branch)",
                        index: i,
                    });
                }
            }
            last[slot] = Some(b);
        }
        Ok(Self {
            field,
            frequency,
            branch,
        })
    }

    pub fn len(&self) -> usize {
        self.field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.is_empty()
    }

    /// (field, frequency) pairs of one branch.
    pub fn branch_points(&self, branch: Branch) -> (Vec<f64>, Vec<f64>) {
        let mut fields = Vec::new();
        let mut freqs = Vec::new();
        for i in 0..self.len() {
            if self.branch[i] == branch {
                fields.push(self.field[i]);
                freqs.push(self.frequency[i]);
            }
        }
        (fields, freqs)
    }

    /// True when every row carries the `Single` tag.
    pub fn is_single_branch(&self) -> bool {
        self.branch.iter().all(|&b| b == Branch::Single)
    }
}

/// One refined dip candidate within a row.
#[derive(Clone, Copy)]
pub(crate) struct DipCandidate {
    /// Refined frequency, rad/s.
    pub(crate) frequency: f64,
    /// Linear power at the grid minimum; lower is deeper.
    pub(crate) power: f64,
}

/// Finds the local minima of one row of linear power values, refined by
/// parabolic interpolation through each minimum and its neighbors. The
/// parabola acts on linear power: near a deep dip the log would put a cusp
/// at the minimum and skew the vertex, while the raw power stays quadratic.
/// Candidates closer than two grid steps collapse into the deeper one.
pub(crate) fn row_candidates(freqs: &[f64], power: &[f64]) -> Vec<DipCandidate> {
    let n = freqs.len();
    let mean_step = (freqs[n - 1] - freqs[0]) / (n - 1) as f64;
    let mut found: Vec<DipCandidate> = Vec::new();
    for j in 1..n - 1 {
        let down = power[j] <= power[j - 1] && power[j] <= power[j + 1];
        let strict = power[j] < power[j - 1] || power[j] < power[j + 1];
        if !(down && strict) {
            continue;
        }
        let spacing = (freqs[j] - freqs[j - 1]).max(freqs[j + 1] - freqs[j]);
        let refined = parabola_vertex(
            freqs[j - 1],
            power[j - 1],
            freqs[j],
            power[j],
            freqs[j + 1],
            power[j + 1],
        )
        .filter(|v| (v - freqs[j]).abs() <= spacing)
        .unwrap_or(freqs[j]);
        let candidate = DipCandidate {
            frequency: refined,
            power: power[j],
        };
        match found.last_mut() {
            Some(last) if candidate.frequency - last.frequency < 2.0 * mean_step => {
                if candidate.power < last.power {
                    *last = candidate;
                }
            }
            _ => found.push(candidate),
        }
    }
    found
}

/// Extracts dip positions from a linear-scale map, one or two per field row.
///
/// Each row's power minima are refined to sub-grid accuracy by a parabolic
/// fit through the minimum and its two neighbors. Rows that do not resolve
/// the expected number of dips are skipped; if more than half the rows
/// fail, the requested branch count does not describe the map and the call
/// errors (when two branches were expected, retry expecting one).
pub fn extract_dip_track(map: &SpectrumMap, expect: ExpectedBranches) -> Result<DipTrack> {
    if map.scale != PowerScale::Linear {
        return Err(Error::NotLinearScale {
            operation: "extract_dip_track",
        });
    }
    if map.n_frequencies() < 5 {
        return Err(Error::TooFewPoints {
            operation: "extract_dip_track",
            required: 5,
            actual: map.n_frequencies(),
        });
    }

    let freqs = &map.frequency_axis;
    let mut field = Vec::new();
    let mut frequency = Vec::new();
    let mut branch = Vec::new();
    let mut unresolved = 0usize;

    for i in 0..map.n_fields() {
        let mut candidates = row_candidates(freqs, &map.row(i));
        candidates.sort_by(|a, b| a.power.total_cmp(&b.power));
        match expect {
            ExpectedBranches::One => {
                if let Some(best) = candidates.first() {
                    field.push(map.field_axis[i]);
                    frequency.push(best.frequency);
                    branch.push(Branch::Single);
                } else {
                    unresolved += 1;
                }
            }
            ExpectedBranches::Two => {
                if candidates.len() >= 2 {
                    let (a, b) = (candidates[0], candidates[1]);
                    let (lo, hi) = if a.frequency <= b.frequency {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    field.push(map.field_axis[i]);
                    frequency.push(lo.frequency);
                    branch.push(Branch::Lower);
                    field.push(map.field_axis[i]);
                    frequency.push(hi.frequency);
                    branch.push(Branch::Upper);
                } else {
                    unresolved += 1;
                }
            }
        }
    }

    let total = map.n_fields();
    if unresolved * 2 > total || field.is_empty() {
        return Err(Error::BranchesUnresolved { unresolved, total });
    }
    DipTrack::new(field, frequency, branch)
}

/// Half-widths at half depth per field row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinewidthProfile {
    /// Field values, tesla.
    pub field: Vec<f64>,
    /// Half-width of the dip, rad/s.
    pub kappa: Vec<f64>,
}

/// Measures each row's dip half-width at half depth against the unit
/// reflection baseline.
///
/// Meant for single-dip spectra: the crossings are found by walking outward
/// from the deepest point to where the power recovers to (P_min + 1) / 2,
/// with linear interpolation between samples. Rows whose dip is cut off by
/// the frequency window are skipped.
pub fn extract_linewidth_profile(map: &SpectrumMap) -> Result<LinewidthProfile> {
    if map.scale != PowerScale::Linear {
        return Err(Error::NotLinearScale {
            operation: "extract_linewidth_profile",
        });
    }
    if map.n_frequencies() < 5 {
        return Err(Error::TooFewPoints {
            operation: "extract_linewidth_profile",
            required: 5,
            actual: map.n_frequencies(),
        });
    }

    let freqs = &map.frequency_axis;
    let n = freqs.len();
    let mut field = Vec::new();
    let mut kappa = Vec::new();

    for i in 0..map.n_fields() {
        let row: Vec<f64> = map.power.row(i).iter().copied().collect();
        let (j_min, &p_min) = row
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("row is non-empty");
        if j_min == 0 || j_min == n - 1 {
            continue;
        }
        let target = 0.5 * (p_min + 1.0);

        let mut left = None;
        for j in (0..j_min).rev() {
            if row[j] >= target {
                let t = (target - row[j]) / (row[j + 1] - row[j]);
                left = Some(freqs[j] + t * (freqs[j + 1] - freqs[j]));
                break;
            }
        }
        let mut right = None;
        for j in j_min + 1..n {
            if row[j] >= target {
                let t = (target - row[j - 1]) / (row[j] - row[j - 1]);
                right = Some(freqs[j - 1] + t * (freqs[j] - freqs[j - 1]));
                break;
            }
        }
        if let (Some(l), Some(r)) = (left, right) {
            field.push(map.field_axis[i]);
            kappa.push(0.5 * (r - l));
        }
    }

    if field.is_empty() {
        return Err(Error::EmptyAxis {
            name: "linewidth profile",
        });
    }
    Ok(LinewidthProfile { field, kappa })
}
