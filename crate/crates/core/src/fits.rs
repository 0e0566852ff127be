//! Parameter recovery from measured spectra: dip-track and linewidth fits,
//! normal-mode branch fits, full reflection-map fits, the sqrt(N) scaling
//! regression, and the standing-wave coupling profile along the sample.
//!
//! Every routine returns a [`FitResult`] carrying named parameters with
//! one-sigma uncertainties, so callers report all fits through one path.
//! Initial guesses are derived from the data itself; callers only supply
//! starting values when they want to override or freeze a parameter.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model;
use crate::nlls::{nlls_solve, FitResult, FittedParam, LmOptions, ParamSpec, ResidualModel};
use crate::numeric::adaptive_simpson;
use crate::params::CavityParams;
use crate::spectrum::{PowerScale, SpectrumMap};
use crate::track::{row_candidates, Branch, DipTrack};

/// Checks the field-to-frequency conversion slope: any sign is legal (the
/// detuning axis may be mirrored), zero or non-finite is not.
fn check_slope(m0_over_hbar: f64) -> Result<()> {
    if !m0_over_hbar.is_finite() {
        return Err(Error::NonFinite {
            name: "m0_over_hbar",
            value: m0_over_hbar,
        });
    }
    if m0_over_hbar == 0.0 {
        return Err(Error::NonPositive {
            name: "m0_over_hbar",
            value: 0.0,
        });
    }
    Ok(())
}

/// Index of the largest and smallest value in a non-empty slice.
fn argmax_argmin(values: &[f64]) -> (usize, usize) {
    let mut hi = 0;
    let mut lo = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[hi] {
            hi = i;
        }
        if v < values[lo] {
            lo = i;
        }
    }
    (hi, lo)
}

// ---------------------------------------------------------------------------
// Dispersive dip-frequency fit
// ---------------------------------------------------------------------------

struct DispersiveModel<'a> {
    field: &'a [f64],
    frequency: &'a [f64],
    slope: f64,
}

impl ResidualModel for DispersiveModel<'_> {
    fn residual_count(&self) -> usize {
        self.field.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        let (g, gamma, omega_c, b_r) = (params[0], params[1], params[2], params[3]);
        for (k, (&b, &f)) in self.field.iter().zip(self.frequency).enumerate() {
            let delta = self.slope * (b - b_r);
            out[k] = model::dispersive_shift(delta, omega_c, g, gamma) - f;
        }
    }

    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (g, gamma, b_r) = (params[0], params[1], params[3]);
        for (k, &b) in self.field.iter().enumerate() {
            let delta = self.slope * (b - b_r);
            let s = delta * delta + gamma * gamma;
            out[(k, 0)] = -2.0 * g * delta / s;
            out[(k, 1)] = 2.0 * g * g * gamma * delta / (s * s);
            out[(k, 2)] = 1.0;
            out[(k, 3)] = self.slope * g * g * (gamma * gamma - delta * delta) / (s * s);
        }
        true
    }
}

/// Starting values for the dispersive fit, read off the track itself: the
/// shift is antisymmetric about the resonance field with extrema of size
/// g^2/(2 gamma) at one linewidth either side, so the extrema locate both
/// the field center and the linewidth, and their size then gives the
/// coupling.
fn seed_dispersive(field: &[f64], frequency: &[f64], slope: f64) -> (f64, f64, f64, f64) {
    let omega_c0 = 0.5 * (frequency[0] + frequency[frequency.len() - 1]);
    let deviation: Vec<f64> = frequency.iter().map(|f| f - omega_c0).collect();
    let (hi, lo) = argmax_argmin(&deviation);
    let b_r0 = 0.5 * (field[hi] + field[lo]);
    let span = field[field.len() - 1] - field[0];
    let mut gamma0 = slope.abs() * (field[hi] - field[lo]).abs() / 2.0;
    if gamma0 <= 0.0 {
        gamma0 = slope.abs() * span.abs() / 10.0;
    }
    if gamma0 <= 0.0 || !gamma0.is_finite() {
        gamma0 = omega_c0.abs().max(1.0) * 1e-6;
    }
    let max_dev = deviation[hi].abs().max(deviation[lo].abs());
    let mut g0 = (2.0 * gamma0 * max_dev).sqrt();
    if g0 <= gamma0 * 1e-6 {
        g0 = gamma0 * 1e-6;
    }
    (g0, gamma0, omega_c0, b_r0)
}

/// Fits the dispersive dip-frequency curve
/// `omega(B) = omega_c - g_c^2 Delta / (Delta^2 + gamma_s^2)` with
/// `Delta = m0_over_hbar (B - B_r)` to a single-branch dip track.
///
/// Recovers `g_c`, `gamma_s`, `omega_c`, and `b_r`. Valid when the coupling
/// is too weak to split the dip, so the track holds one dip per field.
pub fn fit_dispersive_track(track: &DipTrack, m0_over_hbar: f64) -> Result<FitResult> {
    fit_dispersive_track_with(track, m0_over_hbar, &LmOptions::default())
}

/// [`fit_dispersive_track`] with explicit solver settings.
pub fn fit_dispersive_track_with(
    track: &DipTrack,
    m0_over_hbar: f64,
    options: &LmOptions,
) -> Result<FitResult> {
    check_slope(m0_over_hbar)?;
    if !track.is_single_branch() {
        return Err(Error::BadInitialGuess {
            name: "track",
            detail: "dispersive fit needs a single-branch track; fit the two branches instead"
                .into(),
        });
    }
    let n = track.len();
    if n < 5 {
        return Err(Error::TooFewPoints {
            operation: "fit_dispersive_track",
            required: 5,
            actual: n,
        });
    }
    let (g0, gamma0, omega_c0, b_r0) = seed_dispersive(&track.field, &track.frequency, m0_over_hbar);
    let model = DispersiveModel {
        field: &track.field,
        frequency: &track.frequency,
        slope: m0_over_hbar,
    };
    let specs = [
        ParamSpec::log_positive("g_c", g0),
        ParamSpec::log_positive("gamma_s", gamma0),
        ParamSpec::linear("omega_c", omega_c0),
        ParamSpec::linear("b_r", b_r0),
    ];
    nlls_solve(&model, &specs, options)
}

// ---------------------------------------------------------------------------
// Linewidth (absorption Lorentzian) fit
// ---------------------------------------------------------------------------

struct KappaModel<'a> {
    field: &'a [f64],
    kappa: &'a [f64],
    slope: f64,
}

impl ResidualModel for KappaModel<'_> {
    fn residual_count(&self) -> usize {
        self.field.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        let (g, gamma, kappa_c, b_r) = (params[0], params[1], params[2], params[3]);
        for (k, (&b, &y)) in self.field.iter().zip(self.kappa).enumerate() {
            let delta = self.slope * (b - b_r);
            out[k] = model::kappa_broadening(delta, kappa_c, g, gamma) - y;
        }
    }

    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (g, gamma, b_r) = (params[0], params[1], params[3]);
        for (k, &b) in self.field.iter().enumerate() {
            let delta = self.slope * (b - b_r);
            let s = delta * delta + gamma * gamma;
            out[(k, 0)] = 2.0 * g * gamma / s;
            out[(k, 1)] = g * g * (delta * delta - gamma * gamma) / (s * s);
            out[(k, 2)] = 1.0;
            out[(k, 3)] = 2.0 * self.slope * g * g * gamma * delta / (s * s);
        }
        true
    }
}

/// Starting values for the linewidth fit: the baseline comes from the sweep
/// endpoints, the peak position locates the resonance field, the half-height
/// extent of the excess gives the spin linewidth, and the peak excess
/// g_c^2/gamma_s then gives the coupling.
fn seed_kappa(field: &[f64], kappa: &[f64], slope: f64) -> (f64, f64, f64, f64) {
    let n = field.len();
    let kappa_c0 = 0.5 * (kappa[0] + kappa[n - 1]);
    let excess: Vec<f64> = kappa.iter().map(|k| k - kappa_c0).collect();
    let (peak_idx, _) = argmax_argmin(&excess);
    let peak = excess[peak_idx];
    let b_r0 = field[peak_idx];
    let span = (field[n - 1] - field[0]).abs();
    let mean_step = span / (n - 1).max(1) as f64;

    let mut gamma0;
    let mut g0;
    if peak > 0.0 {
        let half = peak / 2.0;
        let first = excess.iter().position(|&e| e >= half).unwrap_or(peak_idx);
        let last = excess.iter().rposition(|&e| e >= half).unwrap_or(peak_idx);
        gamma0 = slope.abs() * (field[last] - field[first]).abs() / 2.0;
        if gamma0 <= 0.0 {
            gamma0 = slope.abs() * mean_step;
        }
        g0 = (peak * gamma0).sqrt();
    } else {
        gamma0 = slope.abs() * span / 10.0;
        g0 = 0.0;
    }
    if gamma0 <= 0.0 || !gamma0.is_finite() {
        gamma0 = kappa_c0.abs().max(1.0);
    }
    if g0 <= gamma0 * 1e-6 {
        g0 = gamma0 * 1e-6;
    }
    (g0, gamma0, kappa_c0, b_r0)
}

/// Fits the field-swept cavity linewidth
/// `kappa(B) = kappa_c + g_c^2 gamma_s / (Delta^2 + gamma_s^2)` to a
/// linewidth profile, recovering `g_c`, `gamma_s`, `kappa_c`, and `b_r`.
///
/// The coupling enters only through the area g_c^2 of the Lorentzian
/// excess, so `g_c` stays accurate somewhat beyond the dispersive regime
/// even when the recovered `gamma_s` starts to absorb lineshape error.
pub fn fit_kappa_lorentzian(field: &[f64], kappa: &[f64], m0_over_hbar: f64) -> Result<FitResult> {
    fit_kappa_lorentzian_with(field, kappa, m0_over_hbar, &LmOptions::default())
}

/// [`fit_kappa_lorentzian`] with explicit solver settings.
pub fn fit_kappa_lorentzian_with(
    field: &[f64],
    kappa: &[f64],
    m0_over_hbar: f64,
    options: &LmOptions,
) -> Result<FitResult> {
    check_slope(m0_over_hbar)?;
    if field.len() != kappa.len() {
        return Err(Error::LengthMismatch {
            left_name: "field",
            left: field.len(),
            right_name: "kappa",
            right: kappa.len(),
        });
    }
    if field.len() < 5 {
        return Err(Error::TooFewPoints {
            operation: "fit_kappa_lorentzian",
            required: 5,
            actual: field.len(),
        });
    }
    for (name, values) in [("field", field), ("kappa", kappa)] {
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { name, value: v });
        }
    }
    let (g0, gamma0, kappa_c0, b_r0) = seed_kappa(field, kappa, m0_over_hbar);
    let model = KappaModel {
        field,
        kappa,
        slope: m0_over_hbar,
    };
    let specs = [
        ParamSpec::log_positive("g_c", g0),
        ParamSpec::log_positive("gamma_s", gamma0),
        ParamSpec::log_positive("kappa_c", kappa_c0),
        ParamSpec::linear("b_r", b_r0),
    ];
    nlls_solve(&model, &specs, options)
}

// ---------------------------------------------------------------------------
// Normal-mode branch fit
// ---------------------------------------------------------------------------

struct BranchesModel<'a> {
    field: &'a [f64],
    frequency: &'a [f64],
    upper: &'a [bool],
    slope: f64,
}

impl ResidualModel for BranchesModel<'_> {
    fn residual_count(&self) -> usize {
        self.field.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        let (g, omega_c, b_r) = (params[0], params[1], params[2]);
        for (k, (&b, &f)) in self.field.iter().zip(self.frequency).enumerate() {
            let delta = self.slope * (b - b_r);
            let (up, lo) = model::rabi_branches(delta, omega_c, g);
            out[k] = if self.upper[k] { up } else { lo } - f;
        }
    }

    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (g, b_r) = (params[0], params[2]);
        for (k, &b) in self.field.iter().enumerate() {
            let delta = self.slope * (b - b_r);
            let root = (delta * delta + 4.0 * g * g).sqrt();
            let sign = if self.upper[k] { 1.0 } else { -1.0 };
            out[(k, 0)] = sign * 2.0 * g / root;
            out[(k, 1)] = 1.0;
            out[(k, 2)] = -self.slope * (0.5 + sign * delta / (2.0 * root));
        }
        true
    }
}

/// Starting values for the branch fit: where both branches share a field
/// point the gap is smallest on resonance and equals twice the coupling,
/// and the branch midpoint there is the bare cavity frequency.
fn seed_branches(
    lower: &[(f64, f64)],
    upper: &[(f64, f64)],
    all_freq_min: f64,
    all_freq_max: f64,
    mean_field: f64,
) -> (f64, f64, f64) {
    let mut best: Option<(f64, f64, f64)> = None;
    let mut i = 0;
    let mut j = 0;
    while i < lower.len() && j < upper.len() {
        let (bl, fl) = lower[i];
        let (bu, fu) = upper[j];
        if bl == bu {
            let gap = fu - fl;
            if best.map_or(true, |(g, _, _)| gap < g) {
                best = Some((gap, bl, 0.5 * (fu + fl)));
            }
            i += 1;
            j += 1;
        } else if bl < bu {
            i += 1;
        } else {
            j += 1;
        }
    }
    match best {
        Some((gap, b_r0, omega_c0)) if gap > 0.0 => (gap / 2.0, omega_c0, b_r0),
        _ => {
            let g0 = ((all_freq_max - all_freq_min) / 4.0).max(1e-9 * all_freq_max.abs().max(1.0));
            (g0, 0.5 * (all_freq_min + all_freq_max), mean_field)
        }
    }
}

/// Fits the two normal-mode branches
/// `omega_pm(B) = omega_c + Delta/2 +- sqrt(Delta^2 + 4 g_c^2)/2` to a
/// two-branch dip track, recovering `g_c`, `omega_c`, and `b_r`.
///
/// The minimum branch separation is 2 g_c, so this is the direct
/// splitting-based coupling estimate for strongly coupled spectra.
pub fn fit_rabi_branches(track: &DipTrack, m0_over_hbar: f64) -> Result<FitResult> {
    fit_rabi_branches_with(track, m0_over_hbar, &LmOptions::default())
}

/// [`fit_rabi_branches`] with explicit solver settings.
pub fn fit_rabi_branches_with(
    track: &DipTrack,
    m0_over_hbar: f64,
    options: &LmOptions,
) -> Result<FitResult> {
    check_slope(m0_over_hbar)?;
    let mut lower: Vec<(f64, f64)> = Vec::new();
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for k in 0..track.len() {
        match track.branch[k] {
            Branch::Lower => lower.push((track.field[k], track.frequency[k])),
            Branch::Upper => upper.push((track.field[k], track.frequency[k])),
            Branch::Single => {
                return Err(Error::BadInitialGuess {
                    name: "track",
                    detail: "branch fit needs a two-branch track; rows tagged single were found"
                        .into(),
                })
            }
        }
    }
    let fewest = lower.len().min(upper.len());
    if fewest < 5 {
        return Err(Error::TooFewPoints {
            operation: "fit_rabi_branches",
            required: 5,
            actual: fewest,
        });
    }

    let freq_min = track.frequency.iter().cloned().fold(f64::INFINITY, f64::min);
    let freq_max = track.frequency.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean_field = track.field.iter().sum::<f64>() / track.len() as f64;
    let (g0, omega_c0, b_r0) = seed_branches(&lower, &upper, freq_min, freq_max, mean_field);

    let upper_flags: Vec<bool> = track.branch.iter().map(|b| *b == Branch::Upper).collect();
    let model = BranchesModel {
        field: &track.field,
        frequency: &track.frequency,
        upper: &upper_flags,
        slope: m0_over_hbar,
    };
    let specs = [
        ParamSpec::log_positive("g_c", g0),
        ParamSpec::linear("omega_c", omega_c0),
        ParamSpec::linear("b_r", b_r0),
    ];
    nlls_solve(&model, &specs, options)
}

// ---------------------------------------------------------------------------
// Full reflection-map fit
// ---------------------------------------------------------------------------

/// How one parameter enters a map fit: free with an automatic seed, free
/// from a caller-supplied start, or frozen at a caller-supplied value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamSetup {
    /// Starting value; `None` seeds the parameter from the map itself.
    pub initial: Option<f64>,
    /// Frozen parameters keep their initial value and get zero variance.
    pub frozen: bool,
}

impl ParamSetup {
    /// Free parameter seeded from the data.
    pub fn free() -> Self {
        Self::default()
    }

    /// Free parameter starting from `value`.
    pub fn start_at(value: f64) -> Self {
        Self {
            initial: Some(value),
            frozen: false,
        }
    }

    /// Parameter held fixed at `value` throughout the fit.
    pub fn frozen_at(value: f64) -> Self {
        Self {
            initial: Some(value),
            frozen: true,
        }
    }
}

/// Configuration for [`fit_full_s11_map`]: the field-to-frequency slope
/// plus one [`ParamSetup`] per model parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapFitSetup {
    /// Detuning per unit field, rad/s per tesla; sign follows the data.
    pub m0_over_hbar: f64,
    pub g_c: ParamSetup,
    pub gamma_s: ParamSetup,
    pub kappa_c: ParamSetup,
    pub kappa_e: ParamSetup,
    pub omega_c: ParamSetup,
    pub b_r: ParamSetup,
}

impl MapFitSetup {
    /// All six parameters free, every seed read off the map.
    pub fn all_free(m0_over_hbar: f64) -> Self {
        Self {
            m0_over_hbar,
            g_c: ParamSetup::free(),
            gamma_s: ParamSetup::free(),
            kappa_c: ParamSetup::free(),
            kappa_e: ParamSetup::free(),
            omega_c: ParamSetup::free(),
            b_r: ParamSetup::free(),
        }
    }
}

struct MapModel<'a> {
    map: &'a SpectrumMap,
    slope: f64,
}

impl ResidualModel for MapModel<'_> {
    fn residual_count(&self) -> usize {
        self.map.n_fields() * self.map.n_frequencies()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        let (g, gamma) = (params[0], params[1]);
        let cavity = CavityParams {
            omega_c: params[4],
            kappa_c: params[2],
            kappa_e: params[3],
            mode_volume: None,
        };
        let b_r = params[5];
        let mut k = 0;
        for (i, &b) in self.map.field_axis.iter().enumerate() {
            let delta = self.slope * (b - b_r);
            for (j, &omega) in self.map.frequency_axis.iter().enumerate() {
                out[k] = model::reflection_power(omega, delta, &cavity, g, gamma)
                    - self.map.power[(i, j)];
                k += 1;
            }
        }
    }
}

/// Seed statistics for one map row: the refined dip position, the grid
/// minimum power, and the half-depth half-width when both crossings lie
/// inside the row.
struct RowDip {
    position: f64,
    p_min: f64,
    half_width: Option<f64>,
}

fn row_dip(freqs: &[f64], row: &[f64]) -> Option<RowDip> {
    let n = row.len();
    let mut lo = 0;
    for (j, &p) in row.iter().enumerate() {
        if p < row[lo] {
            lo = j;
        }
    }
    if lo == 0 || lo == n - 1 {
        return None;
    }
    let position = crate::numeric::parabola_vertex(
        freqs[lo - 1],
        row[lo - 1],
        freqs[lo],
        row[lo],
        freqs[lo + 1],
        row[lo + 1],
    )
    .filter(|v| (v - freqs[lo]).abs() <= (freqs[lo + 1] - freqs[lo - 1]))
    .unwrap_or(freqs[lo]);

    let target = 0.5 * (row[lo] + 1.0);
    let cross = |mut j: usize, step: isize| -> Option<f64> {
        loop {
            let next = j as isize + step;
            if next < 0 || next as usize >= n {
                return None;
            }
            let next = next as usize;
            if row[next] >= target {
                let t = (target - row[j]) / (row[next] - row[j]);
                return Some(freqs[j] + t * (freqs[next] - freqs[j]));
            }
            j = next;
        }
    };
    let half_width = match (cross(lo, -1), cross(lo, 1)) {
        (Some(l), Some(r)) => Some((r - l) / 2.0),
        _ => None,
    };
    Some(RowDip {
        position,
        p_min: row[lo],
        half_width,
    })
}

/// Automatic starting values for the map fit, in the order
/// (g_c, gamma_s, kappa_c, kappa_e, omega_c, b_r).
///
/// The far-detuned edge rows give the bare cavity: dip position, half-depth
/// width, and depth seed omega_c, kappa_c, and kappa_e. Dip-position
/// deviations across field seed b_r and gamma_s the same way as the
/// dispersive track fit. The coupling seed is half the largest dip
/// separation in rows showing two comparably deep dips, falling back to the
/// dispersive pull when no row resolves two.
fn seed_map(map: &SpectrumMap, slope: f64) -> [f64; 6] {
    let freqs = &map.frequency_axis;
    let nf = map.n_fields();

    let edge_rows = [0, nf - 1];
    let mut omega_sum = 0.0;
    let mut kappa_sum = 0.0;
    let mut depth_sum = 0.0;
    let mut edge_count = 0.0;
    for &i in &edge_rows {
        if let Some(dip) = row_dip(freqs, &map.row(i)) {
            omega_sum += dip.position;
            kappa_sum += dip.half_width.unwrap_or(0.0);
            depth_sum += dip.p_min;
            edge_count += 1.0;
        }
    }
    let span = freqs[freqs.len() - 1] - freqs[0];
    let mid = 0.5 * (freqs[0] + freqs[freqs.len() - 1]);
    let omega_c0 = if edge_count > 0.0 {
        omega_sum / edge_count
    } else {
        mid
    };
    let mut kappa_c0 = if edge_count > 0.0 {
        kappa_sum / edge_count
    } else {
        0.0
    };
    if kappa_c0 <= 0.0 {
        kappa_c0 = span / 10.0;
    }
    let p_floor = if edge_count > 0.0 {
        (depth_sum / edge_count).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let kappa_e0 = (kappa_c0 * (1.0 - p_floor.sqrt())).max(1e-3 * kappa_c0);

    // Deepest-dip deviations across field mirror the dispersive-track seed.
    let mut deepest: Vec<(f64, f64)> = Vec::with_capacity(nf);
    for i in 0..nf {
        if let Some(dip) = row_dip(freqs, &map.row(i)) {
            deepest.push((map.field_axis[i], dip.position - omega_c0));
        }
    }
    let field_span = map.field_axis[nf - 1] - map.field_axis[0];
    let (b_r0, gamma0) = if deepest.is_empty() {
        (
            0.5 * (map.field_axis[0] + map.field_axis[nf - 1]),
            slope.abs() * field_span / 10.0,
        )
    } else {
        let devs: Vec<f64> = deepest.iter().map(|&(_, d)| d).collect();
        let (hi, lo) = argmax_argmin(&devs);
        let b_r0 = 0.5 * (deepest[hi].0 + deepest[lo].0);
        let mut gamma0 = slope.abs() * (deepest[hi].0 - deepest[lo].0).abs() / 2.0;
        if gamma0 <= 0.0 {
            gamma0 = slope.abs() * field_span.abs() / 10.0;
        }
        (b_r0, gamma0)
    };
    let gamma0 = if gamma0 > 0.0 && gamma0.is_finite() {
        gamma0
    } else {
        kappa_c0
    };

    // Rows resolving two dips of comparable depth measure the splitting
    // directly; the deepest dip anywhere sets the significance scale.
    let mut deepest_depth: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for i in 0..nf {
        let mut cands = row_candidates(freqs, &map.row(i));
        cands.sort_by(|a, b| a.power.total_cmp(&b.power));
        if let Some(first) = cands.first() {
            deepest_depth = deepest_depth.max(1.0 - first.power);
        }
        if cands.len() >= 2 {
            let second_depth = 1.0 - cands[1].power;
            if second_depth >= 0.05 * deepest_depth {
                max_gap = max_gap.max((cands[0].frequency - cands[1].frequency).abs());
            }
        }
    }
    let max_dev = deepest
        .iter()
        .map(|&(_, d)| d.abs())
        .fold(0.0_f64, f64::max);
    let mut g0 = if max_gap > 0.0 {
        max_gap / 2.0
    } else {
        (2.0 * gamma0 * max_dev).sqrt()
    };
    if g0 <= 1e-3 * gamma0 {
        g0 = 1e-3 * gamma0;
    }

    [g0, gamma0, kappa_c0, kappa_e0, omega_c0, b_r0]
}

/// Fits the full reflection model to every pixel of a linear-scale map,
/// recovering any free subset of
/// (g_c, gamma_s, kappa_c, kappa_e, omega_c, b_r).
///
/// Frozen parameters need an explicit value in the setup; free parameters
/// without one are seeded from the map. The Jacobian is taken by finite
/// differences. dB-scale maps are rejected: convert with
/// [`SpectrumMap::to_linear`] first so residuals stay in power units.
pub fn fit_full_s11_map(map: &SpectrumMap, setup: &MapFitSetup) -> Result<FitResult> {
    fit_full_s11_map_with(map, setup, &LmOptions::default())
}

/// [`fit_full_s11_map`] with explicit solver settings.
pub fn fit_full_s11_map_with(
    map: &SpectrumMap,
    setup: &MapFitSetup,
    options: &LmOptions,
) -> Result<FitResult> {
    check_slope(setup.m0_over_hbar)?;
    if map.scale != PowerScale::Linear {
        return Err(Error::NotLinearScale {
            operation: "fit_full_s11_map",
        });
    }

    let seeds = seed_map(map, setup.m0_over_hbar);
    let names = ["g_c", "gamma_s", "kappa_c", "kappa_e", "omega_c", "b_r"];
    let setups = [
        setup.g_c,
        setup.gamma_s,
        setup.kappa_c,
        setup.kappa_e,
        setup.omega_c,
        setup.b_r,
    ];
    let mut specs = Vec::with_capacity(6);
    for k in 0..6 {
        if setups[k].frozen && setups[k].initial.is_none() {
            return Err(Error::BadInitialGuess {
                name: names[k],
                detail: "frozen parameter needs an explicit value".into(),
            });
        }
        let initial = setups[k].initial.unwrap_or(seeds[k]);
        let spec = if k < 4 {
            ParamSpec::log_positive(names[k], initial)
        } else {
            ParamSpec::linear(names[k], initial)
        };
        specs.push(if setups[k].frozen { spec.frozen() } else { spec });
    }

    let model = MapModel {
        map,
        slope: setup.m0_over_hbar,
    };
    nlls_solve(&model, &specs, options)
}

// ---------------------------------------------------------------------------
// sqrt(N) scaling regression
// ---------------------------------------------------------------------------

/// Collective couplings measured at several polarized spin counts, with
/// optional per-point weights. A zero weight excludes a point without
/// renumbering the data.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingVsN {
    /// Polarized spin counts, dimensionless, all positive.
    pub n: Vec<f64>,
    /// Measured collective couplings, rad/s, non-negative.
    pub g_c: Vec<f64>,
    /// Optional weights, non-negative; `None` means uniform.
    pub weight: Option<Vec<f64>>,
}

impl CouplingVsN {
    pub fn new(n: Vec<f64>, g_c: Vec<f64>) -> Result<Self> {
        let data = Self {
            n,
            g_c,
            weight: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn weighted(n: Vec<f64>, g_c: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        let data = Self {
            n,
            g_c,
            weight: Some(weight),
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        if self.n.is_empty() {
            return Err(Error::EmptyAxis { name: "n" });
        }
        if self.n.len() != self.g_c.len() {
            return Err(Error::LengthMismatch {
                left_name: "n",
                left: self.n.len(),
                right_name: "g_c",
                right: self.g_c.len(),
            });
        }
        if let Some(w) = &self.weight {
            if w.len() != self.n.len() {
                return Err(Error::LengthMismatch {
                    left_name: "n",
                    left: self.n.len(),
                    right_name: "weight",
                    right: w.len(),
                });
            }
            if let Some(&v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::NonPositive {
                    name: "weight",
                    value: v,
                });
            }
        }
        for &v in &self.n {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::NonPositive { name: "n", value: v });
            }
        }
        for &v in &self.g_c {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NonPositive {
                    name: "g_c",
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// Weighted least-squares fit of `g_c = g_s sqrt(N)` through the origin.
///
/// The slope has the closed form
/// `g_s = sum(w sqrt(N) g) / sum(w N)`, with variance
/// `s^2 / sum(w N)` where `s^2` is the reduced chi-square of the residuals.
/// A single point gives the exact ratio with zero variance.
pub fn sqrt_n_regression(data: &CouplingVsN) -> Result<FitResult> {
    data.validate()?;
    let m = data.n.len();
    let weight = |k: usize| data.weight.as_ref().map_or(1.0, |w| w[k]);
    let m_eff = (0..m).filter(|&k| weight(k) > 0.0).count();
    if m_eff == 0 {
        return Err(Error::TooFewPoints {
            operation: "sqrt_n_regression",
            required: 1,
            actual: 0,
        });
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..m {
        let w = weight(k);
        num += w * data.n[k].sqrt() * data.g_c[k];
        den += w * data.n[k];
    }
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::SingularNormalEquations {
            condition: f64::INFINITY,
            params: "g_s".into(),
        });
    }
    let g_s = num / den;

    let mut chi2 = 0.0;
    for k in 0..m {
        let r = data.g_c[k] - g_s * data.n[k].sqrt();
        chi2 += weight(k) * r * r;
    }
    let variance = if m_eff >= 2 {
        chi2 / (m_eff as f64 - 1.0) / den
    } else {
        0.0
    };

    Ok(FitResult {
        parameters: vec![FittedParam {
            name: "g_s",
            value: g_s,
            variance,
            frozen: false,
        }],
        residual_norm: chi2.sqrt(),
        iterations: 0,
        converged: true,
        note: Some("closed-form regression through the origin; zero-weight points excluded".into()),
    })
}

// ---------------------------------------------------------------------------
// Coupling profile along the sample
// ---------------------------------------------------------------------------

/// Collective coupling measured at several sample positions along the
/// cavity axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionProfile {
    /// Positions along the axis, meters, strictly increasing.
    pub position: Vec<f64>,
    /// Measured collective couplings, rad/s, non-negative.
    pub g_c: Vec<f64>,
}

impl PositionProfile {
    pub fn new(position: Vec<f64>, g_c: Vec<f64>) -> Result<Self> {
        if position.is_empty() {
            return Err(Error::EmptyAxis { name: "position" });
        }
        if position.len() != g_c.len() {
            return Err(Error::LengthMismatch {
                left_name: "position",
                left: position.len(),
                right_name: "g_c",
                right: g_c.len(),
            });
        }
        for &v in position.iter().chain(&g_c) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name: "position profile",
                    value: v,
                });
            }
        }
        for (i, pair) in position.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::NonMonotonicAxis {
                    name: "position",
                    index: i + 1,
                });
            }
        }
        if let Some(&v) = g_c.iter().find(|v| **v < 0.0) {
            return Err(Error::NonPositive {
                name: "g_c",
                value: v,
            });
        }
        Ok(Self { position, g_c })
    }
}

/// Rectified standing-wave profile `g(z) = A |sin(2 pi z / period + phase)|
/// + offset` of the coupling along the cavity axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidParams {
    /// Modulation amplitude, rad/s, non-negative.
    pub amplitude: f64,
    /// Spatial period of the unrectified sinusoid, meters, positive.
    pub period: f64,
    /// Phase at z = 0, radians, canonical range [0, pi).
    pub phase: f64,
    /// Additive floor, rad/s.
    pub offset: f64,
}

impl SinusoidParams {
    /// Coupling at position `z`.
    pub fn eval(&self, z: f64) -> f64 {
        self.amplitude * (TAU * z / self.period + self.phase).sin().abs() + self.offset
    }

    /// Reads the profile out of a [`fit_position_sinusoid`] result.
    pub fn from_fit(fit: &FitResult) -> Option<Self> {
        Some(Self {
            amplitude: fit.param("amplitude")?.value,
            period: fit.param("period")?.value,
            phase: fit.param("phase")?.value,
            offset: fit.param("offset")?.value,
        })
    }
}

struct SinusoidModel<'a> {
    position: &'a [f64],
    g_c: &'a [f64],
}

impl ResidualModel for SinusoidModel<'_> {
    fn residual_count(&self) -> usize {
        self.position.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        let (a, period, phase, offset) = (params[0], params[1], params[2], params[3]);
        for (k, (&z, &g)) in self.position.iter().zip(self.g_c).enumerate() {
            out[k] = a * (TAU * z / period + phase).sin().abs() + offset - g;
        }
    }

    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) -> bool {
        let (a, period, phase) = (params[0], params[1], params[2]);
        for (k, &z) in self.position.iter().enumerate() {
            let theta = TAU * z / period + phase;
            let (sin, cos) = theta.sin_cos();
            let sign = if sin > 0.0 {
                1.0
            } else if sin < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[(k, 0)] = sin.abs();
            out[(k, 1)] = -a * sign * cos * TAU * z / (period * period);
            out[(k, 2)] = a * sign * cos;
            out[(k, 3)] = 1.0;
        }
        true
    }
}

/// Dominant period of a mean-removed profile by direct Fourier projection
/// onto a uniform 128-point resampling. Returns the period in position
/// units, or `None` when the spectrum is empty.
fn dominant_period(position: &[f64], values: &[f64]) -> Option<f64> {
    const GRID: usize = 128;
    let span = position[position.len() - 1] - position[0];
    if span <= 0.0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut resampled = [0.0_f64; GRID];
    let mut src = 0;
    for (j, slot) in resampled.iter_mut().enumerate() {
        let z = position[0] + span * j as f64 / (GRID - 1) as f64;
        while src + 2 < position.len() && position[src + 1] < z {
            src += 1;
        }
        let (z0, z1) = (position[src], position[src + 1]);
        let t = ((z - z0) / (z1 - z0)).clamp(0.0, 1.0);
        *slot = values[src] + t * (values[src + 1] - values[src]) - mean;
    }

    let mut best_k = 0;
    let mut best_power = 0.0;
    for k in 1..GRID / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &y) in resampled.iter().enumerate() {
            let angle = TAU * (j * k) as f64 / GRID as f64;
            re += y * angle.cos();
            im -= y * angle.sin();
        }
        let power = re * re + im * im;
        if power > best_power {
            best_power = power;
            best_k = k;
        }
    }
    if best_k == 0 {
        None
    } else {
        Some(span / best_k as f64)
    }
}

/// Fits the rectified standing-wave profile to coupling-vs-position data,
/// recovering amplitude, period, phase, and offset.
///
/// The rectified profile repeats every half period, so the period seed is
/// twice the dominant Fourier period of the data and the fitted phase is
/// reported in [0, pi). A flat profile short-circuits to zero amplitude
/// with the mean as offset.
pub fn fit_position_sinusoid(profile: &PositionProfile) -> Result<FitResult> {
    let n = profile.position.len();
    if n < 5 {
        return Err(Error::TooFewPoints {
            operation: "fit_position_sinusoid",
            required: 5,
            actual: n,
        });
    }
    let g_min = profile.g_c.iter().cloned().fold(f64::INFINITY, f64::min);
    let g_max = profile.g_c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = profile.position[n - 1] - profile.position[0];
    let range = g_max - g_min;
    if range < 1e-12 * g_max.abs().max(1e-300) {
        let mean = profile.g_c.iter().sum::<f64>() / n as f64;
        let flat = |name: &'static str, value: f64| FittedParam {
            name,
            value,
            variance: 0.0,
            frozen: false,
        };
        return Ok(FitResult {
            parameters: vec![
                flat("amplitude", 0.0),
                flat("period", 2.0 * span),
                flat("phase", 0.0),
                flat("offset", mean),
            ],
            residual_norm: profile
                .g_c
                .iter()
                .map(|g| (g - mean) * (g - mean))
                .sum::<f64>()
                .sqrt(),
            iterations: 0,
            converged: true,
            note: Some("flat profile: amplitude pinned at zero, period is nominal".into()),
        });
    }

    // The rectified profile oscillates with period/2, so the sinusoid
    // period is twice the dominant Fourier period of the data.
    let period0 = 2.0 * dominant_period(&profile.position, &profile.g_c).unwrap_or(span);
    let peak_idx = profile
        .g_c
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let phase0 = (PI / 2.0 - TAU * profile.position[peak_idx] / period0).rem_euclid(PI);

    let model = SinusoidModel {
        position: &profile.position,
        g_c: &profile.g_c,
    };
    let specs = [
        ParamSpec::log_positive("amplitude", range),
        ParamSpec::log_positive("period", period0),
        ParamSpec::linear("phase", phase0),
        ParamSpec::linear("offset", g_min),
    ];
    let mut fit = nlls_solve(&model, &specs, &LmOptions::default())?;

    // |sin| is pi-periodic in phase; report the canonical representative.
    for p in &mut fit.parameters {
        if p.name == "phase" {
            p.value = p.value.rem_euclid(PI);
        }
    }
    Ok(fit)
}

/// Validates the profile fields shared by both length averages.
fn check_profile(profile: &SinusoidParams) -> Result<()> {
    for (name, value) in [
        ("amplitude", profile.amplitude),
        ("period", profile.period),
        ("phase", profile.phase),
        ("offset", profile.offset),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFinite { name, value });
        }
    }
    if profile.period <= 0.0 {
        return Err(Error::NonPositive {
            name: "period",
            value: profile.period,
        });
    }
    if profile.amplitude < 0.0 {
        return Err(Error::NonPositive {
            name: "amplitude",
            value: profile.amplitude,
        });
    }
    Ok(())
}

/// Root-mean-square coupling of a sample of the given length centered at
/// `center`, under the standing-wave profile.
///
/// The collective coupling adds in quadrature across the sample volume, so
/// the effective coupling of an extended sample is the rms of g(z), not its
/// mean. Zero length degenerates to the point value at the center.
pub fn average_coupling_over_length(
    profile: &SinusoidParams,
    length: f64,
    center: f64,
) -> Result<f64> {
    check_profile(profile)?;
    if !length.is_finite() || length < 0.0 {
        return Err(Error::NonPositive {
            name: "length",
            value: length,
        });
    }
    if length == 0.0 {
        return Ok(profile.eval(center));
    }
    let g2 = |z: f64| {
        let g = profile.eval(z);
        g * g
    };
    let integral = adaptive_simpson(&g2, center - length / 2.0, center + length / 2.0, 1e-6);
    Ok((integral / length).sqrt())
}

/// Plain arithmetic mean of g(z) over the sample, for comparison with the
/// quadrature average.
pub fn mean_coupling_over_length(
    profile: &SinusoidParams,
    length: f64,
    center: f64,
) -> Result<f64> {
    check_profile(profile)?;
    if !length.is_finite() || length < 0.0 {
        return Err(Error::NonPositive {
            name: "length",
            value: length,
        });
    }
    if length == 0.0 {
        return Ok(profile.eval(center));
    }
    let g = |z: f64| profile.eval(z);
    let integral = adaptive_simpson(&g, center - length / 2.0, center + length / 2.0, 1e-6);
    Ok(integral / length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SpinEnsembleParams;
    use crate::spectrum::{linspace, simulate_map};
    use crate::track::extract_dip_track;
    use crate::track::ExpectedBranches;
    use crate::units::{gauss_to_tesla, mhz_per_gauss_to_si, mhz_to_rad_s};

    const SLOPE_MHZ_PER_G: f64 = 2.8;

    fn slope_si() -> f64 {
        mhz_per_gauss_to_si(SLOPE_MHZ_PER_G)
    }

    /// Synthetic single-branch track following the dispersive pull exactly.
    fn dispersive_track(g_mhz: f64, gamma_mhz: f64) -> DipTrack {
        let omega_c = mhz_to_rad_s(9.8e3);
        let g = mhz_to_rad_s(g_mhz);
        let gamma = mhz_to_rad_s(gamma_mhz);
        let b_r = gauss_to_tesla(3470.9);
        let fields: Vec<f64> = linspace(gauss_to_tesla(3460.0), gauss_to_tesla(3482.0), 45);
        let freqs: Vec<f64> = fields
            .iter()
            .map(|&b| model::dispersive_shift(slope_si() * (b - b_r), omega_c, g, gamma))
            .collect();
        let branches = vec![crate::track::Branch::Single; fields.len()];
        DipTrack::new(fields, freqs, branches).unwrap()
    }

    #[test]
    fn dispersive_fit_recovers_noiseless_truth() {
        let track = dispersive_track(0.25, 2.85);
        let fit = fit_dispersive_track(&track, slope_si()).unwrap();
        assert!(fit.converged);
        let g = fit.value("g_c");
        let gamma = fit.value("gamma_s");
        assert!((g - mhz_to_rad_s(0.25)).abs() < 1e-6 * mhz_to_rad_s(0.25));
        assert!((gamma - mhz_to_rad_s(2.85)).abs() < 1e-6 * mhz_to_rad_s(2.85));
        assert!((fit.value("b_r") - gauss_to_tesla(3470.9)).abs() < 1e-9 * gauss_to_tesla(3470.9));
    }

    #[test]
    fn dispersive_fit_rejects_two_branch_tracks() {
        let track = DipTrack::new(
            vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0],
            vec![1.0; 10],
            vec![
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
            ],
        )
        .unwrap();
        assert!(matches!(
            fit_dispersive_track(&track, slope_si()),
            Err(Error::BadInitialGuess { .. })
        ));
    }

    #[test]
    fn kappa_fit_recovers_noiseless_truth() {
        let g = mhz_to_rad_s(1.12);
        let gamma = mhz_to_rad_s(2.0);
        let kappa_c = mhz_to_rad_s(0.73);
        let b_r = gauss_to_tesla(3470.9);
        let fields: Vec<f64> = linspace(gauss_to_tesla(3458.0), gauss_to_tesla(3484.0), 53);
        let kappas: Vec<f64> = fields
            .iter()
            .map(|&b| model::kappa_broadening(slope_si() * (b - b_r), kappa_c, g, gamma))
            .collect();
        let fit = fit_kappa_lorentzian(&fields, &kappas, slope_si()).unwrap();
        assert!(fit.converged);
        assert!((fit.value("g_c") - g).abs() < 1e-6 * g);
        assert!((fit.value("gamma_s") - gamma).abs() < 1e-6 * gamma);
        assert!((fit.value("kappa_c") - kappa_c).abs() < 1e-6 * kappa_c);
    }

    #[test]
    fn kappa_fit_on_flat_data_finds_no_coupling() {
        let fields: Vec<f64> = linspace(gauss_to_tesla(3460.0), gauss_to_tesla(3480.0), 21);
        let kappa_c = mhz_to_rad_s(0.73);
        let kappas = vec![kappa_c; fields.len()];
        let fit = fit_kappa_lorentzian(&fields, &kappas, slope_si()).unwrap();
        assert!((fit.value("kappa_c") - kappa_c).abs() < 1e-9 * kappa_c);
        // g is consistent with zero: within twice its own uncertainty or
        // negligible next to the baseline linewidth.
        let g = fit.value("g_c");
        assert!(g <= 2.0 * fit.stderr("g_c") + 1e-6 * kappa_c);
    }

    #[test]
    fn branch_fit_recovers_noiseless_truth() {
        let omega_c = mhz_to_rad_s(9.8e3);
        let g = mhz_to_rad_s(5.9);
        let b_r = gauss_to_tesla(3470.9);
        let fields: Vec<f64> = linspace(gauss_to_tesla(3462.0), gauss_to_tesla(3480.0), 37);
        let mut out_fields = Vec::new();
        let mut out_freqs = Vec::new();
        let mut out_branches = Vec::new();
        for &b in &fields {
            let (up, lo) = model::rabi_branches(slope_si() * (b - b_r), omega_c, g);
            out_fields.extend([b, b]);
            out_freqs.extend([lo, up]);
            out_branches.extend([Branch::Lower, Branch::Upper]);
        }
        let track = DipTrack::new(out_fields, out_freqs, out_branches).unwrap();
        let fit = fit_rabi_branches(&track, slope_si()).unwrap();
        assert!(fit.converged);
        assert!((fit.value("g_c") - g).abs() < 1e-8 * g);
        assert!((fit.value("omega_c") - omega_c).abs() < 1e-10 * omega_c);
        assert!((fit.value("b_r") - b_r).abs() < 1e-8 * b_r);
    }

    #[test]
    fn branch_fit_requires_five_points_per_branch() {
        let track = DipTrack::new(
            vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0],
            vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0],
            vec![
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
                Branch::Lower,
                Branch::Upper,
            ],
        )
        .unwrap();
        assert!(matches!(
            fit_rabi_branches(&track, slope_si()),
            Err(Error::TooFewPoints { actual: 4, .. })
        ));
    }

    fn lipc_map() -> (SpectrumMap, CavityParams, SpinEnsembleParams) {
        let cavity = CavityParams::new(
            mhz_to_rad_s(9.8e3),
            mhz_to_rad_s(0.73),
            0.99 * mhz_to_rad_s(0.73),
        )
        .unwrap();
        let spins = SpinEnsembleParams::with_collective_coupling(
            mhz_to_rad_s(2.85),
            gauss_to_tesla(3470.9),
            slope_si(),
            mhz_to_rad_s(1.15),
        )
        .unwrap();
        let fields = linspace(gauss_to_tesla(3460.0), gauss_to_tesla(3482.0), 23);
        let freqs = linspace(mhz_to_rad_s(9.8e3 - 6.0), mhz_to_rad_s(9.8e3 + 6.0), 121);
        let map = simulate_map(&cavity, &spins, &fields, &freqs).unwrap();
        (map, cavity, spins)
    }

    #[test]
    fn map_fit_recovers_noiseless_truth_all_free() {
        let (map, cavity, spins) = lipc_map();
        let fit = fit_full_s11_map(&map, &MapFitSetup::all_free(slope_si())).unwrap();
        assert!(fit.converged, "note: {:?}", fit.note);
        let g_true = spins.collective_coupling();
        assert!((fit.value("g_c") - g_true).abs() < 1e-5 * g_true);
        assert!((fit.value("gamma_s") - spins.gamma_s).abs() < 1e-5 * spins.gamma_s);
        assert!((fit.value("kappa_c") - cavity.kappa_c).abs() < 1e-5 * cavity.kappa_c);
        assert!((fit.value("kappa_e") - cavity.kappa_e).abs() < 1e-5 * cavity.kappa_e);
        assert!((fit.value("omega_c") - cavity.omega_c).abs() < 1e-9 * cavity.omega_c);
        assert!(
            (fit.value("b_r") - spins.resonance_field).abs() < 1e-7 * spins.resonance_field
        );
    }

    #[test]
    fn map_fit_respects_frozen_parameters() {
        let (map, cavity, _) = lipc_map();
        let mut setup = MapFitSetup::all_free(slope_si());
        let held = 1.02 * cavity.kappa_e;
        setup.kappa_e = ParamSetup::frozen_at(held);
        let fit = fit_full_s11_map(&map, &setup).unwrap();
        let p = fit.param("kappa_e").unwrap();
        assert_eq!(p.value, held);
        assert!(p.frozen);
        assert_eq!(p.variance, 0.0);
    }

    #[test]
    fn map_fit_rejects_db_scale_and_valueless_freeze() {
        let (map, _, _) = lipc_map();
        let db = map.to_db();
        assert!(matches!(
            fit_full_s11_map(&db, &MapFitSetup::all_free(slope_si())),
            Err(Error::NotLinearScale { .. })
        ));
        let mut setup = MapFitSetup::all_free(slope_si());
        setup.gamma_s = ParamSetup {
            initial: None,
            frozen: true,
        };
        assert!(matches!(
            fit_full_s11_map(&map, &setup),
            Err(Error::BadInitialGuess { .. })
        ));
    }

    #[test]
    fn map_extraction_and_dispersive_fit_chain_together() {
        // End to end at weak coupling: simulate, track the dip, fit the pull.
        let cavity = CavityParams::new(
            mhz_to_rad_s(9.8e3),
            mhz_to_rad_s(0.73),
            0.99 * mhz_to_rad_s(0.73),
        )
        .unwrap();
        let spins = SpinEnsembleParams::with_collective_coupling(
            mhz_to_rad_s(2.85),
            gauss_to_tesla(3470.9),
            slope_si(),
            mhz_to_rad_s(0.25),
        )
        .unwrap();
        let fields = linspace(gauss_to_tesla(3460.0), gauss_to_tesla(3482.0), 45);
        let freqs = linspace(mhz_to_rad_s(9.8e3 - 2.0), mhz_to_rad_s(9.8e3 + 2.0), 401);
        let map = simulate_map(&cavity, &spins, &fields, &freqs).unwrap();
        let track = extract_dip_track(&map, ExpectedBranches::One).unwrap();
        let fit = fit_dispersive_track(&track, slope_si()).unwrap();
        let g_true = spins.collective_coupling();
        assert!(
            (fit.value("g_c") - g_true).abs() < 0.05 * g_true,
            "g = {} vs {}",
            fit.value("g_c"),
            g_true
        );
    }

    #[test]
    fn sqrt_n_single_point_is_exact_ratio() {
        let data = CouplingVsN::new(vec![1.9e16], vec![mhz_to_rad_s(5.9)]).unwrap();
        let fit = sqrt_n_regression(&data).unwrap();
        let expected = mhz_to_rad_s(5.9) / 1.9e16_f64.sqrt();
        assert!((fit.value("g_s") - expected).abs() <= 1e-15 * expected);
        assert_eq!(fit.stderr("g_s"), 0.0);
    }

    #[test]
    fn sqrt_n_regression_matches_hand_computed_slope() {
        // Four dilution points, couplings in rad/s; the slope lands near
        // 0.043 Hz times 2 pi.
        let n = vec![7.8e14, 3.1e15, 1.2e16, 1.9e16];
        let g: Vec<f64> = [1.15, 2.0, 4.9, 5.9]
            .iter()
            .map(|&m| mhz_to_rad_s(m))
            .collect();
        let fit = sqrt_n_regression(&CouplingVsN::new(n.clone(), g.clone()).unwrap()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (nk, gk) in n.iter().zip(&g) {
            num += nk.sqrt() * gk;
            den += nk;
        }
        assert!((fit.value("g_s") - num / den).abs() <= 1e-15 * (num / den));
        // Excluding a point by weight reproduces the three-point slope.
        let weighted =
            sqrt_n_regression(&CouplingVsN::weighted(n.clone(), g.clone(), vec![1.0, 1.0, 1.0, 0.0]).unwrap())
                .unwrap();
        let three = sqrt_n_regression(
            &CouplingVsN::new(n[..3].to_vec(), g[..3].to_vec()).unwrap(),
        )
        .unwrap();
        assert_eq!(weighted.value("g_s"), three.value("g_s"));
    }

    #[test]
    fn sinusoid_fit_recovers_noiseless_profile() {
        let truth = SinusoidParams {
            amplitude: mhz_to_rad_s(4.0),
            period: 0.046,
            phase: 1.1,
            offset: mhz_to_rad_s(0.3),
        };
        let position: Vec<f64> = linspace(0.0, 0.05, 41);
        let g: Vec<f64> = position.iter().map(|&z| truth.eval(z)).collect();
        let profile = PositionProfile::new(position, g).unwrap();
        let fit = fit_position_sinusoid(&profile).unwrap();
        assert!(fit.converged);
        assert!((fit.value("amplitude") - truth.amplitude).abs() < 1e-6 * truth.amplitude);
        assert!((fit.value("period") - truth.period).abs() < 1e-6 * truth.period);
        assert!((fit.value("phase") - truth.phase).abs() < 1e-6);
        assert!((fit.value("offset") - truth.offset).abs() < 1e-6 * truth.amplitude);
    }

    #[test]
    fn sinusoid_fit_short_circuits_on_flat_profile() {
        let position: Vec<f64> = linspace(0.0, 0.05, 11);
        let g = vec![mhz_to_rad_s(1.0); 11];
        let fit = fit_position_sinusoid(&PositionProfile::new(position, g).unwrap()).unwrap();
        assert_eq!(fit.value("amplitude"), 0.0);
        assert!((fit.value("offset") - mhz_to_rad_s(1.0)).abs() < 1e-9 * mhz_to_rad_s(1.0));
        assert!(fit.note.as_deref().unwrap_or("").contains("flat"));
    }

    #[test]
    fn length_average_closed_forms() {
        // Full-period rms of a pure rectified sinusoid is A / sqrt(2).
        let profile = SinusoidParams {
            amplitude: 2.0,
            period: 0.04,
            phase: 0.0,
            offset: 0.0,
        };
        let rms = average_coupling_over_length(&profile, 0.04, 0.02).unwrap();
        assert!((rms - 2.0 / 2.0_f64.sqrt()).abs() < 1e-5);
        // Full-period mean of |sin| is 2 A / pi.
        let mean = mean_coupling_over_length(&profile, 0.04, 0.02).unwrap();
        assert!((mean - 2.0 * 2.0 / PI).abs() < 1e-5);
        // A uniform profile averages to itself and zero length degenerates
        // to the point value.
        let uniform = SinusoidParams {
            amplitude: 0.0,
            period: 1.0,
            phase: 0.0,
            offset: 3.5,
        };
        let flat = average_coupling_over_length(&uniform, 0.02, 0.0).unwrap();
        assert!((flat - 3.5).abs() < 1e-12 * 3.5);
        let point = average_coupling_over_length(&profile, 0.0, 0.01).unwrap();
        assert_eq!(point, profile.eval(0.01));
    }

    #[test]
    fn length_average_validates_inputs() {
        let profile = SinusoidParams {
            amplitude: 1.0,
            period: 0.0,
            phase: 0.0,
            offset: 0.0,
        };
        assert!(matches!(
            average_coupling_over_length(&profile, 0.01, 0.0),
            Err(Error::NonPositive { name: "period", .. })
        ));
        let ok = SinusoidParams {
            amplitude: 1.0,
            period: 0.04,
            phase: 0.0,
            offset: 0.0,
        };
        assert!(matches!(
            average_coupling_over_length(&ok, -0.01, 0.0),
            Err(Error::NonPositive { name: "length", .. })
        ));
    }

    /// Worst relative mismatch between the model's analytic Jacobian and a
    /// central finite difference of its residuals at one parameter point.
    /// Each column is compared against its own largest derivative so a zero
    /// crossing in one residual does not inflate the ratio.
    fn jacobian_fd_mismatch(model: &dyn ResidualModel, params: &[f64]) -> f64 {
        let m = model.residual_count();
        let n = params.len();
        let mut analytic = nalgebra::DMatrix::zeros(m, n);
        assert!(model.jacobian(params, &mut analytic));
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        let mut p = params.to_vec();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let h = 1.0e-6 * params[j].abs().max(1.0e-12);
            p[j] = params[j] + h;
            model.residuals(&p, &mut plus);
            p[j] = params[j] - h;
            model.residuals(&p, &mut minus);
            p[j] = params[j];
            let scale = (0..m)
                .map(|k| analytic[(k, j)].abs())
                .fold(1.0e-300_f64, f64::max);
            for k in 0..m {
                let fd = (plus[k] - minus[k]) / (2.0 * h);
                worst = worst.max((analytic[(k, j)] - fd).abs() / scale);
            }
        }
        worst
    }

    // The Jacobian formulas are scale invariant, so the check runs in a
    // rate-normalized chart where every quantity is order one. On absolute
    // microwave frequencies the residual ulp (~1e-2 rad/s at 1e13) swamps
    // the small-derivative columns and central differences cannot certify
    // 1e-5 no matter the step.
    #[test]
    fn analytic_jacobians_match_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);

        let fields: Vec<f64> = linspace(-3.0, 3.0, 21);
        let zeros = vec![0.0; fields.len()];
        let upper: Vec<bool> = (0..fields.len()).map(|k| k % 2 == 0).collect();
        let positions: Vec<f64> = linspace(0.0, 0.05, 21);

        for _ in 0..100 {
            let g = rng.gen_range(0.2..3.0);
            let gamma = rng.gen_range(0.4..3.0);
            let kappa_c = rng.gen_range(0.2..2.0);
            let omega_c = rng.gen_range(-0.5..0.5);
            let b_r = rng.gen_range(-0.5..0.5);

            let dispersive = DispersiveModel {
                field: &fields,
                frequency: &zeros,
                slope: 1.0,
            };
            let err = jacobian_fd_mismatch(&dispersive, &[g, gamma, omega_c, b_r]);
            assert!(err < 1.0e-5, "dispersive jacobian off by {err:e}");

            let kappa = KappaModel {
                field: &fields,
                kappa: &zeros,
                slope: 1.0,
            };
            let err = jacobian_fd_mismatch(&kappa, &[g, gamma, kappa_c, b_r]);
            assert!(err < 1.0e-5, "kappa jacobian off by {err:e}");

            let branches = BranchesModel {
                field: &fields,
                frequency: &zeros,
                upper: &upper,
                slope: 1.0,
            };
            let err = jacobian_fd_mismatch(&branches, &[g, omega_c, b_r]);
            assert!(err < 1.0e-5, "branches jacobian off by {err:e}");

            // The rectified sinusoid is not differentiable where sin hits
            // zero; redraw the phase until every sample point clears the
            // kink by more than the finite-difference step.
            let amplitude = rng.gen_range(0.2..2.0);
            let period = rng.gen_range(0.005..0.04);
            let offset = rng.gen_range(0.0..1.0);
            let phase = loop {
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let clear = positions.iter().all(|&z| {
                    (2.0 * std::f64::consts::PI * z / period + phi).sin().abs() > 1.0e-4
                });
                if clear {
                    break phi;
                }
            };
            let sinusoid = SinusoidModel {
                position: &positions,
                g_c: &zeros,
            };
            let err = jacobian_fd_mismatch(&sinusoid, &[amplitude, period, phase, offset]);
            assert!(err < 1.0e-5, "sinusoid jacobian off by {err:e}");
        }
    }
}
