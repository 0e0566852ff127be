//! Shared builders for the integration suites: paper-scale parameter sets,
//! synthetic tracks and maps, seeded noise, and a Jacobian cross-check.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rabifit::model;
use rabifit::spectrum::linspace;
use rabifit::track::Branch;
use rabifit::units::{gauss_to_tesla, mhz_per_gauss_to_si, mhz_to_rad_s};
use rabifit::{CavityParams, DipTrack, SpectrumMap, SpinEnsembleParams};

pub const SLOPE_MHZ_PER_G: f64 = 2.8;

pub fn slope_si() -> f64 {
    mhz_per_gauss_to_si(SLOPE_MHZ_PER_G)
}

pub fn mhz(f: f64) -> f64 {
    mhz_to_rad_s(f)
}

pub fn gauss(b: f64) -> f64 {
    gauss_to_tesla(b)
}

/// Cavity and spin ensemble with everything stated in presentation units
/// (MHz, gauss) and the default 2.8 MHz/G conversion.
pub fn pair(
    omega_c_mhz: f64,
    kappa_c_mhz: f64,
    kappa_e_ratio: f64,
    g_mhz: f64,
    gamma_mhz: f64,
    b_r_g: f64,
) -> (CavityParams, SpinEnsembleParams) {
    let cavity = CavityParams::new(
        mhz(omega_c_mhz),
        mhz(kappa_c_mhz),
        kappa_e_ratio * mhz(kappa_c_mhz),
    )
    .unwrap();
    let spins = SpinEnsembleParams::with_collective_coupling(
        mhz(gamma_mhz),
        gauss(b_r_g),
        slope_si(),
        mhz(g_mhz),
    )
    .unwrap();
    (cavity, spins)
}

/// Single-branch track following the dispersive pull exactly.
pub fn dispersive_track(
    fields_g: &[f64],
    g_mhz: f64,
    gamma_mhz: f64,
    omega_c_mhz: f64,
    b_r_g: f64,
) -> DipTrack {
    let fields: Vec<f64> = fields_g.iter().map(|&b| gauss(b)).collect();
    let freqs: Vec<f64> = fields
        .iter()
        .map(|&b| {
            let delta = slope_si() * (b - gauss(b_r_g));
            model::dispersive_shift(delta, mhz(omega_c_mhz), mhz(g_mhz), mhz(gamma_mhz))
        })
        .collect();
    let branches = vec![Branch::Single; fields.len()];
    DipTrack::new(fields, freqs, branches).unwrap()
}

/// Field-swept linewidth profile following the broadening Lorentzian
/// exactly. Returns (fields in tesla, linewidths in rad/s).
pub fn kappa_profile(
    fields_g: &[f64],
    g_mhz: f64,
    gamma_mhz: f64,
    kappa_c_mhz: f64,
    b_r_g: f64,
) -> (Vec<f64>, Vec<f64>) {
    let fields: Vec<f64> = fields_g.iter().map(|&b| gauss(b)).collect();
    let kappas: Vec<f64> = fields
        .iter()
        .map(|&b| {
            let delta = slope_si() * (b - gauss(b_r_g));
            model::kappa_broadening(delta, mhz(kappa_c_mhz), mhz(g_mhz), mhz(gamma_mhz))
        })
        .collect();
    (fields, kappas)
}

/// Two-branch track following the normal-mode curves exactly.
pub fn branch_track(fields_g: &[f64], g_mhz: f64, omega_c_mhz: f64, b_r_g: f64) -> DipTrack {
    let mut field = Vec::new();
    let mut frequency = Vec::new();
    let mut branch = Vec::new();
    for &b_g in fields_g {
        let b = gauss(b_g);
        let delta = slope_si() * (b - gauss(b_r_g));
        let (up, lo) = model::rabi_branches(delta, mhz(omega_c_mhz), mhz(g_mhz));
        field.extend([b, b]);
        frequency.extend([lo, up]);
        branch.extend([Branch::Lower, Branch::Upper]);
    }
    DipTrack::new(field, frequency, branch).unwrap()
}

/// Adds seeded Gaussian noise to a value list.
pub fn add_noise(values: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    values.iter().map(|v| v + normal.sample(&mut rng)).collect()
}

/// Applies seeded multiplicative noise (1 + eps) per pixel, clipped at zero.
pub fn multiplicative_noise(map: &SpectrumMap, sigma: f64, seed: u64) -> SpectrumMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut power = map.power.clone();
    for i in 0..map.n_fields() {
        for j in 0..map.n_frequencies() {
            let eps: f64 = normal.sample(&mut rng);
            power[(i, j)] = (power[(i, j)] * (1.0 + eps)).max(0.0);
        }
    }
    SpectrumMap::new(
        map.field_axis.clone(),
        map.frequency_axis.clone(),
        power,
        map.scale,
    )
    .unwrap()
}

/// Peak-to-peak spread of a value list; the noisy-fit criteria state their
/// noise level as a percentage of this.
pub fn peak_to_peak(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Simulated anticrossing map for the given grid, stated in MHz and gauss.
pub fn simulated_map(
    cavity: &CavityParams,
    spins: &SpinEnsembleParams,
    field_start_g: f64,
    field_stop_g: f64,
    field_points: usize,
    freq_start_mhz: f64,
    freq_stop_mhz: f64,
    freq_points: usize,
) -> SpectrumMap {
    let fields = linspace(gauss(field_start_g), gauss(field_stop_g), field_points);
    let freqs = linspace(mhz(freq_start_mhz), mhz(freq_stop_mhz), freq_points);
    rabifit::simulate_map(cavity, spins, &fields, &freqs).unwrap()
}
