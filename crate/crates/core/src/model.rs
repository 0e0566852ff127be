//! Forward models: the reflection response of a cavity coupled to a spin
//! ensemble and the closed-form expressions for its dip position, width, and
//! normal-mode branches.
//!
//! All functions here are pure and total on validated parameters.

use num_complex::Complex64;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::params::{CavityParams, SpinEnsembleParams};

/// Spin detuning for a magnetic field value, rad/s. Positive above the
/// resonance field.
#[inline]
pub fn field_to_detuning(field: f64, spins: &SpinEnsembleParams) -> f64 {
    spins.m0_over_hbar * (field - spins.resonance_field)
}

/// Reflected power |S11|^2 of the coupled system at probe frequency `omega`
/// and spin detuning `delta`.
///
/// The spin ensemble enters the cavity response as a susceptibility
/// g_c^2 / (i(omega - omega_c - delta) - gamma_s): its pole sits at the spin
/// frequency omega_c + delta, and its real part is non-positive, so the
/// denominator's real part never exceeds -kappa_c and the result is finite
/// for every real probe frequency.
#[inline]
pub fn reflection_power(
    omega: f64,
    delta: f64,
    cav: &CavityParams,
    g_c: f64,
    gamma_s: f64,
) -> f64 {
    let spin = Complex64::new(-gamma_s, omega - cav.omega_c - delta);
    let den = Complex64::new(-cav.kappa_c, omega - cav.omega_c) + g_c * g_c / spin;
    (1.0 + cav.kappa_e / den).norm_sqr()
}

/// Reflected power of the critically coupled response (kappa_e = kappa_c) at
/// zero spin detuning, in real arithmetic.
///
/// `x` is the probe offset omega - omega_c. Equals
/// [`reflection_power`] with kappa_e = kappa_c and delta = 0; the splitting
/// analysis uses this form because the matched response has zero reflection
/// floor, so dip structure is not masked by an impedance-mismatch offset.
#[inline]
pub fn matched_reflection_power(x: f64, kappa_c: f64, g_c: f64, gamma_s: f64) -> f64 {
    let lor = 1.0 / (x * x + gamma_s * gamma_s);
    let a = gamma_s * g_c * g_c * lor;
    let b = x * (1.0 - g_c * g_c * lor);
    (a * a + b * b) / ((kappa_c + a) * (kappa_c + a) + b * b)
}

/// Dispersively shifted cavity frequency, rad/s: the spins pull the dip to
/// omega_c - g_c^2 delta / (delta^2 + gamma_s^2). Odd about delta = 0, with
/// extrema at delta = +/- gamma_s.
#[inline]
pub fn dispersive_shift(delta: f64, omega_c: f64, g_c: f64, gamma_s: f64) -> f64 {
    omega_c - g_c * g_c * delta / (delta * delta + gamma_s * gamma_s)
}

/// Broadened cavity half-width, rad/s: kappa_c + g_c^2 gamma_s /
/// (delta^2 + gamma_s^2). Even in delta, peaking at kappa_c + g_c^2/gamma_s
/// on resonance.
#[inline]
pub fn kappa_broadening(delta: f64, kappa_c: f64, g_c: f64, gamma_s: f64) -> f64 {
    kappa_c + g_c * g_c * gamma_s / (delta * delta + gamma_s * gamma_s)
}

/// Normal-mode branch frequencies (upper, lower), rad/s:
/// omega_c + delta/2 +/- sqrt(delta^2 + 4 g_c^2)/2.
///
/// The gap sqrt(delta^2 + 4 g_c^2) is minimal on resonance, where it equals
/// 2 g_c.
#[inline]
pub fn rabi_branches(delta: f64, omega_c: f64, g_c: f64) -> (f64, f64) {
    let half_gap = 0.5 * (delta * delta + 4.0 * g_c * g_c).sqrt();
    let center = omega_c + 0.5 * delta;
    (center + half_gap, center - half_gap)
}

/// Collective coupling g_s * sqrt(N), rad/s.
#[inline]
pub fn collective_coupling(g_s: f64, n: f64) -> f64 {
    g_s * n.sqrt()
}

/// Estimate of the single-spin coupling m0 * sqrt(mu_0 omega_c / (2 hbar
/// V_c)) from the cavity geometry, rad/s. `m0` is the spin's magnetic
/// transition moment in J/T.
pub fn single_spin_coupling_estimate(
    m0: f64,
    cav: &CavityParams,
    consts: &PhysicalConstants,
) -> Result<f64> {
    let volume = cav.mode_volume.ok_or(Error::MissingModeVolume {
        operation: "single_spin_coupling_estimate",
    })?;
    Ok(m0 * (consts.mu_0 * cav.omega_c / (2.0 * consts.hbar * volume)).sqrt())
}

/// Net polarized population at temperature `t_k` for a transition at
/// ordinary frequency `f_hz`: N_tot * h f / (2 k_B T), the high-temperature
/// polarization fraction.
#[inline]
pub fn polarized_spin_count(n_total: f64, f_hz: f64, t_k: f64, consts: &PhysicalConstants) -> f64 {
    debug_assert!(f_hz > 0.0 && t_k > 0.0);
    n_total * consts.h * f_hz / (2.0 * consts.k_b * t_k)
}

/// Cooperativity g_c^2 / (2 kappa_c gamma_s).
#[inline]
pub fn cooperativity(g_c: f64, kappa_c: f64, gamma_s: f64) -> f64 {
    g_c * g_c / (2.0 * kappa_c * gamma_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{BOHR_MAGNETON, M0_OVER_HBAR_DEFAULT};
    use crate::units::{gauss_to_tesla, mhz_to_rad_s, rad_s_to_mhz};

    fn default_spins(resonance_field_g: f64) -> SpinEnsembleParams {
        SpinEnsembleParams::with_collective_coupling(
            mhz_to_rad_s(2.0),
            gauss_to_tesla(resonance_field_g),
            M0_OVER_HBAR_DEFAULT,
            mhz_to_rad_s(1.0),
        )
        .unwrap()
    }

    #[test]
    fn detuning_is_zero_on_resonance_and_linear_off_it() {
        let spins = default_spins(3470.9);
        assert_eq!(field_to_detuning(gauss_to_tesla(3470.9), &spins), 0.0);
        // 1 G off resonance at 2.8 MHz/G.
        let delta = field_to_detuning(gauss_to_tesla(3471.9), &spins);
        assert!((rad_s_to_mhz(delta) - 2.8).abs() < 1.0e-9);
        // 3466 G against a 3470.9 G resonance sits 13.72 MHz below.
        let delta = field_to_detuning(gauss_to_tesla(3466.0), &spins);
        assert!((rad_s_to_mhz(delta) + 13.72).abs() < 1.0e-9);
    }

    #[test]
    fn bare_matched_cavity_reflects_nothing_on_resonance() {
        let cav = CavityParams::matched(mhz_to_rad_s(9800.0), mhz_to_rad_s(5.4)).unwrap();
        let p = reflection_power(cav.omega_c, 0.0, &cav, 0.0, mhz_to_rad_s(0.14));
        assert!(p.abs() < 1.0e-24);
        // Far off resonance everything reflects.
        let p = reflection_power(cav.omega_c + mhz_to_rad_s(5000.0), 0.0, &cav, 0.0, 1.0);
        assert!((p - 1.0).abs() < 1.0e-5);
    }

    #[test]
    fn matched_form_equals_complex_form() {
        let cav = CavityParams::matched(mhz_to_rad_s(9800.0), mhz_to_rad_s(5.4)).unwrap();
        let g = mhz_to_rad_s(0.71);
        let gamma = mhz_to_rad_s(0.14);
        for k in -20..=20 {
            let x = k as f64 * mhz_to_rad_s(0.33);
            let via_complex = reflection_power(cav.omega_c + x, 0.0, &cav, g, gamma);
            let via_real = matched_reflection_power(x, cav.kappa_c, g, gamma);
            assert!(
                (via_complex - via_real).abs() <= 1.0e-11 * via_complex.max(1.0e-3),
                "mismatch at x = {x}: {via_complex} vs {via_real}"
            );
        }
    }

    #[test]
    fn dispersive_shift_extrema_sit_at_gamma() {
        let omega_c = mhz_to_rad_s(9800.0);
        let g = mhz_to_rad_s(1.15);
        let gamma = mhz_to_rad_s(2.85);
        assert_eq!(dispersive_shift(0.0, omega_c, g, gamma), omega_c);
        let at_gamma = dispersive_shift(gamma, omega_c, g, gamma);
        assert!((at_gamma - (omega_c - g * g / (2.0 * gamma))).abs() < 1.0e-6 * omega_c.abs());
    }

    #[test]
    fn broadening_peak_value_matches_hand_arithmetic() {
        // 0.73 + 1.12^2 / 2.00 = 1.3572 MHz on resonance.
        let kappa = kappa_broadening(
            0.0,
            mhz_to_rad_s(0.73),
            mhz_to_rad_s(1.12),
            mhz_to_rad_s(2.00),
        );
        assert!((rad_s_to_mhz(kappa) - 1.3572).abs() < 1.0e-9);
        // Coupling off, no excess (up to unit round trip).
        let bare = kappa_broadening(1.0, mhz_to_rad_s(0.73), 0.0, mhz_to_rad_s(2.0));
        assert!((rad_s_to_mhz(bare) - 0.73).abs() < 1.0e-12);
    }

    #[test]
    fn branch_gap_on_resonance_is_twice_the_coupling() {
        let omega_c = mhz_to_rad_s(9800.0);
        let g = mhz_to_rad_s(5.9);
        let (up, lo) = rabi_branches(0.0, omega_c, g);
        assert!((up - (omega_c + g)).abs() < 1.0e-6);
        assert!((lo - (omega_c - g)).abs() < 1.0e-6);
        // Far detuned the branches approach the bare modes.
        let delta = 100.0 * g;
        let (up, lo) = rabi_branches(delta, omega_c, g);
        let gap = up - lo;
        assert!((gap - delta.hypot(2.0 * g)).abs() < 1.0e-9 * gap);
        assert!(((up - (omega_c + delta)) / g).abs() < 2.0e-2);
        assert!(((lo - omega_c) / g).abs() < 2.0e-2);
    }

    #[test]
    fn collective_coupling_reproduces_reported_ensembles() {
        // g_s/2pi = 0.043 Hz over 1.9e16 polarized spins lands at 5.9 MHz.
        let g = collective_coupling(2.0 * std::f64::consts::PI * 0.043, 1.9e16);
        assert!((rad_s_to_mhz(g) / 5.9 - 1.0).abs() < 0.01);
        // g_s/2pi = 0.049 Hz over 2.2e14 lands near 0.71 MHz.
        let g = collective_coupling(2.0 * std::f64::consts::PI * 0.049, 2.2e14);
        assert!((rad_s_to_mhz(g) / 0.71 - 1.0).abs() < 0.03);
        assert_eq!(collective_coupling(1.0, 0.0), 0.0);
    }

    #[test]
    fn coupling_estimate_matches_geometry_scalings() {
        let consts = PhysicalConstants::DEFAULT;
        let cav = CavityParams::matched(mhz_to_rad_s(9800.0), mhz_to_rad_s(1.0))
            .unwrap()
            .with_mode_volume(2.0e-7)
            .unwrap();
        let g = single_spin_coupling_estimate(BOHR_MAGNETON, &cav, &consts).unwrap();
        let g_hz = g / (2.0 * std::f64::consts::PI);
        assert!((g_hz / 0.06 - 1.0).abs() < 0.10, "g_s = {g_hz} Hz");

        // Quadrupled volume halves the estimate; quadrupled frequency doubles it.
        let bigger = CavityParams::matched(cav.omega_c, cav.kappa_c)
            .unwrap()
            .with_mode_volume(8.0e-7)
            .unwrap();
        let g_big = single_spin_coupling_estimate(BOHR_MAGNETON, &bigger, &consts).unwrap();
        assert!((g_big * 2.0 / g - 1.0).abs() < 1.0e-12);

        let faster = CavityParams::matched(4.0 * cav.omega_c, cav.kappa_c)
            .unwrap()
            .with_mode_volume(2.0e-7)
            .unwrap();
        let g_fast = single_spin_coupling_estimate(BOHR_MAGNETON, &faster, &consts).unwrap();
        assert!((g_fast / (2.0 * g) - 1.0).abs() < 1.0e-12);

        let plain = CavityParams::matched(cav.omega_c, cav.kappa_c).unwrap();
        assert!(single_spin_coupling_estimate(BOHR_MAGNETON, &plain, &consts).is_err());
    }

    #[test]
    fn polarized_count_reproduces_reported_populations() {
        let consts = PhysicalConstants::DEFAULT;
        let n = polarized_spin_count(1.0e18, 9.8e9, 300.0, &consts);
        assert!((n / 7.8e14 - 1.0).abs() < 0.01, "N = {n:e}");
        let n = polarized_spin_count(2.4e19, 9.8e9, 300.0, &consts);
        assert!((n / 1.9e16 - 1.0).abs() < 0.01, "N = {n:e}");
        // Polarization scales as 1/T.
        let hot = polarized_spin_count(1.0e18, 9.8e9, 600.0, &consts);
        assert!((hot * 2.0 / polarized_spin_count(1.0e18, 9.8e9, 300.0, &consts) - 1.0).abs()
            < 1.0e-12);
    }

    #[test]
    fn cooperativity_matches_reported_figures() {
        let c = cooperativity(mhz_to_rad_s(0.71), mhz_to_rad_s(5.4), mhz_to_rad_s(0.14));
        assert!((c - 0.333).abs() < 1.0e-3);
        let c = cooperativity(mhz_to_rad_s(2.0), mhz_to_rad_s(0.73), mhz_to_rad_s(3.5));
        assert!((c - 0.783).abs() < 1.0e-3);
        assert_eq!(cooperativity(0.0, 1.0, 1.0), 0.0);
    }
}
