//! Physical constants.
//!
//! `h` and `k_B` are the exact values of the 2019 SI redefinition; `mu_0` and
//! `mu_B` follow CODATA 2018. `HBAR` is derived as h/2pi rather than typed in
//! as the rounded decimal, which keeps the pair consistent to machine
//! precision (the published truncation differs from h/2pi by 6e-10 relative).

use std::f64::consts::PI;

/// Planck constant, J s (exact).
pub const PLANCK_H: f64 = 6.626_070_15e-34;

/// Reduced Planck constant, J s (derived, h/2pi).
pub const HBAR: f64 = PLANCK_H / (2.0 * PI);

/// Boltzmann constant, J/K (exact).
pub const BOLTZMANN_KB: f64 = 1.380_649e-23;

/// Vacuum permeability, N/A^2.
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;

/// Default field-to-frequency slope m0/hbar, rad/(s T).
///
/// 2pi x 2.8 MHz/G, the free-electron value used when no calibration is
/// supplied. Every operation that converts field to detuning takes the slope
/// as an argument, so a different transition moment is a config change.
pub const M0_OVER_HBAR_DEFAULT: f64 = 2.0 * PI * 2.8e10;

/// The constants bundle used by every calculation in this crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Planck constant, J s.
    pub h: f64,
    /// Reduced Planck constant, J s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Vacuum permeability, N/A^2.
    pub mu_0: f64,
    /// Bohr magneton, J/T.
    pub mu_b: f64,
}

impl PhysicalConstants {
    pub const DEFAULT: Self = Self {
        h: PLANCK_H,
        hbar: HBAR,
        k_b: BOLTZMANN_KB,
        mu_0: MU_0,
        mu_b: BOHR_MAGNETON,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::DEFAULT
    }
}
