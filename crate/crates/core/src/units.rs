//! Unit conversions between the crate's internal units and lab conventions.
//!
//! Internally everything is angular frequency in rad/s and magnetic field in
//! tesla. Instrument-facing values are ordinary frequency in MHz, field in
//! gauss, and power in dB. These helpers are the only place the factors of
//! 2pi, 1e6, and 1e-4 live.

use std::f64::consts::PI;

/// Linear powers at or below this map to the dB floor instead of -inf.
pub const DB_FLOOR_LINEAR: f64 = 1.0e-30;

/// dB value assigned to powers at or below [`DB_FLOOR_LINEAR`].
pub const DB_FLOOR: f64 = -300.0;

/// Ordinary frequency in MHz to angular frequency in rad/s.
#[inline]
pub fn mhz_to_rad_s(f_mhz: f64) -> f64 {
    2.0 * PI * 1.0e6 * f_mhz
}

/// Angular frequency in rad/s to ordinary frequency in MHz.
#[inline]
pub fn rad_s_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1.0e6)
}

/// Magnetic field in gauss to tesla.
#[inline]
pub fn gauss_to_tesla(b_g: f64) -> f64 {
    b_g * 1.0e-4
}

/// Magnetic field in tesla to gauss.
#[inline]
pub fn tesla_to_gauss(b_t: f64) -> f64 {
    b_t * 1.0e4
}

/// Field-to-frequency slope in MHz/G to rad/(s T).
#[inline]
pub fn mhz_per_gauss_to_si(slope_mhz_per_g: f64) -> f64 {
    2.0 * PI * 1.0e6 * slope_mhz_per_g / 1.0e-4
}

/// Field-to-frequency slope in rad/(s T) to MHz/G.
#[inline]
pub fn si_to_mhz_per_gauss(slope_si: f64) -> f64 {
    slope_si * 1.0e-4 / (2.0 * PI * 1.0e6)
}

/// Linear power ratio to dB, clamped at the floor so zeros stay finite.
#[inline]
pub fn linear_to_db(p: f64) -> f64 {
    if p <= DB_FLOOR_LINEAR {
        DB_FLOOR
    } else {
        10.0 * p.log10()
    }
}

/// dB to linear power ratio.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10.0_f64.powf(db / 10.0)
}
