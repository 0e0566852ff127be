//! Parameter bundles for the cavity, the spin ensemble, and quantities
//! derived from the pair.

use std::fmt;

use crate::error::{Error, Result};
use crate::model;

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite { name, value });
    }
    if value <= 0.0 {
        return Err(Error::NonPositive { name, value });
    }
    Ok(())
}

fn check_non_negative(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite { name, value });
    }
    if value < 0.0 {
        return Err(Error::NonPositive { name, value });
    }
    Ok(())
}

/// Microwave cavity mode: resonance, internal half-width, external coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Resonance angular frequency, rad/s.
    pub omega_c: f64,
    /// Internal half-width, rad/s.
    pub kappa_c: f64,
    /// External loss rate to the measurement line, rad/s.
    pub kappa_e: f64,
    /// Mode volume in m^3; only the single-spin coupling estimate needs it.
    pub mode_volume: Option<f64>,
}

impl CavityParams {
    /// Cavity with an explicit external coupling rate.
    pub fn new(omega_c: f64, kappa_c: f64, kappa_e: f64) -> Result<Self> {
        let cav = Self {
            omega_c,
            kappa_c,
            kappa_e,
            mode_volume: None,
        };
        cav.validate()?;
        Ok(cav)
    }

    /// Critically coupled cavity: kappa_e = kappa_c.
    pub fn matched(omega_c: f64, kappa_c: f64) -> Result<Self> {
        Self::new(omega_c, kappa_c, kappa_c)
    }

    /// Attaches a mode volume (m^3) for coupling estimates.
    pub fn with_mode_volume(mut self, volume: f64) -> Result<Self> {
        check_positive("mode_volume", volume)?;
        self.mode_volume = Some(volume);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("omega_c", self.omega_c)?;
        check_positive("kappa_c", self.kappa_c)?;
        check_non_negative("kappa_e", self.kappa_e)?;
        if let Some(v) = self.mode_volume {
            check_positive("mode_volume", v)?;
        }
        Ok(())
    }
}

/// Spin ensemble: linewidth, resonance field, conversion slope, and the
/// single-spin coupling together with the polarized population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinEnsembleParams {
    /// Half-width of the spin line, rad/s.
    pub gamma_s: f64,
    /// Resonance field, tesla.
    pub resonance_field: f64,
    /// Field-to-angular-frequency conversion, rad/(s T).
    pub m0_over_hbar: f64,
    /// Single-spin coupling, rad/s.
    pub g_s: f64,
    /// Number of polarized spins (real-valued count).
    pub n_polarized: f64,
}

impl SpinEnsembleParams {
    /// Ensemble described by its single-spin coupling and population.
    pub fn new(
        gamma_s: f64,
        resonance_field: f64,
        m0_over_hbar: f64,
        g_s: f64,
        n_polarized: f64,
    ) -> Result<Self> {
        let spins = Self {
            gamma_s,
            resonance_field,
            m0_over_hbar,
            g_s,
            n_polarized,
        };
        spins.validate()?;
        Ok(spins)
    }

    /// Ensemble described directly by its collective coupling; stores the
    /// coupling as a single effective spin so that `collective_coupling`
    /// returns exactly `g_c`.
    pub fn with_collective_coupling(
        gamma_s: f64,
        resonance_field: f64,
        m0_over_hbar: f64,
        g_c: f64,
    ) -> Result<Self> {
        Self::new(gamma_s, resonance_field, m0_over_hbar, g_c, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("gamma_s", self.gamma_s)?;
        if !self.resonance_field.is_finite() {
            return Err(Error::NonFinite {
                name: "resonance_field",
                value: self.resonance_field,
            });
        }
        check_positive("m0_over_hbar", self.m0_over_hbar)?;
        check_non_negative("g_s", self.g_s)?;
        check_non_negative("n_polarized", self.n_polarized)?;
        Ok(())
    }

    /// Collective coupling g_s * sqrt(N), rad/s.
    pub fn collective_coupling(&self) -> f64 {
        model::collective_coupling(self.g_s, self.n_polarized)
    }
}

/// Coupling regime relative to the two loss channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Coupling exceeds both kappa_c and gamma_s.
    Strong,
    /// Coupling exceeds one loss rate but not the other.
    Intermediate,
    /// Coupling below both loss rates.
    Weak,
}

impl Regime {
    /// Places a coupling relative to the two loss rates. Ties count as not
    /// exceeding, so g_c = 0 is always weak.
    pub fn classify(g_c: f64, kappa_c: f64, gamma_s: f64) -> Self {
        let beats_cavity = g_c > kappa_c;
        let beats_spins = g_c > gamma_s;
        match (beats_cavity, beats_spins) {
            (true, true) => Regime::Strong,
            (false, false) => Regime::Weak,
            _ => Regime::Intermediate,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            Regime::Strong => "strong",
            Regime::Intermediate => "intermediate",
            Regime::Weak => "weak",
        };
        f.write_str(label)
    }
}

/// Quantities computed from a cavity/ensemble pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    /// Collective coupling, rad/s.
    pub g_c: f64,
    /// Cooperativity g_c^2 / (2 kappa_c gamma_s).
    pub cooperativity: f64,
    /// Coupling regime label.
    pub regime: Regime,
}

impl DerivedQuantities {
    pub fn from_params(cav: &CavityParams, spins: &SpinEnsembleParams) -> Self {
        let g_c = spins.collective_coupling();
        Self {
            g_c,
            cooperativity: model::cooperativity(g_c, cav.kappa_c, spins.gamma_s),
            regime: Regime::classify(g_c, cav.kappa_c, spins.gamma_s),
        }
    }
}
