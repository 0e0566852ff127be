//! Run configuration: a flat TOML file with one section per concern. All
//! quantities enter in bench units (MHz for rates and frequencies "/2pi",
//! gauss for fields, mm for positions) and are converted to the library's
//! internal rad/s and tesla here, at the boundary, so nothing downstream
//! ever sees a mixed-unit value.
//!
//! Unknown keys are rejected rather than ignored: a typo in a parameter
//! name must fail loudly, not silently fall back to a default.

use std::path::Path;

use rabifit::units::{gauss_to_tesla, mhz_per_gauss_to_si, mhz_to_rad_s};
use rabifit::{CavityParams, ParamSetup, SpinEnsembleParams};
use serde::Deserialize;

use crate::{CliError, Result};

/// Conversion slope used when the config does not state one, MHz per gauss.
pub const DEFAULT_SLOPE_MHZ_PER_GAUSS: f64 = 2.8;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional record of which command this config is meant for. The
    /// subcommand on the command line is authoritative; a mismatch is a
    /// config error rather than a silent reinterpretation.
    pub command: Option<String>,
    pub cavity: Option<CavitySection>,
    pub spins: Option<SpinsSection>,
    pub grid: Option<GridSection>,
    pub noise: Option<NoiseSection>,
    pub io: Option<IoSection>,
    pub fit: Option<FitSection>,
    pub scan: Option<ScanSection>,
    pub nscale: Option<NscaleSection>,
    pub position: Option<PositionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub omega_c_mhz: f64,
    pub kappa_c_mhz: f64,
    /// External-coupling rate as a fraction of `kappa_c_mhz`. Exactly one
    /// of this and `kappa_e_mhz` may appear; neither means matched.
    pub kappa_e_ratio: Option<f64>,
    pub kappa_e_mhz: Option<f64>,
    pub mode_volume_m3: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinsSection {
    pub gamma_s_mhz: f64,
    pub b_r_gauss: f64,
    pub slope_mhz_per_gauss: Option<f64>,
    /// Collective coupling directly, or `g_s_hz` with `n_polarized`.
    pub g_c_mhz: Option<f64>,
    pub g_s_hz: Option<f64>,
    pub n_polarized: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub field_start_gauss: f64,
    pub field_stop_gauss: f64,
    pub field_points: usize,
    pub freq_start_mhz: f64,
    pub freq_stop_mhz: f64,
    pub freq_points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// "additive" adds N(0, sigma) to each linear power and clips at zero;
    /// "multiplicative" scales each pixel by (1 + N(0, sigma)).
    pub model: Option<String>,
    pub sigma: f64,
    /// Required whenever sigma > 0 unless `--seed` is given on the command
    /// line; without a recorded seed the run would not be reproducible.
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Input spectrum CSV for the fit commands.
    pub input: Option<String>,
    /// Power scale written by `simulate`: "linear" (default) or "db".
    pub scale: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub slope_mhz_per_gauss: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Per-parameter overrides for `fit-map`.
    pub params: Option<MapParamsSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapParamsSection {
    pub g_c: Option<ParamSection>,
    pub gamma_s: Option<ParamSection>,
    pub kappa_c: Option<ParamSection>,
    pub kappa_e: Option<ParamSection>,
    pub omega_c: Option<ParamSection>,
    pub b_r: Option<ParamSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSection {
    pub initial_mhz: Option<f64>,
    /// Only `b_r` is a field; the other five parameters are rates.
    pub initial_gauss: Option<f64>,
    #[serde(default)]
    pub frozen: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub kappa_c_mhz: f64,
    pub kappa_e_ratio: Option<f64>,
    pub gamma_s_mhz: f64,
    pub g_lo_mhz: f64,
    pub g_hi_mhz: f64,
    pub steps: Option<usize>,
    pub omega_c_mhz: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NscaleSection {
    pub n: Vec<f64>,
    pub g_c_mhz: Vec<f64>,
    pub weight: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSection {
    pub position_mm: Vec<f64>,
    pub g_c_mhz: Vec<f64>,
    /// Sample length for the rms and mean averages; omitting it skips the
    /// averaged rows in the report.
    pub average_length_mm: Option<f64>,
    /// Center of the averaging window; defaults to the fitted antinode.
    pub center_mm: Option<f64>,
}

impl RunConfig {
    /// Reads and parses the file; raw bytes are returned as well so the
    /// manifest can hash exactly what was read.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((config, bytes))
    }

    pub fn cavity(&self) -> Result<&CavitySection> {
        self.cavity
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [cavity] section".into()))
    }

    pub fn spins(&self) -> Result<&SpinsSection> {
        self.spins
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [spins] section".into()))
    }

    pub fn grid(&self) -> Result<&GridSection> {
        self.grid
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [grid] section".into()))
    }

    pub fn scan(&self) -> Result<&ScanSection> {
        self.scan
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [scan] section".into()))
    }

    pub fn nscale(&self) -> Result<&NscaleSection> {
        self.nscale
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [nscale] section".into()))
    }

    pub fn position(&self) -> Result<&PositionSection> {
        self.position
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [position] section".into()))
    }

    /// Input path for the fit commands.
    pub fn input(&self) -> Result<&str> {
        self.io
            .as_ref()
            .and_then(|io| io.input.as_deref())
            .ok_or_else(|| CliError::Config("missing [io] input = \"...\" entry".into()))
    }

    /// Field-to-frequency slope for the fit commands, rad/s per tesla.
    /// `[fit]` wins over `[spins]`; absent both, the electron-spin default.
    pub fn fit_slope_si(&self) -> f64 {
        let mhz_per_g = self
            .fit
            .as_ref()
            .and_then(|f| f.slope_mhz_per_gauss)
            .or_else(|| self.spins.as_ref().and_then(|s| s.slope_mhz_per_gauss))
            .unwrap_or(DEFAULT_SLOPE_MHZ_PER_GAUSS);
        mhz_per_gauss_to_si(mhz_per_g)
    }

    /// Solver settings honoring `[fit] max_iterations`.
    pub fn lm_options(&self) -> rabifit::LmOptions {
        let mut options = rabifit::LmOptions::default();
        if let Some(n) = self.fit.as_ref().and_then(|f| f.max_iterations) {
            options.max_iterations = n;
        }
        options
    }

    /// Noise model resolved against a command-line seed override. Returns
    /// `None` when no noise is configured or sigma is zero.
    pub fn noise(&self, seed_override: Option<u64>) -> Result<Option<ResolvedNoise>> {
        let Some(section) = &self.noise else {
            return Ok(None);
        };
        if !(section.sigma >= 0.0) || !section.sigma.is_finite() {
            return Err(CliError::Config(format!(
                "[noise] sigma must be finite and non-negative, got {}",
                section.sigma
            )));
        }
        if section.sigma == 0.0 {
            return Ok(None);
        }
        let model = match section.model.as_deref().unwrap_or("additive") {
            "additive" => NoiseModel::Additive,
            "multiplicative" => NoiseModel::Multiplicative,
            other => {
                return Err(CliError::Config(format!(
                    "[noise] model must be \"additive\" or \"multiplicative\", got \"{other}\""
                )))
            }
        };
        let Some(seed) = seed_override.or(section.seed) else {
            return Err(CliError::Config(
                "[noise] sigma > 0 needs a seed (config key or --seed)".into(),
            ));
        };
        Ok(Some(ResolvedNoise {
            model,
            sigma: section.sigma,
            seed,
        }))
    }

    /// Output power scale for `simulate`.
    pub fn output_scale(&self) -> Result<rabifit::PowerScale> {
        match self.io.as_ref().and_then(|io| io.scale.as_deref()) {
            None | Some("linear") => Ok(rabifit::PowerScale::Linear),
            Some("db") => Ok(rabifit::PowerScale::Db),
            Some(other) => Err(CliError::Config(format!(
                "[io] scale must be \"linear\" or \"db\", got \"{other}\""
            ))),
        }
    }
}

/// Noise settings after defaults and the seed override are applied.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedNoise {
    pub model: NoiseModel,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    Additive,
    Multiplicative,
}

impl NoiseModel {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Additive => "additive",
            NoiseModel::Multiplicative => "multiplicative",
        }
    }
}

impl CavitySection {
    pub fn build(&self) -> Result<CavityParams> {
        let omega_c = mhz_to_rad_s(self.omega_c_mhz);
        let kappa_c = mhz_to_rad_s(self.kappa_c_mhz);
        let kappa_e = match (self.kappa_e_ratio, self.kappa_e_mhz) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "[cavity] kappa_e_ratio and kappa_e_mhz are mutually exclusive".into(),
                ))
            }
            (Some(ratio), None) => ratio * kappa_c,
            (None, Some(mhz)) => mhz_to_rad_s(mhz),
            (None, None) => kappa_c,
        };
        let cav = CavityParams::new(omega_c, kappa_c, kappa_e).map_err(CliError::config_from)?;
        match self.mode_volume_m3 {
            Some(v) => cav.with_mode_volume(v).map_err(CliError::config_from),
            None => Ok(cav),
        }
    }
}

impl SpinsSection {
    pub fn build(&self) -> Result<SpinEnsembleParams> {
        let gamma_s = mhz_to_rad_s(self.gamma_s_mhz);
        let b_r = gauss_to_tesla(self.b_r_gauss);
        let slope = mhz_per_gauss_to_si(
            self.slope_mhz_per_gauss
                .unwrap_or(DEFAULT_SLOPE_MHZ_PER_GAUSS),
        );
        match (self.g_c_mhz, self.g_s_hz, self.n_polarized) {
            (Some(g_c), None, None) => SpinEnsembleParams::with_collective_coupling(
                gamma_s,
                b_r,
                slope,
                mhz_to_rad_s(g_c),
            )
            .map_err(CliError::config_from),
            (None, Some(g_s_hz), Some(n)) => SpinEnsembleParams::new(
                gamma_s,
                b_r,
                slope,
                g_s_hz * std::f64::consts::TAU,
                n,
            )
            .map_err(CliError::config_from),
            _ => Err(CliError::Config(
                "[spins] needs either g_c_mhz or both g_s_hz and n_polarized".into(),
            )),
        }
    }
}

impl GridSection {
    /// Axes in presentation units; the conversion to internal units happens
    /// per point so the written CSV reproduces these exact values.
    pub fn axes(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        for (name, points) in [
            ("field_points", self.field_points),
            ("freq_points", self.freq_points),
        ] {
            if points < 2 {
                return Err(CliError::Config(format!(
                    "[grid] {name} must be at least 2, got {points}"
                )));
            }
        }
        if !(self.field_stop_gauss > self.field_start_gauss) {
            return Err(CliError::Config(
                "[grid] field_stop_gauss must exceed field_start_gauss".into(),
            ));
        }
        if !(self.freq_stop_mhz > self.freq_start_mhz) {
            return Err(CliError::Config(
                "[grid] freq_stop_mhz must exceed freq_start_mhz".into(),
            ));
        }
        Ok((
            rabifit::spectrum::linspace(self.field_start_gauss, self.field_stop_gauss, self.field_points),
            rabifit::spectrum::linspace(self.freq_start_mhz, self.freq_stop_mhz, self.freq_points),
        ))
    }
}

impl ParamSection {
    /// Rate-valued map-fit parameter (everything except `b_r`).
    pub fn setup_rate(&self, name: &str) -> Result<ParamSetup> {
        if self.initial_gauss.is_some() {
            return Err(CliError::Config(format!(
                "[fit.params.{name}] takes initial_mhz, not initial_gauss"
            )));
        }
        Ok(ParamSetup {
            initial: self.initial_mhz.map(mhz_to_rad_s),
            frozen: self.frozen,
        })
    }

    /// The resonance-field parameter.
    pub fn setup_field(&self) -> Result<ParamSetup> {
        if self.initial_mhz.is_some() {
            return Err(CliError::Config(
                "[fit.params.b_r] takes initial_gauss, not initial_mhz".into(),
            ));
        }
        Ok(ParamSetup {
            initial: self.initial_gauss.map(gauss_to_tesla),
            frozen: self.frozen,
        })
    }
}
