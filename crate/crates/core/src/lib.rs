//! Simulation and parameter estimation for a microwave cavity coupled to an
//! electron spin ensemble.
//!
//! The crate models the reflection spectrum of a single cavity mode whose
//! field couples collectively to a spin ensemble tuned through resonance by
//! a static magnetic field. From the weak-coupling side it provides the
//! dispersive frequency pull and linewidth broadening of the cavity dip;
//! from the strong-coupling side, the two normal-mode branches of the
//! avoided crossing. In between sits the question the [`splitting`] module
//! answers numerically: at which coupling does the single reflection dip
//! split in two?
//!
//! The [`fits`] module inverts each of these signatures, recovering the
//! collective coupling and the spin and cavity rates from dip tracks,
//! linewidth profiles, or entire reflection maps, plus the single-spin
//! coupling from how the collective value scales with polarized spin count
//! and how it varies along the cavity axis.
//!
//! Internally everything is SI: angular frequencies and rates in rad/s,
//! fields in tesla. The [`units`] module holds the conversions at the
//! boundary (MHz, gauss, dB).

pub mod constants;
pub mod error;
pub mod fits;
pub mod model;
pub mod nlls;
mod numeric;
pub mod params;
pub mod spectrum;
pub mod splitting;
pub mod track;
pub mod units;

pub use error::{Error, Result};
pub use fits::{
    average_coupling_over_length, fit_dispersive_track, fit_dispersive_track_with,
    fit_full_s11_map, fit_full_s11_map_with, fit_kappa_lorentzian, fit_kappa_lorentzian_with,
    fit_position_sinusoid, fit_rabi_branches, fit_rabi_branches_with, mean_coupling_over_length,
    sqrt_n_regression, CouplingVsN, MapFitSetup, ParamSetup, PositionProfile, SinusoidParams,
};
pub use nlls::{
    nlls_solve, CurveModel, FitResult, FittedParam, LmOptions, ParamScale, ParamSpec,
    ResidualModel,
};
pub use params::{CavityParams, DerivedQuantities, Regime, SpinEnsembleParams};
pub use spectrum::{simulate_map, PowerScale, SpectrumMap};
pub use splitting::{
    asymptotic_threshold_ratio, count_minima_on_resonance, exact_splitting_condition,
    merge_point_scan, SplittingVerdict,
};
pub use track::{
    extract_dip_track, extract_linewidth_profile, Branch, DipTrack, ExpectedBranches,
    LinewidthProfile,
};

/// Crate version, recorded by downstream tools in their run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
