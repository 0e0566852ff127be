//! Normal-mode splitting analysis: counts reflection minima on resonance,
//! evaluates the closed-form splitting criterion, and locates the coupling
//! where two dips merge into one.

use crate::error::{Error, Result};
use crate::model;
use crate::numeric::golden_section_min;
use crate::params::{CavityParams, Regime};

/// Local minima shallower than this (linear power, against the surrounding
/// maxima) are numerical flatness, not dips.
const DEPTH_SIGNIFICANCE: f64 = 1.0e-12;

/// Outcome of on-resonance minima counting for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplittingVerdict {
    /// Number of significant reflection minima (1 or 2).
    pub minima_count: usize,
    /// Refined dip frequencies, rad/s, ascending.
    pub dip_frequencies: Vec<f64>,
    /// Dip depths 1 - |S11|^2, matching `dip_frequencies`.
    pub dip_depths: Vec<f64>,
    /// Closed-form splitting criterion evaluated at the same parameters.
    pub exact_condition_holds: bool,
    /// Cooperativity g_c^2 / (2 kappa_c gamma_s).
    pub cooperativity: f64,
    /// Coupling regime label.
    pub regime: Regime,
}

/// Counts the reflection minima at zero spin detuning.
///
/// The counting always evaluates the critically coupled response
/// (kappa_e = kappa_c): an impedance mismatch adds a reflection floor that
/// rescales contrast without changing the normal-mode content, and at
/// floor-level contrast a fixed depth cut would count mismatch artifacts
/// instead of dips. `window` is the half-width of the scanned interval about
/// the cavity frequency; `resolution` the coarse grid step, both rad/s. Each
/// grid minimum is refined by golden-section search on both flanking
/// sub-intervals, so a dip pair hiding inside one grid cell is still found,
/// then near-coincident candidates merge and sub-significance dips are
/// dropped.
pub fn count_minima_on_resonance(
    cav: &CavityParams,
    g_c: f64,
    gamma_s: f64,
    window: f64,
    resolution: f64,
) -> Result<SplittingVerdict> {
    cav.validate()?;
    if !g_c.is_finite() || g_c < 0.0 {
        return Err(Error::NonPositive {
            name: "g_c",
            value: g_c,
        });
    }
    if !(gamma_s > 0.0) || !gamma_s.is_finite() {
        return Err(Error::NonPositive {
            name: "gamma_s",
            value: gamma_s,
        });
    }
    let required_window = 10.0 * g_c.max(cav.kappa_c).max(gamma_s);
    if !(window >= required_window) {
        return Err(Error::WindowTooNarrow {
            window,
            required: required_window,
        });
    }
    // The coarse grid must resolve every rate in play; a zero coupling adds
    // no spectral feature of its own, so it does not constrain the step.
    let narrowest = if g_c > 0.0 {
        g_c.min(cav.kappa_c).min(gamma_s)
    } else {
        cav.kappa_c.min(gamma_s)
    };
    let required_resolution = narrowest / 50.0;
    if !(resolution > 0.0) || !(resolution <= required_resolution) {
        return Err(Error::ResolutionTooCoarse {
            resolution,
            required: required_resolution,
        });
    }

    let response = |x: f64| model::matched_reflection_power(x, cav.kappa_c, g_c, gamma_s);

    // Coarse scan on a centered grid.
    let n = ((2.0 * window / resolution).ceil() as usize).max(8) + 1;
    let step = 2.0 * window / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|k| -window + step * k as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| response(x)).collect();

    // Interior grid minima; non-strict on one side tolerates exact ties.
    let mut rough = Vec::new();
    for k in 1..n - 1 {
        let down = ys[k] <= ys[k - 1] && ys[k] <= ys[k + 1];
        let strict = ys[k] < ys[k - 1] || ys[k] < ys[k + 1];
        if down && strict {
            rough.push(k);
        }
    }
    if rough.is_empty() {
        // The response always dips somewhere inside the window; fall back to
        // the grid argmin so refinement has a seed.
        let (k, _) = ys
            .iter()
            .enumerate()
            .skip(1)
            .take(n - 2)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("grid has interior points");
        rough.push(k);
    }

    // Refine on both flanks of each rough minimum: a sub-grid dip pair puts
    // one true minimum on each side of the sampled point.
    let tol = (1.0e-10 * cav.omega_c).max(1.0e-15 * window);
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for &k in &rough {
        for (a, b) in [(xs[k - 1], xs[k]), (xs[k], xs[k + 1])] {
            candidates.push(golden_section_min(response, a, b, tol));
        }
    }
    candidates.sort_by(|p, q| p.0.total_cmp(&q.0));

    // Merge near-coincident refinements, keeping the deeper of each pair.
    let merge_tol = resolution.max(1.0e-9 * cav.omega_c);
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for cand in candidates {
        match merged.last_mut() {
            Some(last) if cand.0 - last.0 < merge_tol => {
                if cand.1 < last.1 {
                    *last = cand;
                }
            }
            _ => merged.push(cand),
        }
    }

    // Prominence against the separating maxima: grid values between
    // neighboring candidates, the window edges outside, and the evaluated
    // midpoint when no grid point falls in between.
    let grid_max_between = |lo: f64, hi: f64| -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (x, y) in xs.iter().zip(ys.iter()) {
            if *x > lo && *x < hi {
                best = best.max(*y);
            }
        }
        best.max(response(0.5 * (lo + hi)))
    };
    let mut separators = Vec::with_capacity(merged.len() + 1);
    separators.push(grid_max_between(-window - step, merged[0].0));
    for pair in merged.windows(2) {
        separators.push(grid_max_between(pair[0].0, pair[1].0));
    }
    separators.push(grid_max_between(merged.last().unwrap().0, window + step));

    let deepest = merged
        .iter()
        .map(|c| c.1)
        .fold(f64::INFINITY, f64::min);
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for (i, cand) in merged.iter().enumerate() {
        let prominence = separators[i].min(separators[i + 1]) - cand.1;
        if prominence >= DEPTH_SIGNIFICANCE || cand.1 == deepest {
            kept.push(*cand);
        }
    }

    let cooperativity = model::cooperativity(g_c, cav.kappa_c, gamma_s);
    Ok(SplittingVerdict {
        minima_count: kept.len(),
        dip_frequencies: kept.iter().map(|c| cav.omega_c + c.0).collect(),
        dip_depths: kept.iter().map(|c| 1.0 - c.1).collect(),
        exact_condition_holds: exact_splitting_condition(g_c, gamma_s, cooperativity),
        cooperativity,
        regime: Regime::classify(g_c, cav.kappa_c, gamma_s),
    })
}

/// Closed-form two-minima criterion:
/// g_c^4 - gamma_s^2 (1 + 4C)(gamma_s^2 - 2 g_c^2) > 0, stated for a
/// near-critically coupled cavity. Evaluated in x = (g_c/gamma_s)^2 as
/// x^2 - (1 + 4C)(1 - 2x) > 0, which stays well conditioned when the rates
/// span many orders of magnitude.
pub fn exact_splitting_condition(g_c: f64, gamma_s: f64, cooperativity: f64) -> bool {
    let x = (g_c / gamma_s) * (g_c / gamma_s);
    x * x - (1.0 + 4.0 * cooperativity) * (1.0 - 2.0 * x) > 0.0
}

/// The splitting threshold g_c/gamma_s in the cavity-dominated limit:
/// sqrt(sqrt(2) - 1) = 0.643594...
pub fn asymptotic_threshold_ratio() -> f64 {
    (std::f64::consts::SQRT_2 - 1.0).sqrt()
}

/// Locates the coupling where the on-resonance dip count flips from one to
/// two, to 1e-4 relative accuracy.
///
/// A linear scan with `steps` intervals brackets the flip, then bisection
/// tightens it; the count is monotone in the coupling, so the first flip is
/// the only one. Scan window and grid step are derived from the parameter
/// scales so every count call satisfies its own preconditions.
pub fn merge_point_scan(
    cav: &CavityParams,
    gamma_s: f64,
    g_lo: f64,
    g_hi: f64,
    steps: usize,
) -> Result<f64> {
    if !(g_lo > 0.0) || !g_lo.is_finite() {
        return Err(Error::NonPositive {
            name: "g_lo",
            value: g_lo,
        });
    }
    if !(g_hi > g_lo) || !g_hi.is_finite() {
        return Err(Error::NonPositive {
            name: "g_hi - g_lo",
            value: g_hi - g_lo,
        });
    }
    if steps < 16 {
        return Err(Error::TooFewPoints {
            operation: "merge_point_scan",
            required: 16,
            actual: steps,
        });
    }
    let window = 12.0 * cav.kappa_c.max(gamma_s).max(g_hi);
    let resolution = g_lo.min(cav.kappa_c).min(gamma_s) / 64.0;
    let count = |g: f64| -> Result<usize> {
        Ok(count_minima_on_resonance(cav, g, gamma_s, window, resolution)?.minima_count)
    };

    let at_lo = count(g_lo)?;
    let at_hi = count(g_hi)?;
    if at_lo != 1 || at_hi != 2 {
        return Err(Error::NoTransition {
            g_lo,
            g_hi,
            detail: format!("{at_lo} minima at the low end, {at_hi} at the high end"),
        });
    }

    // Bracket the flip on the linear scan grid.
    let span = (g_hi - g_lo) / steps as f64;
    let mut lo = g_lo;
    let mut hi = g_hi;
    for k in 1..=steps {
        let g = g_lo + span * k as f64;
        if count(g)? == 2 {
            hi = g;
            lo = g - span;
            break;
        }
    }

    while hi - lo > 1.0e-4 * 0.5 * (hi + lo) {
        let mid = 0.5 * (lo + hi);
        if count(mid)? == 2 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Coupling regime relative to the two loss rates.
pub fn classify_regime(g_c: f64, kappa_c: f64, gamma_s: f64) -> Regime {
    Regime::classify(g_c, kappa_c, gamma_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz_to_rad_s;

    fn narrow_spin_cavity() -> CavityParams {
        // Broad cavity, narrow spin line: the regime where the asymptotic
        // threshold applies.
        CavityParams::new(
            mhz_to_rad_s(9800.0),
            mhz_to_rad_s(5.4),
            0.99 * mhz_to_rad_s(5.4),
        )
        .unwrap()
    }

    fn scan(cav: &CavityParams, g_c: f64, gamma_s: f64) -> SplittingVerdict {
        let window = 10.0 * g_c.max(cav.kappa_c).max(gamma_s);
        let narrowest = if g_c > 0.0 {
            g_c.min(cav.kappa_c).min(gamma_s)
        } else {
            cav.kappa_c.min(gamma_s)
        };
        count_minima_on_resonance(cav, g_c, gamma_s, window, narrowest / 50.0).unwrap()
    }

    #[test]
    fn threshold_constant_value_and_identity() {
        let v = asymptotic_threshold_ratio();
        assert!(v > 0.6435 && v < 0.6437);
        // (v^2 + 1)^2 = 2 is the defining identity.
        assert!(((v * v + 1.0).powi(2) - 2.0).abs() < 1.0e-14);
    }

    #[test]
    fn exact_condition_always_holds_at_unit_ratio() {
        for c in [0.0, 0.1, 1.0, 50.0] {
            assert!(exact_splitting_condition(1.0, 1.0, c));
        }
    }

    #[test]
    fn exact_condition_reduces_to_quadratic_root_at_zero_cooperativity() {
        let threshold = asymptotic_threshold_ratio();
        let gamma = mhz_to_rad_s(0.14);
        assert!(exact_splitting_condition(gamma * (threshold + 1.0e-6), gamma, 0.0));
        assert!(!exact_splitting_condition(gamma * (threshold - 1.0e-6), gamma, 0.0));
    }

    #[test]
    fn uncoupled_cavity_has_one_full_depth_dip_at_center() {
        let cav = narrow_spin_cavity();
        let verdict = scan(&cav, 0.0, mhz_to_rad_s(0.14));
        assert_eq!(verdict.minima_count, 1);
        assert!((verdict.dip_frequencies[0] - cav.omega_c).abs() <= 1.0e-9 * cav.omega_c);
        assert!(verdict.dip_depths[0] > 1.0 - 1.0e-9);
        assert!(!verdict.exact_condition_holds);
    }

    #[test]
    fn observed_couplings_split_and_merge_as_reported() {
        let cav = narrow_spin_cavity();
        let gamma = mhz_to_rad_s(0.14);
        let split = scan(&cav, mhz_to_rad_s(0.14), gamma);
        assert_eq!(split.minima_count, 2);
        let merged = scan(&cav, mhz_to_rad_s(0.085), gamma);
        assert_eq!(merged.minima_count, 1);
    }

    #[test]
    fn split_dips_sit_symmetrically_about_the_cavity() {
        let cav = narrow_spin_cavity();
        let verdict = scan(&cav, mhz_to_rad_s(0.71), mhz_to_rad_s(0.14));
        assert_eq!(verdict.minima_count, 2);
        let center = 0.5 * (verdict.dip_frequencies[0] + verdict.dip_frequencies[1]);
        assert!((center - cav.omega_c).abs() < 1.0e-6 * cav.kappa_c);
    }

    #[test]
    fn window_and_resolution_preconditions_are_enforced() {
        let cav = narrow_spin_cavity();
        let gamma = mhz_to_rad_s(0.14);
        let g = mhz_to_rad_s(0.71);
        let err = count_minima_on_resonance(&cav, g, gamma, mhz_to_rad_s(10.0), gamma / 100.0);
        assert!(matches!(err, Err(Error::WindowTooNarrow { .. })));
        let err = count_minima_on_resonance(&cav, g, gamma, mhz_to_rad_s(60.0), gamma);
        assert!(matches!(err, Err(Error::ResolutionTooCoarse { .. })));
    }

    #[test]
    fn merge_scan_demands_a_transition_and_enough_steps() {
        let cav = narrow_spin_cavity();
        let gamma = mhz_to_rad_s(0.14);
        let err = merge_point_scan(&cav, gamma, mhz_to_rad_s(0.02), mhz_to_rad_s(0.05), 16);
        assert!(matches!(err, Err(Error::NoTransition { .. })));
        let err = merge_point_scan(&cav, gamma, mhz_to_rad_s(0.05), mhz_to_rad_s(0.14), 8);
        assert!(matches!(err, Err(Error::TooFewPoints { .. })));
    }
}
