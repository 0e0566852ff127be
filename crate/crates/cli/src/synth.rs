//! Synthetic measurement noise and the truth sidecar that records which
//! parameters generated a simulated map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rabifit::units::{rad_s_to_mhz, si_to_mhz_per_gauss, tesla_to_gauss};
use rabifit::{CavityParams, SpectrumMap, SpinEnsembleParams};

use crate::config::{NoiseModel, ResolvedNoise};
use crate::{CliError, Result};

/// Returns a copy of a linear-power map with measurement noise applied.
/// Additive noise perturbs each pixel by N(0, sigma); multiplicative noise
/// scales it by (1 + N(0, sigma)). Either way the result clips at zero so
/// it stays a valid linear power. Pixels stream row-major from a counter
/// RNG, so one seed fixes every sample regardless of map shape.
pub fn apply_noise(map: &SpectrumMap, noise: &ResolvedNoise) -> Result<SpectrumMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.sigma)
        .map_err(|e| CliError::Config(format!("[noise] sigma {}: {e}", noise.sigma)))?;
    let mut noisy = map.clone();
    for i in 0..map.n_fields() {
        for j in 0..map.n_frequencies() {
            let eps = normal.sample(&mut rng);
            let p = map.power[(i, j)];
            let sample = match noise.model {
                NoiseModel::Additive => p + eps,
                NoiseModel::Multiplicative => p * (1.0 + eps),
            };
            noisy.power[(i, j)] = sample.max(0.0);
        }
    }
    Ok(noisy)
}

/// Serializes the generating parameters of a simulated map, in the same
/// bench units the config uses, so a fit on the synthetic data can be
/// scored against its truth without re-reading the config.
pub fn truth_json(
    cav: &CavityParams,
    spins: &SpinEnsembleParams,
    noise: Option<&ResolvedNoise>,
) -> serde_json::Value {
    let noise_value = match noise {
        Some(n) => serde_json::json!({
            "model": n.model.name(),
            "sigma": n.sigma,
            "seed": n.seed,
        }),
        None => serde_json::Value::Null,
    };
    serde_json::json!({
        "omega_c_mhz": rad_s_to_mhz(cav.omega_c),
        "kappa_c_mhz": rad_s_to_mhz(cav.kappa_c),
        "kappa_e_mhz": rad_s_to_mhz(cav.kappa_e),
        "g_c_mhz": rad_s_to_mhz(spins.collective_coupling()),
        "gamma_s_mhz": rad_s_to_mhz(spins.gamma_s),
        "b_r_gauss": tesla_to_gauss(spins.resonance_field),
        "slope_mhz_per_gauss": si_to_mhz_per_gauss(spins.m0_over_hbar),
        "noise": noise_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rabifit::units::{gauss_to_tesla, mhz_to_rad_s};
    use rabifit::PowerScale;

    fn flat_map() -> SpectrumMap {
        let field = vec![gauss_to_tesla(1.0), gauss_to_tesla(2.0)];
        let freq = vec![mhz_to_rad_s(10.0), mhz_to_rad_s(20.0), mhz_to_rad_s(30.0)];
        SpectrumMap::new(
            field,
            freq,
            DMatrix::from_element(2, 3, 0.5),
            PowerScale::Linear,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_reproduces_identical_noise() {
        let map = flat_map();
        let noise = ResolvedNoise {
            model: NoiseModel::Additive,
            sigma: 0.05,
            seed: 42,
        };
        let a = apply_noise(&map, &noise).unwrap();
        let b = apply_noise(&map, &noise).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, map);
    }

    #[test]
    fn noise_keeps_linear_power_non_negative() {
        let map = flat_map();
        let noise = ResolvedNoise {
            model: NoiseModel::Additive,
            sigma: 5.0,
            seed: 7,
        };
        let noisy = apply_noise(&map, &noise).unwrap();
        assert!(noisy.power.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn multiplicative_noise_scales_pixels() {
        let map = flat_map();
        let noise = ResolvedNoise {
            model: NoiseModel::Multiplicative,
            sigma: 0.01,
            seed: 3,
        };
        let noisy = apply_noise(&map, &noise).unwrap();
        for (a, b) in noisy.power.iter().zip(map.power.iter()) {
            assert!((a / b - 1.0).abs() < 0.1);
        }
    }
}
