//! Reflection-power maps over a (magnetic field, probe frequency) grid.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model;
use crate::params::{CavityParams, SpinEnsembleParams};
use crate::units;

/// Whether map values are raw power ratios or 10 log10 of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerScale {
    Linear,
    Db,
}

/// A 2-D reflected-power map: rows follow the field axis, columns the
/// frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMap {
    /// Field axis, tesla, strictly increasing.
    pub field_axis: Vec<f64>,
    /// Probe frequency axis, rad/s, strictly increasing.
    pub frequency_axis: Vec<f64>,
    /// Power values, `field_axis.len()` x `frequency_axis.len()`.
    pub power: DMatrix<f64>,
    /// Scale of `power`.
    pub scale: PowerScale,
}

fn check_axis(name: &'static str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::EmptyAxis { name });
    }
    if let Some(&v) = axis.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { name, value: v });
    }
    for (i, w) in axis.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonMonotonicAxis { name, index: i + 1 });
        }
    }
    Ok(())
}

impl SpectrumMap {
    /// Builds a map after checking axis monotonicity, dimensions, and value
    /// ranges for the declared scale.
    pub fn new(
        field_axis: Vec<f64>,
        frequency_axis: Vec<f64>,
        power: DMatrix<f64>,
        scale: PowerScale,
    ) -> Result<Self> {
        check_axis("field_axis", &field_axis)?;
        check_axis("frequency_axis", &frequency_axis)?;
        if power.nrows() != field_axis.len() {
            return Err(Error::LengthMismatch {
                left_name: "power rows",
                left: power.nrows(),
                right_name: "field_axis",
                right: field_axis.len(),
            });
        }
        if power.ncols() != frequency_axis.len() {
            return Err(Error::LengthMismatch {
                left_name: "power columns",
                left: power.ncols(),
                right_name: "frequency_axis",
                right: frequency_axis.len(),
            });
        }
        for &v in power.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name: "power",
                    value: v,
                });
            }
            if scale == PowerScale::Linear && v < 0.0 {
                return Err(Error::NonPositive {
                    name: "linear power",
                    value: v,
                });
            }
        }
        Ok(Self {
            field_axis,
            frequency_axis,
            power,
            scale,
        })
    }

    pub fn n_fields(&self) -> usize {
        self.field_axis.len()
    }

    pub fn n_frequencies(&self) -> usize {
        self.frequency_axis.len()
    }

    /// One field row of power values.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.power.row(i).iter().copied().collect()
    }

    /// The same map in dB (identity if already dB).
    pub fn to_db(&self) -> Self {
        match self.scale {
            PowerScale::Db => self.clone(),
            PowerScale::Linear => Self {
                field_axis: self.field_axis.clone(),
                frequency_axis: self.frequency_axis.clone(),
                power: self.power.map(units::linear_to_db),
                scale: PowerScale::Db,
            },
        }
    }

    /// The same map in linear power (identity if already linear).
    pub fn to_linear(&self) -> Self {
        match self.scale {
            PowerScale::Linear => self.clone(),
            PowerScale::Db => Self {
                field_axis: self.field_axis.clone(),
                frequency_axis: self.frequency_axis.clone(),
                power: self.power.map(units::db_to_linear),
                scale: PowerScale::Linear,
            },
        }
    }
}

/// Evaluates the reflection response over the grid. Rows are independent, so
/// the result does not depend on evaluation order.
pub fn simulate_map(
    cav: &CavityParams,
    spins: &SpinEnsembleParams,
    field_axis: &[f64],
    frequency_axis: &[f64],
) -> Result<SpectrumMap> {
    cav.validate()?;
    spins.validate()?;
    check_axis("field_axis", field_axis)?;
    check_axis("frequency_axis", frequency_axis)?;
    let g_c = spins.collective_coupling();
    let mut power = DMatrix::zeros(field_axis.len(), frequency_axis.len());
    for (i, &field) in field_axis.iter().enumerate() {
        let delta = model::field_to_detuning(field, spins);
        for (j, &omega) in frequency_axis.iter().enumerate() {
            power[(i, j)] = model::reflection_power(omega, delta, cav, g_c, spins.gamma_s);
        }
    }
    SpectrumMap::new(
        field_axis.to_vec(),
        frequency_axis.to_vec(),
        power,
        PowerScale::Linear,
    )
}

/// Uniform grid from `start` to `stop` inclusive with `points` samples.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 0 {
        return Vec::new();
    }
    if points == 1 {
        return vec![start];
    }
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|k| start + step * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::M0_OVER_HBAR_DEFAULT;
    use crate::units::{gauss_to_tesla, mhz_to_rad_s};

    fn sample_pair() -> (CavityParams, SpinEnsembleParams) {
        let cav = CavityParams::new(
            mhz_to_rad_s(9800.0),
            mhz_to_rad_s(5.4),
            0.99 * mhz_to_rad_s(5.4),
        )
        .unwrap();
        let spins = SpinEnsembleParams::with_collective_coupling(
            mhz_to_rad_s(0.14),
            gauss_to_tesla(3469.0),
            M0_OVER_HBAR_DEFAULT,
            mhz_to_rad_s(0.71),
        )
        .unwrap();
        (cav, spins)
    }

    #[test]
    fn single_cell_map_equals_direct_evaluation() {
        let (cav, spins) = sample_pair();
        let field = gauss_to_tesla(3469.3);
        let omega = mhz_to_rad_s(9801.0);
        let map = simulate_map(&cav, &spins, &[field], &[omega]).unwrap();
        let direct = model::reflection_power(
            omega,
            model::field_to_detuning(field, &spins),
            &cav,
            spins.collective_coupling(),
            spins.gamma_s,
        );
        assert_eq!(map.power[(0, 0)], direct);
    }

    #[test]
    fn monotonicity_and_shape_are_enforced() {
        let (cav, spins) = sample_pair();
        let bad_fields = [gauss_to_tesla(3470.0), gauss_to_tesla(3469.0)];
        let freqs = [mhz_to_rad_s(9800.0), mhz_to_rad_s(9801.0)];
        assert!(simulate_map(&cav, &spins, &bad_fields, &freqs).is_err());
        assert!(simulate_map(&cav, &spins, &[], &freqs).is_err());

        let power = DMatrix::zeros(3, 2);
        let err = SpectrumMap::new(
            vec![1.0, 2.0],
            freqs.to_vec(),
            power,
            PowerScale::Linear,
        );
        assert!(err.is_err());
    }

    #[test]
    fn db_round_trip_preserves_values() {
        let (cav, spins) = sample_pair();
        let fields = linspace(gauss_to_tesla(3466.0), gauss_to_tesla(3472.0), 7);
        let freqs = linspace(mhz_to_rad_s(9785.0), mhz_to_rad_s(9815.0), 31);
        let map = simulate_map(&cav, &spins, &fields, &freqs).unwrap();
        let round = map.to_db().to_linear();
        for (a, b) in map.power.iter().zip(round.power.iter()) {
            assert!((a - b).abs() <= 1.0e-12 * a.abs().max(1.0e-30));
        }
    }

    #[test]
    fn linspace_hits_both_ends() {
        let grid = linspace(1.0, 3.0, 5);
        assert_eq!(grid, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(linspace(2.0, 9.0, 1), vec![2.0]);
    }
}
