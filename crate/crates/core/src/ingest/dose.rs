use serde::{Deserialize, Serialize};

use crate::model::DoseGrid;
use crate::{Error, Result};

/// Log-dose bins: each dose goes to the center nearest its natural log, ties
/// to the lower bin. Doses outside `[min_dose, max_dose]` are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoseBins {
    pub centers: Vec<f64>,
    pub min_dose: f64,
    pub max_dose: f64,
}

impl Default for DoseBins {
    fn default() -> Self {
        Self {
            centers: DoseGrid::DEFAULT_COORDS.to_vec(),
            min_dose: 0.01,
            max_dose: 300.0,
        }
    }
}

impl DoseBins {
    pub fn validate(&self) -> Result<()> {
        DoseGrid::new(self.centers.clone())?;
        if !(self.min_dose > 0.0 && self.min_dose < self.max_dose && self.max_dose.is_finite()) {
            return Err(Error::Config(format!(
                "dose range must satisfy 0 < min < max, got [{}, {}]",
                self.min_dose, self.max_dose
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<DoseGrid> {
        DoseGrid::new(self.centers.clone())
    }

    /// Bin index of a dose in µM.
    pub fn bin(&self, dose_um: f64) -> Result<usize> {
        if !(dose_um >= self.min_dose && dose_um <= self.max_dose) {
            return Err(Error::Domain(format!(
                "dose {dose_um} µM outside [{}, {}]",
                self.min_dose, self.max_dose
            )));
        }
        let x = dose_um.ln();
        let mut best = 0;
        for (b, c) in self.centers.iter().enumerate().skip(1) {
            // strict comparison keeps ties in the lower bin
            if (x - c).abs() < (x - self.centers[best]).abs() {
                best = b;
            }
        }
        Ok(best)
    }

    /// A dose inside bin `b`, used when writing binned data back out.
    pub fn representative_dose(&self, b: usize) -> f64 {
        self.centers[b].exp().clamp(self.min_dose, self.max_dose)
    }
}

/// Bin coordinate of a dose under the standard six-bin table.
pub fn discretize_dose(dose_um: f64) -> Result<f64> {
    let bins = DoseBins::default();
    Ok(bins.centers[bins.bin(dose_um)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_boundaries() {
        let table = [
            (0.01, -4.0),
            (0.04, -4.0),
            (0.05, -2.0),
            (0.3, -2.0),
            (0.4, 0.0),
            (2.5, 0.0),
            (3.0, 2.0),
            (20.0, 2.0),
            (25.0, 4.0),
            (35.0, 4.0),
            (100.0, 4.0),
            (200.0, 6.0),
            (300.0, 6.0),
        ];
        for (dose, coord) in table {
            assert_eq!(discretize_dose(dose).unwrap(), coord, "{dose}");
        }
        for bad in [0.0, 0.009, 301.0, f64::NAN, -1.0] {
            assert!(discretize_dose(bad).is_err());
        }
    }

    #[test]
    fn exact_midpoint_goes_low() {
        let halves = DoseBins { centers: vec![-1.0, 1.0], min_dose: 0.01, max_dose: 300.0 };
        assert_eq!(halves.bin(1.0).unwrap(), 0);
    }

    #[test]
    fn representatives_round_trip() {
        let bins = DoseBins::default();
        for b in 0..bins.centers.len() {
            assert_eq!(bins.bin(bins.representative_dose(b)).unwrap(), b);
        }
    }

    proptest! {
        #[test]
        fn binning_is_monotone_and_total(a in 0.01f64..300.0, b in 0.01f64..300.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (discretize_dose(lo).unwrap(), discretize_dose(hi).unwrap());
            prop_assert!(x <= y);
        }
    }
}
