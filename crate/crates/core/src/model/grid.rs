use nalgebra::DMatrix;

use crate::{Error, Result};

/// Ordered dose coordinates (discretised natural-log dose bin centres).
#[derive(Debug, Clone, PartialEq)]
pub struct DoseGrid {
    coords: Vec<f64>,
}

impl DoseGrid {
    /// Bin centres of the standard six-bin discretisation.
    pub const DEFAULT_COORDS: [f64; 6] = [-4.0, -2.0, 0.0, 2.0, 4.0, 6.0];

    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("dose grid must contain at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("dose grid coordinates must be finite".into()));
        }
        if coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("dose grid must be strictly increasing".into()));
        }
        Ok(Self { coords })
    }

    /// The first `d` centres of the standard grid, extended in steps of two
    /// when more than six levels are requested.
    pub fn standard(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dose grid must contain at least one coordinate".into()));
        }
        Self::new((0..d).map(|k| -4.0 + 2.0 * k as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Index of a coordinate that lies exactly on the grid.
    pub fn index_of(&self, coord: f64) -> Option<usize> {
        self.coords.iter().position(|&c| c == coord)
    }
}

impl Default for DoseGrid {
    fn default() -> Self {
        Self {
            coords: Self::DEFAULT_COORDS.to_vec(),
        }
    }
}

/// Squared-exponential covariance over the dose grid with its lower Cholesky
/// factor.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub matrix: DMatrix<f64>,
    pub chol: DMatrix<f64>,
}

pub fn kernel_matrix(grid: &DoseGrid, length_scale: f64, jitter: f64) -> Result<Kernel> {
    if !(length_scale > 0.0) || !length_scale.is_finite() {
        return Err(Error::Domain(format!("length scale must be positive, got {length_scale}")));
    }
    if !(jitter > 0.0) {
        return Err(Error::Domain(format!("kernel jitter must be positive, got {jitter}")));
    }
    let x = grid.coords();
    let d = x.len();
    let two_l2 = 2.0 * length_scale * length_scale;
    let matrix = DMatrix::from_fn(d, d, |a, b| {
        let diff = x[a] - x[b];
        let v = (-(diff * diff) / two_l2).exp();
        if a == b {
            v + jitter
        } else {
            v
        }
    });
    let chol = matrix
        .clone()
        .cholesky()
        .ok_or_else(|| {
            Error::Decomposition(format!(
                "kernel with length scale {length_scale} and jitter {jitter} is not positive definite"
            ))
        })?
        .l();
    Ok(Kernel { matrix, chol })
}

impl Kernel {
    /// Smallest eigenvalue, used by property tests.
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn apply_chol(&self, raw: &[f64], out: &mut [f64]) {
        let d = raw.len();
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += self.chol[(a, b)] * raw[b];
            }
            out[a] = acc;
        }
    }

    pub(crate) fn apply_chol_transpose(&self, v: &[f64], out: &mut [f64]) {
        let d = v.len();
        for b in 0..d {
            let mut acc = 0.0;
            for a in b..d {
                acc += self.chol[(a, b)] * v[a];
            }
            out[b] = acc;
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_point_kernel_is_unit_plus_jitter() {
        let grid = DoseGrid::new(vec![0.0]).unwrap();
        let k = kernel_matrix(&grid, 3.7, 1e-8).unwrap();
        assert_eq!(k.matrix[(0, 0)], 1.0 + 1e-8);
    }

    #[test]
    fn two_point_off_diagonal() {
        let grid = DoseGrid::new(vec![0.0, 2.0]).unwrap();
        let k = kernel_matrix(&grid, 1.0, 1e-8).unwrap();
        assert!((k.matrix[(0, 1)] - 0.135335283236612_7).abs() < 1e-12);
        assert_eq!(k.matrix[(0, 1)], k.matrix[(1, 0)]);
    }

    #[test]
    fn default_grid_adjacent_entries() {
        let k = kernel_matrix(&DoseGrid::default(), 1.0, 1e-8).unwrap();
        for a in 0..5 {
            assert_eq!(k.matrix[(a, a + 1)], (-2.0f64).exp());
        }
        let rebuilt = &k.chol * k.chol.transpose();
        assert!((rebuilt - &k.matrix).abs().max() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(DoseGrid::new(vec![]).is_err());
        assert!(DoseGrid::new(vec![0.0, 0.0]).is_err());
        assert!(DoseGrid::new(vec![1.0, f64::NAN]).is_err());
        assert_eq!(DoseGrid::standard(5).unwrap().coords(), &[-4.0, -2.0, 0.0, 2.0, 4.0]);
    }

    #[test]
    fn pathological_length_scale_reports_decomposition_failure() {
        let grid = DoseGrid::new((0..40).map(|i| i as f64 * 0.01).collect()).unwrap();
        let err = kernel_matrix(&grid, 100.0, 1e-300).unwrap_err();
        assert!(matches!(err, Error::Decomposition(_)), "{err:?}");
        assert!(kernel_matrix(&grid, -1.0, 1e-8).is_err());
    }

    proptest! {
        #[test]
        fn kernel_symmetric_positive_definite(
            steps in proptest::collection::vec(0.2f64..3.0, 1..8),
            l in 0.3f64..3.0,
        ) {
            let mut coords = vec![-4.0];
            for s in steps {
                let last = *coords.last().unwrap();
                coords.push(last + s);
            }
            let grid = DoseGrid::new(coords).unwrap();
            let k = kernel_matrix(&grid, l, 1e-8).unwrap();
            prop_assert!((&k.matrix - k.matrix.transpose()).abs().max() == 0.0);
            prop_assert!(k.min_eigenvalue() > 0.0);
        }
    }
}
