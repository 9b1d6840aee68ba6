use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Pca {
    /// `N x c` component scores of the standardized data.
    pub scores: DMatrix<f64>,
    /// `P x c` loadings (eigenvectors of the correlation matrix).
    pub loadings: DMatrix<f64>,
    /// Fraction of total variance per retained component.
    pub explained: Vec<f64>,
}

/// Principal components of the correlation matrix. Columns are standardized
/// with the sample standard deviation; each component is signed so its
/// largest-magnitude loading is positive.
pub fn pca_reduce(raw: &DMatrix<f64>, n_components: usize) -> Result<Pca> {
    let (n, p) = raw.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 rows, got {n}")));
    }
    if n_components == 0 || n_components > p {
        return Err(Error::Domain(format!("cannot keep {n_components} of {p} components")));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("descriptor matrix has non-finite entries".into()));
    }
    let mut z = raw.clone();
    for (c, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Domain(format!("descriptor column {c} is constant")));
        }
        col /= sd;
    }
    let corr = z.transpose() * &z / (n - 1) as f64;
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut loadings = DMatrix::zeros(p, n_components);
    let mut explained = Vec::with_capacity(n_components);
    for (c, &idx) in order.iter().take(n_components).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(c, &v);
        explained.push(eig.eigenvalues[idx].max(0.0) / total);
    }
    Ok(Pca {
        scores: z * &loadings,
        loadings,
        explained,
    })
}
