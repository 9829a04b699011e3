use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::canonical_row_signs;

/// Eigenvalues at or below this fraction of the largest one are treated as
/// zero when deciding how many components the data supports.
pub const RANK_TOL: f64 = 1e-12;

/// Principal component model of column-sample data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// One principal direction per row, orthonormal.
    pub basis: DMatrix<f64>,
    /// Sample variances along each direction (divisor `n - 1`), descending.
    pub eigenvalues: DVector<f64>,
    /// Number of components that was asked for. Larger than
    /// `basis.nrows()` when the data did not support that many.
    pub requested: usize,
}

impl Pca {
    /// Fits a PCA to `data` (`p x n`, one sample per column) through the SVD
    /// of the centered data matrix.
    pub fn fit(data: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (p, n) = data.shape();
        if n < 2 {
            return Err(Error::IllPosed(format!("PCA needs at least 2 samples, got {n}")));
        }
        if k > p.min(n - 1) {
            return Err(Error::IllPosed(format!(
                "cannot extract {k} components from {p}-dimensional data with {n} samples"
            )));
        }
        crate::linalg::ensure_finite(data, "PCA input")?;
        let mean = data.column_mean();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }

        let svd = centered.svd(true, false);
        let u = svd.u.expect("u requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .total_cmp(&svd.singular_values[a])
                .then(a.cmp(&b))
        });
        let denom = (n - 1) as f64;
        let top = order
            .first()
            .map(|&i| svd.singular_values[i].powi(2) / denom)
            .unwrap_or(0.0);
        let kept: Vec<usize> = order
            .into_iter()
            .take(k)
            .filter(|&i| {
                let ev = svd.singular_values[i].powi(2) / denom;
                top > 0.0 && ev > RANK_TOL * top
            })
            .collect();

        let mut basis = DMatrix::zeros(kept.len(), p);
        let mut eigenvalues = DVector::zeros(kept.len());
        for (r, &i) in kept.iter().enumerate() {
            basis.set_row(r, &u.column(i).transpose());
            eigenvalues[r] = svd.singular_values[i].powi(2) / denom;
        }
        canonical_row_signs(&mut basis);
        if kept.len() < k {
            log::warn!(
                "PCA rank deficient: {} of {k} requested components available",
                kept.len()
            );
        }
        Ok(Self {
            mean,
            basis,
            eigenvalues,
            requested: k,
        })
    }

    pub fn n_components(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank_deficient(&self) -> bool {
        self.n_components() < self.requested
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * (x - &self.mean)
    }

    /// Coefficients for every column of `data`.
    pub fn project_columns(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        &self.basis * centered
    }

    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.mean + self.basis.tr_mul(coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_columns_project_to_zero() {
        let col = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let data = DMatrix::from_columns(&[col.clone(), col.clone(), col.clone(), col]);
        let pca = Pca::fit(&data, 2).unwrap();
        assert!(pca.rank_deficient());
        assert_eq!(pca.n_components(), 0);
        let coeffs = pca.project_columns(&data);
        assert!(coeffs.iter().all(|v| *v == 0.0));
        assert!((pca.reconstruct(&DVector::zeros(0)) - data.column(0)).amax() < 1e-15);
    }

    #[test]
    fn exact_rank_reconstructs_losslessly() {
        // rank-2 data in 4 dimensions
        let a = DVector::from_vec(vec![1.0, 0.5, -1.0, 2.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 1.0, -0.5]);
        let offset = DVector::from_vec(vec![3.0, -1.0, 0.0, 1.0]);
        let cols: Vec<_> = (0..7)
            .map(|i| {
                let t = i as f64;
                &offset + &a * (t * 0.3 - 1.0) + &b * ((t * 1.7).sin())
            })
            .collect();
        let data = DMatrix::from_columns(&cols);
        let pca = Pca::fit(&data, 2).unwrap();
        assert!(!pca.rank_deficient());
        for col in data.column_iter() {
            let c = col.into_owned();
            let back = pca.reconstruct(&pca.project(&c));
            assert!((back - c).amax() < 1e-10);
        }
        let gram = &pca.basis * pca.basis.transpose();
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn rejects_too_many_components() {
        let data = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        assert!(Pca::fit(&data, 3).is_err());
        assert!(Pca::fit(&DMatrix::zeros(3, 1), 0).is_err());
    }
}
