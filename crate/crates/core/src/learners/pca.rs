//! Principal component analysis via the thin SVD of the centered data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, column_means, Matrix};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// One unit-norm axis per row.
    pub axes: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Set when fewer axes than requested carry nonzero variance.
    pub rank_deficient: bool,
}

pub fn fit_pca(x: &Matrix, n_components: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::TooFewSamples(format!("PCA needs at least 2 rows, got {n}")));
    }
    if n_components == 0 || n_components > (n - 1).min(d) {
        return Err(Error::OutOfRange(format!(
            "n_components {n_components} must lie in 1..={}",
            (n - 1).min(d)
        )));
    }
    check_finite(x)?;
    let mean = column_means(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let total: f64 = centered.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let variances: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2) / (n as f64 - 1.0))
        .collect();
    let floor = 1e-12 * variances.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let nonzero = variances.iter().take_while(|&&v| v > floor).count();
    let kept = n_components.min(nonzero.max(1));

    let mut axes = Vec::with_capacity(kept);
    for &i in order.iter().take(kept) {
        let mut axis: Vec<f64> = v_t.row(i).iter().copied().collect();
        let pivot = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
    }
    let explained_variance: Vec<f64> = variances[..kept].to_vec();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel {
        mean: mean.iter().copied().collect(),
        axes,
        explained_variance,
        explained_variance_ratio,
        rank_deficient: kept < n_components,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.axes.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.ncols(),
            });
        }
        Ok(Matrix::from_fn(x.nrows(), self.axes.len(), |i, c| {
            self.axes[c]
                .iter()
                .enumerate()
                .map(|(j, a)| (x[(i, j)] - self.mean[j]) * a)
                .sum()
        }))
    }

    pub fn inverse_transform(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.nrows(), self.mean.len(), |i, j| {
            self.mean[j] + (0..self.axes.len()).map(|c| z[(i, c)] * self.axes[c][j]).sum::<f64>()
        })
    }
}
