//! Small dense linear-algebra helpers shared by the learners.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Build a row-major matrix from equally sized rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(Matrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn to_rows(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

pub fn column_means(x: &Matrix) -> Vector {
    let n = x.nrows().max(1) as f64;
    Vector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n)
}

/// Scatter matrix `sum (x_i - mean)(x_i - mean)^T`.
pub fn scatter(x: &Matrix, mean: &Vector) -> Matrix {
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    centered.transpose() * centered
}

/// Sample covariance with denominator `n - 1`.
pub fn sample_covariance(x: &Matrix) -> Result<Matrix> {
    if x.nrows() < 2 {
        return Err(Error::TooFewSamples(format!(
            "covariance needs at least 2 rows, got {}",
            x.nrows()
        )));
    }
    let mean = column_means(x);
    Ok(scatter(x, &mean) / (x.nrows() as f64 - 1.0))
}

/// Ridge magnitude `scale * trace(cov) / dim`, falling back to `scale` for a zero trace.
pub fn ridge_for(cov: &Matrix, scale: f64) -> f64 {
    let d = cov.nrows().max(1) as f64;
    let t = cov.trace() / d;
    if t > 0.0 {
        scale * t
    } else {
        scale
    }
}

pub fn check_finite(x: &Matrix) -> Result<()> {
    for i in 0..x.nrows() {
        if x.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i });
        }
    }
    Ok(())
}

/// Multivariate normal log-density evaluator.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: Vector,
    pub cov: Matrix,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let chol = Cholesky::new(cov.clone()).ok_or(Error::SingularCovariance)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let d = mean.len() as f64;
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Gaussian {
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = Vector::from_fn(self.mean.len(), |i, _| x[i] - self.mean[i]);
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .unwrap_or_else(|| Vector::from_element(diff.len(), f64::INFINITY));
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_two_points() {
        let x = from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let c = sample_covariance(&x).unwrap();
        assert_eq!(c[(0, 0)], 2.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 1)], 0.0);
    }

    #[test]
    fn standard_normal_density() {
        let g = Gaussian::new(Vector::zeros(2), Matrix::identity(2, 2)).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln();
        assert!((g.log_pdf(&[0.0, 0.0]) - expected).abs() < 1e-12);
        assert!((g.log_pdf(&[1.0, 0.0]) - (expected - 0.5)).abs() < 1e-12);
        assert!(Gaussian::new(Vector::zeros(2), Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn lse() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
