//! Quadratic discriminant analysis: one Gaussian per label, each with its own
//! ridge-regularized covariance.

use serde::{Deserialize, Serialize};

use super::Hyper;
use crate::error::{Error, Result};
use crate::linalg::{column_means, ridge_for, sample_covariance, Gaussian, Matrix};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelGaussian {
    pub mean: Vec<f64>,
    /// Row-major covariance including the ridge.
    pub cov: Vec<f64>,
    pub ridge: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QdaModel {
    /// Index 0 for label `false`, 1 for label `true`.
    pub labels: [LabelGaussian; 2],
    pub log_prior: [f64; 2],
    #[serde(skip)]
    densities: Option<[Gaussian; 2]>,
}

fn fit_label(x: &Matrix, rows: &[usize], ridge_scale: f64) -> Result<(LabelGaussian, Gaussian)> {
    if rows.len() < 2 {
        return Err(Error::TooFewSamples(format!("QDA needs 2 rows per label, got {}", rows.len())));
    }
    let sub = x.select_rows(rows);
    let mean = column_means(&sub);
    let mut cov = sample_covariance(&sub)?;
    let ridge = if ridge_scale > 0.0 { ridge_for(&cov, ridge_scale) } else { 0.0 };
    for i in 0..cov.nrows() {
        cov[(i, i)] += ridge;
    }
    let g = Gaussian::new(mean.clone(), cov.clone())?;
    let stored = LabelGaussian {
        mean: mean.iter().copied().collect(),
        cov: cov.transpose().iter().copied().collect(),
        ridge,
        count: rows.len(),
    };
    Ok((stored, g))
}

pub fn fit(x: &Matrix, y: &[bool], hyper: &Hyper) -> Result<QdaModel> {
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let (l0, g0) = fit_label(x, &neg, hyper.ridge_scale)?;
    let (l1, g1) = fit_label(x, &pos, hyper.ridge_scale)?;
    let log_prior = if hyper.empirical_priors {
        let n = y.len() as f64;
        [(neg.len() as f64 / n).ln(), (pos.len() as f64 / n).ln()]
    } else {
        [0.5f64.ln(); 2]
    };
    Ok(QdaModel {
        labels: [l0, l1],
        log_prior,
        densities: Some([g0, g1]),
    })
}

impl QdaModel {
    pub fn dim(&self) -> usize {
        self.labels[0].mean.len()
    }

    fn densities(&self) -> [Gaussian; 2] {
        if let Some(d) = &self.densities {
            return d.clone();
        }
        let d = self.dim();
        self.labels
            .clone()
            .map(|l| Gaussian::new(l.mean.into(), Matrix::from_row_slice(d, d, &l.cov)).expect("stored covariance was positive definite"))
    }

    /// `log P(true | x) - log P(false | x)`; monotone in the posterior but
    /// free of the saturation the posterior suffers far from the boundary.
    pub fn log_odds(&self, x: &Matrix) -> Vec<f64> {
        let [g0, g1] = self.densities();
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                (g1.log_pdf(&row) + self.log_prior[1]) - (g0.log_pdf(&row) + self.log_prior[0])
            })
            .collect()
    }

    pub fn posterior(&self, x: &Matrix) -> Vec<f64> {
        self.log_odds(x).into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
    }
}
