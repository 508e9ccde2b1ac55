//! Per-identity aggregate statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, sample_covariance};

/// Exponent and off-diagonal weight of the covariance summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovParams {
    pub rho: f64,
    pub lambda: f64,
}

impl Default for CovParams {
    fn default() -> Self {
        CovParams { rho: 1.0, lambda: 1.0 }
    }
}

impl CovParams {
    /// Sweep grid `rho in {1, 2}` by `lambda in {0, 0.5, 1}`.
    pub fn default_grid() -> Vec<CovParams> {
        [1.0, 2.0]
            .into_iter()
            .flat_map(|rho| [0.0, 0.5, 1.0].into_iter().map(move |lambda| CovParams { rho, lambda }))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config("rho", "must be a positive finite number"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be a non-negative finite number"));
        }
        Ok(())
    }
}

fn covariance_of(rows: &[Vec<f64>]) -> Result<crate::linalg::Matrix> {
    if rows.len() < 2 {
        return Err(Error::TooFewSamples(format!("covariance needs at least 2 rows, got {}", rows.len())));
    }
    if rows[0].is_empty() {
        return Err(Error::TooFewSamples("rows have no columns".into()));
    }
    sample_covariance(&from_rows(rows)?)
}

/// `S = sum_i |s_ii|^rho + lambda * sum_{i<j} |s_ij|^rho` over the sample
/// covariance `s` of `rows`.
pub fn covariance_summary(rows: &[Vec<f64>], params: CovParams) -> Result<f64> {
    params.validate()?;
    let cov = covariance_of(rows)?;
    let d = cov.nrows();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..d {
        diag += cov[(i, i)].abs().powf(params.rho);
        for j in i + 1..d {
            off += cov[(i, j)].abs().powf(params.rho);
        }
    }
    Ok(diag + params.lambda * off)
}

/// Upper-triangular entries (diagonal included) of the sample covariance,
/// row by row: `d (d + 1) / 2` values.
pub fn covariance_upper_triangle(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let cov = covariance_of(rows)?;
    let d = cov.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(cov[(i, j)]);
        }
    }
    Ok(out)
}

/// Statistics of an identity's pairwise distances, in this order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceStat {
    #[default]
    Mean,
    Median,
    Variance,
    MeanAbsDev,
    MedianAbsDev,
    Iqr,
}

impl DistanceStat {
    pub const ALL: [DistanceStat; 6] = [
        DistanceStat::Mean,
        DistanceStat::Median,
        DistanceStat::Variance,
        DistanceStat::MeanAbsDev,
        DistanceStat::MedianAbsDev,
        DistanceStat::Iqr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DistanceStat::Mean => "mean",
            DistanceStat::Median => "median",
            DistanceStat::Variance => "variance",
            DistanceStat::MeanAbsDev => "mean_abs_dev",
            DistanceStat::MedianAbsDev => "median_abs_dev",
            DistanceStat::Iqr => "iqr",
        }
    }
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `q (n - 1)`).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Mean, median, sample variance, mean absolute deviation (about the mean),
/// median absolute deviation (about the median) and interquartile range.
/// The variance of a single value is 0.
pub fn class_distance_stats(distances: &[f64]) -> Result<[f64; 6]> {
    if distances.is_empty() {
        return Err(Error::TooFewSamples("no distances".into()));
    }
    let n = distances.len() as f64;
    let s = sorted(distances);
    let mean = distances.iter().sum::<f64>() / n;
    let median = quantile_sorted(&s, 0.5);
    let variance = if distances.len() > 1 {
        distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mad = distances.iter().map(|d| (d - mean).abs()).sum::<f64>() / n;
    let dev: Vec<f64> = distances.iter().map(|d| (d - median).abs()).collect();
    let median_ad = quantile_sorted(&sorted(&dev), 0.5);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    Ok([mean, median, variance, mad, median_ad, iqr])
}
