//! Full-covariance Gaussian mixture fitted by expectation-maximization.
//!
//! Covariances carry a ridge through a fixed penalty `-(c/2) tr(Sigma_k^-1)` on
//! the log-likelihood, whose M-step is `(S_k + c I) / N_k`. Because the penalty
//! does not depend on the responsibilities, EM ascends the penalized objective
//! monotonically, and that objective is what `trace` records. With
//! `reg_scale = 0` the objective is the plain log-likelihood.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, log_sum_exp, sample_covariance, Gaussian, Matrix, Vector};
use crate::par;
use crate::rng::{rng_from, stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub n_components: usize,
    pub n_restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub reg_scale: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            n_components: 2,
            n_restarts: 5,
            tol: 1e-8,
            max_iter: 500,
            reg_scale: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major covariances, ridge included.
    pub covariances: Vec<Vec<f64>>,
    /// Penalized log-likelihood after each EM iteration of the kept restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub collapsed_restarts: usize,
    /// The `c` of the covariance penalty.
    pub penalty: f64,
    #[serde(skip)]
    components: Option<Vec<Gaussian>>,
}

struct Params {
    weights: Vec<f64>,
    comps: Vec<Gaussian>,
}

fn m_step(x: &Matrix, resp: &Matrix, penalty: f64) -> Result<Params> {
    let (n, d) = x.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let col = resp.column(c);
        let nk: f64 = col.sum();
        if nk < 1e-8 * n as f64 {
            return Err(Error::DegenerateComponent);
        }
        let mean = Vector::from_fn(d, |j, _| (0..n).map(|i| col[i] * x[(i, j)]).sum::<f64>() / nk);
        let mut cov = Matrix::zeros(d, d);
        for i in 0..n {
            let diff = x.row(i).transpose() - &mean;
            cov.ger(col[i], &diff, &diff, 1.0);
        }
        for j in 0..d {
            cov[(j, j)] += penalty;
        }
        cov /= nk;
        let g = Gaussian::new(mean, cov).map_err(|_| Error::DegenerateComponent)?;
        weights.push(nk / n as f64);
        comps.push(g);
    }
    Ok(Params { weights, comps })
}

/// E-step: responsibilities and the penalized objective at `params`.
fn e_step(x: &Matrix, params: &Params, penalty: f64) -> (Matrix, f64) {
    let n = x.nrows();
    let k = params.comps.len();
    let mut resp = Matrix::zeros(n, k);
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        for c in 0..k {
            buf[c] = params.weights[c].ln() + params.comps[c].log_pdf(&row);
        }
        let lse = log_sum_exp(&buf);
        total += lse;
        for c in 0..k {
            resp[(i, c)] = (buf[c] - lse).exp();
        }
    }
    if penalty > 0.0 {
        total -= 0.5 * penalty * params.comps.iter().map(|g| g.inverse().trace()).sum::<f64>();
    }
    (resp, total)
}

/// k-means++ seeding followed by a hard nearest-center assignment.
fn initial_responsibilities(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.nrows();
    let dist2 = |a: usize, b: usize| (x.row(a) - x.row(b)).norm_squared();
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, m) in nearest.iter_mut().enumerate() {
            *m = m.min(dist2(i, next));
        }
    }
    let mut resp = Matrix::zeros(n, k);
    for i in 0..n {
        let best = (0..k)
            .min_by(|&a, &b| dist2(i, centers[a]).total_cmp(&dist2(i, centers[b])))
            .unwrap_or(0);
        resp[(i, best)] = 1.0;
    }
    resp
}

struct Run {
    params: Params,
    trace: Vec<f64>,
}

fn run_em(x: &Matrix, cfg: &GmmConfig, penalty: f64, restart: usize) -> Result<Run> {
    let mut rng = rng_from(cfg.seed, &[stream::GMM, restart as u64]);
    let resp = initial_responsibilities(x, cfg.n_components, &mut rng);
    let mut params = m_step(x, &resp, penalty)?;
    let mut trace = Vec::new();
    for iter in 0..cfg.max_iter.max(1) {
        let (resp, obj) = e_step(x, &params, penalty);
        let gain = trace.last().map(|prev| obj - prev);
        trace.push(obj);
        if gain.is_some_and(|g| g < cfg.tol) || iter + 1 == cfg.max_iter.max(1) {
            break;
        }
        params = m_step(x, &resp, penalty)?;
    }
    Ok(Run { params, trace })
}

pub fn fit_gmm(x: &Matrix, cfg: &GmmConfig) -> Result<GmmModel> {
    let (n, d) = x.shape();
    if cfg.n_components == 0 || n <= cfg.n_components {
        return Err(Error::TooFewSamples(format!(
            "{} components need more than {} rows",
            cfg.n_components, n
        )));
    }
    check_finite(x)?;
    let penalty = if cfg.reg_scale > 0.0 {
        let cov = sample_covariance(x)?;
        let t = cov.trace() / d as f64;
        let eps = if t > 0.0 { cfg.reg_scale * t } else { cfg.reg_scale };
        eps * n as f64 / cfg.n_components as f64
    } else {
        0.0
    };
    let runs = par::map_range(cfg.n_restarts.max(1), |r| run_em(x, cfg, penalty, r));
    let collapsed_restarts = runs.iter().filter(|r| r.is_err()).count();
    let best = runs
        .into_iter()
        .filter_map(|r| r.ok())
        .fold(None::<Run>, |best, run| match best {
            Some(b) if b.trace.last() >= run.trace.last() => Some(b),
            _ => Some(run),
        })
        .ok_or(Error::DegenerateComponent)?;
    let Run { params, trace } = best;
    Ok(GmmModel {
        weights: params.weights.clone(),
        means: params.comps.iter().map(|g| g.mean.iter().copied().collect()).collect(),
        covariances: params
            .comps
            .iter()
            .map(|g| g.cov.transpose().iter().copied().collect())
            .collect(),
        iterations: trace.len(),
        trace,
        collapsed_restarts,
        penalty,
        components: Some(params.comps),
    })
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn components(&self) -> Vec<Gaussian> {
        if let Some(c) = &self.components {
            return c.clone();
        }
        let d = self.dim();
        self.means
            .iter()
            .zip(&self.covariances)
            .map(|(m, c)| Gaussian::new(Vector::from_vec(m.clone()), Matrix::from_row_slice(d, d, c)).expect("stored covariance was positive definite"))
            .collect()
    }

    /// Per-row `log(weight_k) + log N_k(x)` for every component.
    pub fn log_joint(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let comps = self.components();
        Ok((0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                comps
                    .iter()
                    .zip(&self.weights)
                    .map(|(g, w)| w.ln() + g.log_pdf(&row))
                    .collect()
            })
            .collect())
    }

    /// Per-row component posteriors.
    pub fn posterior(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .log_joint(x)?
            .into_iter()
            .map(|lj| {
                let lse = log_sum_exp(&lj);
                lj.into_iter().map(|v| (v - lse).exp()).collect()
            })
            .collect())
    }

    /// Per-row mixture log-density.
    pub fn log_density(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.log_joint(x)?.iter().map(|lj| log_sum_exp(lj)).collect())
    }
}

pub fn gmm_posterior(model: &GmmModel, x: &Matrix) -> Result<Vec<Vec<f64>>> {
    model.posterior(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{column_means, from_rows};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_clusters_are_recovered() {
        let mut rng = rng_from(1, &[]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![if i % 2 == 0 { 0.0 } else { 100.0 } + noise.sample(&mut rng)])
            .collect();
        let m = fit_gmm(&from_rows(&rows).unwrap(), &GmmConfig::default()).unwrap();
        let mut means: Vec<f64> = m.means.iter().map(|v| v[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!(means[0].abs() < 1.0 && (means[1] - 100.0).abs() < 1.0, "{means:?}");
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_component_matches_sample_statistics() {
        let mut rng = rng_from(2, &[]);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let x = from_rows(&rows).unwrap();
        let cfg = GmmConfig {
            n_components: 1,
            reg_scale: 0.0,
            ..GmmConfig::default()
        };
        let m = fit_gmm(&x, &cfg).unwrap();
        let mean = column_means(&x);
        let mle = sample_covariance(&x).unwrap() * (49.0 / 50.0);
        for j in 0..3 {
            assert!((m.means[0][j] - mean[j]).abs() < 1e-9);
            for l in 0..3 {
                assert!((m.covariances[0][j * 3 + l] - mle[(j, l)]).abs() < 1e-9);
            }
        }
        // With the default ridge the only difference is the penalty on the diagonal.
        let reg = fit_gmm(&x, &GmmConfig { n_components: 1, ..GmmConfig::default() }).unwrap();
        for j in 0..3 {
            assert!((reg.covariances[0][j * 4] - mle[(j, j)] - reg.penalty / 50.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_is_monotone_and_posteriors_normalized() {
        let mut rng = rng_from(4, &[]);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x = from_rows(&rows).unwrap();
        let m = fit_gmm(&x, &GmmConfig { n_components: 3, ..GmmConfig::default() }).unwrap();
        assert!(m.trace.windows(2).all(|w| w[1] - w[0] >= -1e-9));
        for p in m.posterior(&x).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(fit_gmm(&x, &GmmConfig::default()).is_err());
    }
}
