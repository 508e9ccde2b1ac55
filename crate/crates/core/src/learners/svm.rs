//! Linear SVM: hinge loss plus L2 penalty, minimized by full-batch
//! subgradient descent with a `1/(lambda t)` step schedule.

use serde::{Deserialize, Serialize};

use super::{training_accuracy, FitInfo, Hyper, Standardizer};
use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub info: FitInfo,
    pub train_accuracy: f64,
}

fn objective(xs: &Matrix, t: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = xs.nrows() as f64;
    let hinge: f64 = (0..xs.nrows())
        .map(|i| {
            let z = b + xs.row(i).iter().zip(w).map(|(a, wi)| a * wi).sum::<f64>();
            (1.0 - t[i] * z).max(0.0)
        })
        .sum();
    0.5 * lambda * (w.iter().map(|v| v * v).sum::<f64>() + b * b) + hinge / n
}

pub fn fit(x: &Matrix, y: &[bool], hyper: &Hyper) -> Result<SvmModel> {
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.apply(x);
    let t: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let lambda = hyper.l2.max(1e-8);
    let n = xs.nrows() as f64;
    let d = xs.ncols();
    // The bias rides along as a constant feature, so it is lightly penalized too.
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (objective(&xs, &t, &w, b, lambda), w.clone(), b);
    let iters = hyper.max_iter.min(2000);
    for step_idx in 1..=iters {
        let eta = 1.0 / (lambda * step_idx as f64);
        let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let mut gb = lambda * b;
        for i in 0..xs.nrows() {
            let row = xs.row(i);
            let z = b + row.iter().zip(&w).map(|(a, wi)| a * wi).sum::<f64>();
            if t[i] * z < 1.0 {
                for (g, a) in gw.iter_mut().zip(row.iter()) {
                    *g -= t[i] * a / n;
                }
                gb -= t[i] / n;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
        let obj = objective(&xs, &t, &w, b, lambda);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }
    let (obj, w, b) = best;
    let mut model = SvmModel {
        weights: w,
        bias: b,
        standardizer,
        info: FitInfo {
            iterations: iters,
            objective: obj,
        },
        train_accuracy: 0.0,
    };
    model.train_accuracy = training_accuracy(&model.margin(x), y, 0.0);
    Ok(model)
}

impl SvmModel {
    pub fn margin(&self, x: &Matrix) -> Vec<f64> {
        let xs = self.standardizer.apply(x);
        (0..xs.nrows())
            .map(|i| self.bias + xs.row(i).iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }
}
