//! L2-regularized logistic regression fitted by gradient ascent with a
//! backtracking line search on standardized features.

use serde::{Deserialize, Serialize};

use super::{training_accuracy, FitInfo, Hyper, Standardizer};
use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weights in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub info: FitInfo,
    pub train_accuracy: f64,
    pub gradient_norm: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-likelihood minus `l2/2 * |w|^2`, and its gradient with the bias
/// derivative in the last slot.
pub fn objective_and_gradient(x: &Matrix, y: &[bool], weights: &[f64], bias: f64, l2: f64) -> (f64, Vec<f64>) {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut grad = vec![0.0; d + 1];
    let mut ll = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let row = x.row(i);
        let z = bias + row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        let t = if label { 1.0 } else { 0.0 };
        ll += if label { -softplus(-z) } else { -softplus(z) };
        let r = t - sigmoid(z);
        for (g, a) in grad.iter_mut().zip(row.iter()) {
            *g += r * a;
        }
        grad[d] += r;
    }
    let mut obj = ll / n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    for j in 0..d {
        obj -= 0.5 * l2 * weights[j] * weights[j];
        grad[j] -= l2 * weights[j];
    }
    (obj, grad)
}

pub fn fit(x: &Matrix, y: &[bool], hyper: &Hyper) -> Result<LogisticModel> {
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.apply(x);
    let d = xs.ncols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut obj, mut grad) = objective_and_gradient(&xs, y, &w, b, hyper.l2);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < hyper.max_iter {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < hyper.tol {
            break;
        }
        iterations += 1;
        loop {
            let w_new: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi + step * gi).collect();
            let b_new = b + step * grad[d];
            let (obj_new, grad_new) = objective_and_gradient(&xs, y, &w_new, b_new, hyper.l2);
            if obj_new >= obj + 1e-4 * step * gnorm2 {
                w = w_new;
                b = b_new;
                obj = obj_new;
                grad = grad_new;
                step = (step * 2.0).min(1e6);
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        if step < 1e-14 {
            break;
        }
    }
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut model = LogisticModel {
        weights: w,
        bias: b,
        standardizer,
        info: FitInfo {
            iterations,
            objective: obj,
        },
        train_accuracy: 0.0,
        gradient_norm,
    };
    model.train_accuracy = training_accuracy(&model.predict_proba(x), y, 0.5);
    Ok(model)
}

impl LogisticModel {
    pub fn decision(&self, x: &Matrix) -> Vec<f64> {
        let xs = self.standardizer.apply(x);
        (0..xs.nrows())
            .map(|i| self.bias + xs.row(i).iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        self.decision(x).into_iter().map(sigmoid).collect()
    }
}
