//! Two-layer perceptron teacher: `tanh` hidden layer of width `k` (the
//! exposed feature) followed by a softmax over the member identities.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::World;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Mini-batch size; 0 trains on the full batch with a non-increasing-loss guard.
    pub batch_size: usize,
    pub min_accuracy: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 32,
            min_accuracy: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean cross-entropy over the full training set after each epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Identity label behind each output unit.
    pub class_ids: Vec<u32>,
    /// `hidden_dim x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `n_classes x hidden_dim`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub log: TrainingLog,
}

impl Teacher {
    pub fn new_zeroed(input_dim: usize, hidden_dim: usize, class_ids: Vec<u32>) -> Self {
        let c = class_ids.len();
        Teacher {
            input_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; c * hidden_dim],
            b2: vec![0.0; c],
            class_ids,
            log: TrainingLog::default(),
        }
    }

    fn new_random(input_dim: usize, hidden_dim: usize, class_ids: Vec<u32>, seed: u64) -> Self {
        let mut t = Teacher::new_zeroed(input_dim, hidden_dim, class_ids);
        let mut rng = rng_from(seed, &[stream::TEACHER_INIT]);
        let n1 = Normal::new(0.0, (1.0 / input_dim as f64).sqrt()).expect("valid std");
        let n2 = Normal::new(0.0, (1.0 / hidden_dim as f64).sqrt()).expect("valid std");
        t.w1.iter_mut().for_each(|w| *w = n1.sample(&mut rng));
        t.w2.iter_mut().for_each(|w| *w = n2.sample(&mut rng));
        t
    }

    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                (self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect()
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.n_classes())
            .map(|c| {
                let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
                self.b2[c] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Penultimate-layer activation.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self.hidden(x))
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        let z = self.logits(&self.hidden(x));
        (0..z.len()).fold(0, |best, c| if z[c] > z[best] { c } else { best })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let n = buf.len();
            buf.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    /// Stable fingerprint of the weights.
    pub fn checksum(&self) -> u64 {
        self.flat_params().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01B3)
        })
    }

    /// Mean softmax cross-entropy over `(x, class index)` pairs and its
    /// gradient in [`Teacher::flat_params`] order.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], labels: &[usize]) -> (f64, Vec<f64>) {
        let (d, k, c) = (self.input_dim, self.hidden_dim, self.n_classes());
        let mut g = vec![0.0; self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()];
        let (gw1, rest) = g.split_at_mut(k * d);
        let (gb1, rest) = rest.split_at_mut(k);
        let (gw2, gb2) = rest.split_at_mut(c * k);
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            let h = self.hidden(x);
            let z = self.logits(&h);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - z[y];
            let mut dh = vec![0.0; k];
            for ci in 0..c {
                let dz = (z[ci] - lse).exp() - if ci == y { 1.0 } else { 0.0 };
                gb2[ci] += dz;
                let row = &self.w2[ci * k..(ci + 1) * k];
                for j in 0..k {
                    gw2[ci * k + j] += dz * h[j];
                    dh[j] += dz * row[j];
                }
            }
            for j in 0..k {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                gb1[j] += da;
                let grow = &mut gw1[j * d..(j + 1) * d];
                for (gv, xv) in grow.iter_mut().zip(x.iter()) {
                    *gv += da * xv;
                }
            }
        }
        let n = xs.len().max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        (loss / n, g)
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        let mut p = self.flat_params();
        for (pv, gv) in p.iter_mut().zip(grad) {
            *pv -= lr * gv;
        }
        self.set_flat_params(&p);
    }

    fn accuracy(&self, xs: &[&[f64]], labels: &[usize]) -> f64 {
        let hits = xs.iter().zip(labels).filter(|(x, &y)| self.predict_index(x) == y).count();
        hits as f64 / xs.len().max(1) as f64
    }
}

/// Train a teacher on the member identities of `world` by gradient descent on
/// softmax cross-entropy.
pub fn train_teacher(world: &World, cfg: &TeacherConfig) -> Result<Teacher> {
    let hidden_dim = world.config.feature_dim;
    if cfg.epochs == 0 {
        return Err(Error::config("teacher.epochs", "must be at least 1"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::config("teacher.learning_rate", "must be a positive finite number"));
    }
    let members: Vec<_> = world.members().collect();
    if members.is_empty() {
        return Err(Error::TooFewSamples("world has no member instances".into()));
    }
    let input_dim = members[0].x.len();
    let mut class_ids: Vec<u32> = members.iter().map(|i| i.y1).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let xs: Vec<&[f64]> = members.iter().map(|i| i.x.as_slice()).collect();
    let labels: Vec<usize> = members
        .iter()
        .map(|i| class_ids.binary_search(&i.y1).expect("class id collected above"))
        .collect();

    let mut teacher = Teacher::new_random(input_dim, hidden_dim, class_ids, cfg.seed);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut lr = cfg.learning_rate;
    let (mut full_loss, mut full_grad) = teacher.loss_and_gradient(&xs, &labels);
    for epoch in 0..cfg.epochs {
        if cfg.batch_size == 0 {
            loop {
                let mut trial = teacher.clone();
                trial.step(&full_grad, lr);
                let (loss, grad) = trial.loss_and_gradient(&xs, &labels);
                if loss <= full_loss || lr < 1e-12 {
                    teacher = trial;
                    full_loss = loss;
                    full_grad = grad;
                    break;
                }
                lr *= 0.5;
            }
        } else {
            order.shuffle(&mut rng_from(cfg.seed, &[stream::TEACHER_BATCH, epoch as u64]));
            for batch in order.chunks(cfg.batch_size) {
                let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i]).collect();
                let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let (_, grad) = teacher.loss_and_gradient(&bx, &by);
                teacher.step(&grad, lr);
            }
            full_loss = teacher.loss_and_gradient(&xs, &labels).0;
        }
        log.epoch_loss.push(full_loss);
    }
    log.train_accuracy = teacher.accuracy(&xs, &labels);
    teacher.log = log;
    if teacher.log.train_accuracy < cfg.min_accuracy {
        return Err(Error::NonConvergence {
            accuracy: teacher.log.train_accuracy,
            required: cfg.min_accuracy,
        });
    }
    Ok(teacher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};
    use rand::Rng;

    fn toy_world() -> World {
        // Two well-separated member identities.
        let cfg = WorldConfig {
            input_dim: 4,
            feature_dim: 3,
            n_member_classes: 2,
            n_nonmember_classes: 1,
            images_per_class: 20,
            center_spread: 5.0,
            class_spread: 0.3,
            n_public_classes: 0,
            seed: 3,
            ..WorldConfig::default()
        };
        generate_world(&cfg).unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let w = toy_world();
        let cfg = TeacherConfig {
            epochs: 50,
            ..TeacherConfig::default()
        };
        let t = train_teacher(&w, &cfg).unwrap();
        assert_eq!(t.log.train_accuracy, 1.0);
    }

    #[test]
    fn full_batch_loss_never_increases() {
        let w = toy_world();
        let cfg = TeacherConfig {
            epochs: 40,
            batch_size: 0,
            learning_rate: 2.0,
            min_accuracy: 0.0,
            ..TeacherConfig::default()
        };
        let t = train_teacher(&w, &cfg).unwrap();
        assert!(t.log.epoch_loss.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let t = Teacher::new_zeroed(5, 4, vec![0, 1]);
        assert_eq!(t.features(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 4]);
        assert!(t.features(&[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rng_from(5, &[]);
        let mut t = Teacher::new_random(6, 4, vec![0, 1, 2], 9);
        t.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let xs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let (_, g) = t.loss_and_gradient(&xs, &labels);
        let base = t.flat_params();
        // A slice touching w1, b1, w2 and b2.
        let picks = [0, 7, 24, 30, base.len() - 1];
        let h = 1e-5;
        for &p in &picks {
            let mut probe = t.clone();
            let mut plus = base.clone();
            plus[p] += h;
            probe.set_flat_params(&plus);
            let lp = probe.loss_and_gradient(&xs, &labels).0;
            let mut minus = base.clone();
            minus[p] -= h;
            probe.set_flat_params(&minus);
            let lm = probe.loss_and_gradient(&xs, &labels).0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[p]).abs() / fd.abs().max(g[p].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {p}: fd {fd} analytic {}", g[p]);
        }
    }
}
