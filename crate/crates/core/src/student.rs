//! The three black-box surfaces built on a frozen feature extractor: raw
//! features, pairwise verification distance, and a fine-tuned recognition
//! head returning confidence scores.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::defenses::{apply_filters, DefenseSpec, Response};
use crate::error::{Error, Result};
use crate::metrics::kfold_split;
use crate::rng::{rng_from, stream};
use crate::world::{Extractor, Instance, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Feature,
    Verification,
    Recognition,
}

impl Surface {
    pub fn name(self) -> &'static str {
        match self {
            Surface::Feature => "feature",
            Surface::Verification => "verification",
            Surface::Recognition => "recognition",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Surface::Feature => 1,
            Surface::Verification => 2,
            Surface::Recognition => 3,
        }
    }
}

/// `psi(x)`: the extractor's feature vector for one input.
pub fn feature_api(extractor: &Extractor, x: &[f64]) -> Result<Vec<f64>> {
    extractor.extract(x)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationStudent {
    pub extractor: Arc<Extractor>,
    /// Distances at or below the threshold are declared the same identity.
    pub threshold: f64,
    /// Mean held-out accuracy from cross-validated calibration.
    pub accuracy: f64,
}

/// Euclidean distance between the two feature vectors.
pub fn verify_api(student: &VerificationStudent, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let f1 = student.extractor.extract(x1)?;
    let f2 = student.extractor.extract(x2)?;
    Ok(euclidean(&f1, &f2))
}

/// Accuracy-maximizing threshold over the midpoints of sorted distances.
fn best_threshold(distances: &[f64], same: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let n = distances.len() as f64;
    // Start with every pair declared different.
    let mut correct = same.iter().filter(|&&s| !s).count();
    let mut best = (correct, distances[order[0]] * 0.5);
    let mut i = 0;
    while i < order.len() {
        let d = distances[order[i]];
        while i < order.len() && distances[order[i]] == d {
            if same[order[i]] {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        let cut = if i < order.len() {
            0.5 * (d + distances[order[i]])
        } else {
            d
        };
        if correct > best.0 {
            best = (correct, cut);
        }
    }
    (best.1, best.0 as f64 / n)
}

fn accuracy_at(distances: &[f64], same: &[bool], threshold: f64) -> f64 {
    let hits = distances.iter().zip(same).filter(|(&d, &s)| (d <= threshold) == s).count();
    hits as f64 / distances.len() as f64
}

/// Choose the verification threshold from labeled pair distances.
///
/// Each fold picks the best threshold on the remaining folds and is scored
/// on itself; the reported accuracy is the mean of those held-out scores and
/// the returned threshold is the best one on the full set.
pub fn calibrate_threshold(distances: &[f64], same: &[bool], folds: usize, seed: u64) -> Result<(f64, f64)> {
    if distances.len() != same.len() {
        return Err(Error::LengthMismatch {
            left: distances.len(),
            right: same.len(),
        });
    }
    if let Some(row) = distances.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite { row });
    }
    if same.iter().all(|&s| s) || same.iter().all(|&s| !s) {
        return Err(Error::AllOneClass);
    }
    let parts = kfold_split(distances.len(), folds, Some(same), rng_seed(seed))?;
    let mut held_out = 0.0;
    for part in &parts {
        let mut train_d = Vec::new();
        let mut train_s = Vec::new();
        let mut in_part = vec![false; distances.len()];
        part.iter().for_each(|&i| in_part[i] = true);
        for i in (0..distances.len()).filter(|&i| !in_part[i]) {
            train_d.push(distances[i]);
            train_s.push(same[i]);
        }
        let (t, _) = best_threshold(&train_d, &train_s);
        let test_d: Vec<f64> = part.iter().map(|&i| distances[i]).collect();
        let test_s: Vec<bool> = part.iter().map(|&i| same[i]).collect();
        held_out += accuracy_at(&test_d, &test_s, t);
    }
    let (threshold, _) = best_threshold(distances, same);
    Ok((threshold, held_out / parts.len() as f64))
}

fn rng_seed(seed: u64) -> u64 {
    crate::rng::derive_seed(seed, &[stream::CALIBRATION])
}

/// Draw `n_same` same-identity and `n_diff` different-identity pairs of
/// instance indices.
pub fn sample_pairs(instances: &[Instance], n_same: usize, n_diff: usize, seed: u64) -> Result<Vec<(usize, usize, bool)>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_class.entry(inst.y1).or_default().push(i);
    }
    let mut same_pool = Vec::new();
    for idx in by_class.values() {
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                same_pool.push((idx[a], idx[b]));
            }
        }
    }
    if by_class.len() < 2 || same_pool.is_empty() {
        return Err(Error::TooFewSamples("pair sampling needs two identities and one identity with two instances".into()));
    }
    let mut rng = rng_from(seed, &[stream::PAIRS]);
    same_pool.shuffle(&mut rng);
    let mut pairs: Vec<(usize, usize, bool)> = same_pool
        .iter()
        .cycle()
        .take(n_same)
        .map(|&(a, b)| (a, b, true))
        .collect();
    let n = instances.len();
    while pairs.len() < n_same + n_diff {
        let a = rand::Rng::random_range(&mut rng, 0..n);
        let b = rand::Rng::random_range(&mut rng, 0..n);
        if instances[a].y1 != instances[b].y1 {
            pairs.push((a, b, false));
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub n_same: usize,
    pub n_diff: usize,
    pub folds: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            n_same: 500,
            n_diff: 500,
            folds: 10,
        }
    }
}

/// Calibrate a verification student on pairs drawn from `instances`.
pub fn build_verification(extractor: Arc<Extractor>, instances: &[Instance], cfg: &VerificationConfig, seed: u64) -> Result<VerificationStudent> {
    let pairs = sample_pairs(instances, cfg.n_same, cfg.n_diff, seed)?;
    let feats: Vec<Vec<f64>> = instances.iter().map(|i| extractor.extract(&i.x)).collect::<Result<_>>()?;
    let distances: Vec<f64> = pairs.iter().map(|&(a, b, _)| euclidean(&feats[a], &feats[b])).collect();
    let same: Vec<bool> = pairs.iter().map(|p| p.2).collect();
    let (threshold, accuracy) = calibrate_threshold(&distances, &same, cfg.folds, seed)?;
    Ok(VerificationStudent {
        extractor,
        threshold,
        accuracy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Number of head identities `c`.
    pub n_classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Share of each identity's images held out for validation.
    pub validation_fraction: f64,
    pub min_accuracy: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            n_classes: 10,
            epochs: 300,
            learning_rate: 0.5,
            validation_fraction: 0.2,
            min_accuracy: 0.9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecognitionStudent {
    pub extractor: Arc<Extractor>,
    pub head_classes: Vec<u32>,
    /// `c x k`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub validation_accuracy: f64,
    pub epoch_loss: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl RecognitionStudent {
    pub fn n_classes(&self) -> usize {
        self.head_classes.len()
    }

    fn logits(&self, f: &[f64]) -> Vec<f64> {
        let k = f.len();
        (0..self.n_classes())
            .map(|c| self.bias[c] + self.weights[c * k..(c + 1) * k].iter().zip(f).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Confidence scores for an already extracted feature vector.
    pub fn head(&self, f: &[f64]) -> Vec<f64> {
        softmax(&self.logits(f))
    }
}

/// Softmax confidence vector over the head identities.
pub fn recognition_api(student: &RecognitionStudent, x: &[f64]) -> Result<Vec<f64>> {
    let f = student.extractor.extract(x)?;
    Ok(student.head(&f))
}

/// Train a softmax head on frozen features of `head_instances`.
///
/// Head identities must be disjoint from `forbidden` (the target identities)
/// and every instance must belong to a head identity.
pub fn finetune_student(
    extractor: Arc<Extractor>,
    head_instances: &[Instance],
    head_classes: &[u32],
    forbidden: &BTreeSet<u32>,
    cfg: &HeadConfig,
    seed: u64,
) -> Result<RecognitionStudent> {
    if head_classes.len() < 2 {
        return Err(Error::config("head.n_classes", "at least two head identities are required"));
    }
    if let Some(c) = head_classes.iter().find(|c| forbidden.contains(c)) {
        return Err(Error::ClassOverlap(format!("head identity {c} is also a target identity")));
    }
    let index: BTreeMap<u32, usize> = head_classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    if index.len() != head_classes.len() {
        return Err(Error::config("head_classes", "duplicate identity"));
    }
    if let Some(inst) = head_instances.iter().find(|i| !index.contains_key(&i.y1)) {
        return Err(Error::ClassOverlap(format!("instance {} is not from a head identity", inst.id)));
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(Error::config("head.validation_fraction", "must lie strictly between 0 and 1"));
    }

    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); head_classes.len()];
    for (i, inst) in head_instances.iter().enumerate() {
        per_class[index[&inst.y1]].push(i);
    }
    let mut rng = rng_from(seed, &[stream::HEAD_SPLIT]);
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (c, idx) in per_class.iter_mut().enumerate() {
        if idx.len() < 2 {
            return Err(Error::TooFewSamples(format!(
                "head identity {} needs at least 2 instances",
                head_classes[c]
            )));
        }
        idx.shuffle(&mut rng);
        let n_valid = ((idx.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, idx.len() - 1);
        valid.extend(idx[..n_valid].iter().map(|&i| (i, c)));
        train.extend(idx[n_valid..].iter().map(|&i| (i, c)));
    }

    let feats: Vec<Vec<f64>> = head_instances.iter().map(|i| extractor.extract(&i.x)).collect::<Result<_>>()?;
    let k = extractor.feature_dim();
    let c = head_classes.len();
    let mut student = RecognitionStudent {
        extractor,
        head_classes: head_classes.to_vec(),
        weights: vec![0.0; c * k],
        bias: vec![0.0; c],
        validation_accuracy: 0.0,
        epoch_loss: Vec::with_capacity(cfg.epochs),
    };
    let n = train.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; c * k];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        for &(i, y) in &train {
            let p = student.head(&feats[i]);
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            for j in 0..c {
                let d = p[j] - if j == y { 1.0 } else { 0.0 };
                gb[j] += d;
                for (g, f) in gw[j * k..(j + 1) * k].iter_mut().zip(&feats[i]) {
                    *g += d * f;
                }
            }
        }
        student.epoch_loss.push(loss / n);
        for (w, g) in student.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * g / n;
        }
        for (b, g) in student.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g / n;
        }
    }
    let hits = valid
        .iter()
        .filter(|&&(i, y)| {
            let p = student.head(&feats[i]);
            (0..c).fold(0, |b, j| if p[j] > p[b] { j } else { b }) == y
        })
        .count();
    student.validation_accuracy = hits as f64 / valid.len() as f64;
    if student.validation_accuracy < cfg.min_accuracy {
        return Err(Error::NonConvergence {
            accuracy: student.validation_accuracy,
            required: cfg.min_accuracy,
        });
    }
    Ok(student)
}

/// `c` public identities, alternating attribute values where possible.
pub fn pick_public_classes(world: &World, c: usize) -> Result<Vec<u32>> {
    let attrs = world.class_attributes();
    let public = world.public_classes();
    if public.len() < c {
        return Err(Error::TooFewSamples(format!(
            "{c} head identities requested but the public pool has {}",
            public.len()
        )));
    }
    let (mut ones, mut zeros): (Vec<u32>, Vec<u32>) = public.iter().partition(|id| attrs[id]);
    ones.reverse();
    zeros.reverse();
    let mut out = Vec::with_capacity(c);
    while out.len() < c {
        let prefer_one = out.len() % 2 == 1;
        let next = if prefer_one { ones.pop().or_else(|| zeros.pop()) } else { zeros.pop().or_else(|| ones.pop()) };
        out.push(next.expect("public pool holds at least c identities"));
    }
    out.sort_unstable();
    Ok(out)
}

/// The attacker-facing bundle: the three surfaces plus any output filters.
#[derive(Clone, Debug)]
pub struct Apis {
    pub extractor: Arc<Extractor>,
    pub verification: Option<VerificationStudent>,
    pub recognition: Option<RecognitionStudent>,
    pub filters: Vec<DefenseSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub verification: VerificationConfig,
    pub head: HeadConfig,
}

impl Apis {
    /// Feature surface only, no students and no filters.
    pub fn features_only(extractor: Arc<Extractor>) -> Self {
        Apis {
            extractor,
            verification: None,
            recognition: None,
            filters: Vec::new(),
        }
    }

    /// Calibrate the verification student and fine-tune the recognition head
    /// on the world's public identities.
    pub fn build(world: &World, cfg: &StudentConfig, seed: u64) -> Result<Self> {
        let extractor = Arc::new(world.extractor()?.clone());
        let verification = build_verification(extractor.clone(), &world.public, &cfg.verification, seed)?;
        let recognition = Self::head_for(world, extractor.clone(), &cfg.head, seed)?;
        Ok(Apis {
            extractor,
            verification: Some(verification),
            recognition: Some(recognition),
            filters: Vec::new(),
        })
    }

    pub(crate) fn head_for(world: &World, extractor: Arc<Extractor>, cfg: &HeadConfig, seed: u64) -> Result<RecognitionStudent> {
        let head_classes = pick_public_classes(world, cfg.n_classes)?;
        let wanted: BTreeSet<u32> = head_classes.iter().copied().collect();
        let head_instances: Vec<Instance> = world.public.iter().filter(|i| wanted.contains(&i.y1)).cloned().collect();
        let target: BTreeSet<u32> = world.target.iter().map(|i| i.y1).collect();
        finetune_student(extractor, &head_instances, &head_classes, &target, cfg, seed)
    }

    pub fn with_filters(&self, filters: Vec<DefenseSpec>) -> Self {
        Apis {
            filters,
            ..self.clone()
        }
    }

    pub fn feature(&self, x: &[f64], query: u64) -> Result<Vec<f64>> {
        let f = feature_api(&self.extractor, x)?;
        apply_filters(&self.filters, f, Surface::Feature, query)?.into_dense()
    }

    pub fn distance(&self, x1: &[f64], x2: &[f64], query: u64) -> Result<f64> {
        let student = self
            .verification
            .as_ref()
            .ok_or_else(|| Error::Unsupported("no verification student attached".into()))?;
        let d = verify_api(student, x1, x2)?;
        let out = apply_filters(&self.filters, vec![d], Surface::Verification, query)?.into_dense()?;
        Ok(out[0])
    }

    /// Distance between two already extracted clean feature vectors, passed
    /// through the verification filters. Equivalent to [`Apis::distance`] on
    /// the original inputs.
    pub fn distance_of_features(&self, f1: &[f64], f2: &[f64], query: u64) -> Result<f64> {
        let out = apply_filters(&self.filters, vec![euclidean(f1, f2)], Surface::Verification, query)?.into_dense()?;
        Ok(out[0])
    }

    pub fn recognize(&self, x: &[f64], query: u64) -> Result<Response> {
        let f = self.extractor.extract(x)?;
        self.recognize_features(&f, query)
    }

    /// Recognition response for an already extracted clean feature vector.
    pub fn recognize_features(&self, f: &[f64], query: u64) -> Result<Response> {
        let student = self
            .recognition
            .as_ref()
            .ok_or_else(|| Error::Unsupported("no recognition student attached".into()))?;
        apply_filters(&self.filters, student.head(f), Surface::Recognition, query)
    }

    pub fn n_head_classes(&self) -> Option<usize> {
        self.recognition.as_ref().map(|r| r.n_classes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_oracle_features, WorldConfig};
    use proptest::prelude::*;

    fn oracle(dim: usize) -> Arc<Extractor> {
        Arc::new(Extractor::Identity { dim })
    }

    fn inst(y1: u32, x: Vec<f64>) -> Instance {
        Instance {
            id: format!("{y1}"),
            x,
            y1,
            y2: false,
            s: false,
        }
    }

    #[test]
    fn three_four_five() {
        let v = VerificationStudent {
            extractor: oracle(4),
            threshold: 1.0,
            accuracy: 1.0,
        };
        let a = [3.0, 0.0, 0.0, 0.0];
        let b = [0.0, 4.0, 0.0, 0.0];
        assert_eq!(verify_api(&v, &a, &b).unwrap(), 5.0);
        assert_eq!(verify_api(&v, &a, &a).unwrap(), 0.0);
        assert!(matches!(verify_api(&v, &a, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn separated_distances_calibrate_perfectly() {
        let mut d = Vec::new();
        let mut s = Vec::new();
        for i in 0..50 {
            d.push(0.1 + 0.8 * i as f64 / 50.0);
            s.push(true);
            d.push(2.1 + i as f64 / 50.0);
            s.push(false);
        }
        let (t, acc) = calibrate_threshold(&d, &s, 10, 3).unwrap();
        assert_eq!(acc, 1.0);
        assert!(t > 1.0 && t < 2.0, "threshold {t}");
        assert!(matches!(calibrate_threshold(&d, &vec![true; d.len()], 10, 3), Err(Error::AllOneClass)));
    }

    #[test]
    fn threshold_search_is_exact_on_small_case() {
        // Brute force over every midpoint.
        let d = [0.5, 1.5, 1.0, 2.5, 3.0, 0.2];
        let s = [true, false, true, true, false, true];
        let (t, acc) = best_threshold(&d, &s);
        let mut sorted = d.to_vec();
        sorted.sort_by(f64::total_cmp);
        let best = sorted
            .windows(2)
            .map(|w| accuracy_at(&d, &s, 0.5 * (w[0] + w[1])))
            .fold(0.0, f64::max);
        assert_eq!(acc, best);
        assert_eq!(accuracy_at(&d, &s, t), best);
    }

    fn two_cluster_head() -> (Vec<Instance>, Vec<u32>) {
        let mut rows = Vec::new();
        for j in 0..10 {
            let e = j as f64 * 0.01;
            rows.push(inst(100, vec![3.0 + e, 0.0]));
            rows.push(inst(101, vec![-3.0 - e, 0.0]));
        }
        (rows, vec![100, 101])
    }

    #[test]
    fn separable_head_validates_perfectly() {
        let (rows, classes) = two_cluster_head();
        let s = finetune_student(oracle(2), &rows, &classes, &BTreeSet::new(), &HeadConfig::default(), 1).unwrap();
        assert_eq!(s.validation_accuracy, 1.0);
        assert!(s.epoch_loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn finetuning_leaves_teacher_weights_unchanged() {
        let teacher = crate::world::Teacher::new_zeroed(2, 3, vec![0, 1]);
        let before = teacher.checksum();
        let ex = Arc::new(Extractor::Teacher(teacher));
        let (rows, classes) = two_cluster_head();
        let cfg = HeadConfig {
            min_accuracy: 0.0,
            ..HeadConfig::default()
        };
        finetune_student(ex.clone(), &rows, &classes, &BTreeSet::new(), &cfg, 1).unwrap();
        match &*ex {
            Extractor::Teacher(t) => assert_eq!(t.checksum(), before),
            Extractor::Identity { .. } => unreachable!(),
        }
    }

    #[test]
    fn overlapping_head_is_rejected() {
        let (rows, classes) = two_cluster_head();
        let forbidden: BTreeSet<u32> = [101].into_iter().collect();
        let r = finetune_student(oracle(2), &rows, &classes, &forbidden, &HeadConfig::default(), 1);
        assert!(matches!(r, Err(Error::ClassOverlap(_))));
        let r = finetune_student(oracle(2), &rows, &[100, 102], &BTreeSet::new(), &HeadConfig::default(), 1);
        assert!(matches!(r, Err(Error::ClassOverlap(_))));
    }

    #[test]
    fn zero_head_is_uniform() {
        let s = RecognitionStudent {
            extractor: oracle(3),
            head_classes: vec![1, 2, 3, 4],
            weights: vec![0.0; 12],
            bias: vec![0.0; 4],
            validation_accuracy: 1.0,
            epoch_loss: Vec::new(),
        };
        assert_eq!(recognition_api(&s, &[1.0, -2.0, 5.0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn desk_students_meet_their_gates() {
        let world = generate_oracle_features(&WorldConfig::default()).unwrap();
        let apis = Apis::build(&world, &StudentConfig::default(), 0).unwrap();
        let v = apis.verification.as_ref().unwrap();
        assert!(v.accuracy >= 0.9, "verification accuracy {}", v.accuracy);
        assert!(v.threshold > 0.0);
        let r = apis.recognition.as_ref().unwrap();
        assert!(r.validation_accuracy >= 0.9);
        assert_eq!(r.n_classes(), 10);
        let x = &world.target[0].x;
        assert_eq!(apis.feature(x, 0).unwrap(), feature_api(&apis.extractor, x).unwrap());
        assert_eq!(apis.feature(x, 0).unwrap(), apis.feature(x, 0).unwrap());
    }

    proptest! {
        #[test]
        fn verification_is_a_metric(a in prop::collection::vec(-5.0..5.0f64, 4),
                                    b in prop::collection::vec(-5.0..5.0f64, 4),
                                    c in prop::collection::vec(-5.0..5.0f64, 4)) {
            let v = VerificationStudent { extractor: oracle(4), threshold: 1.0, accuracy: 1.0 };
            let ab = verify_api(&v, &a, &b).unwrap();
            prop_assert_eq!(ab, verify_api(&v, &b, &a).unwrap());
            let ac = verify_api(&v, &a, &c).unwrap();
            let cb = verify_api(&v, &c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn recognition_is_a_distribution_and_shift_invariant(x in prop::collection::vec(-5.0..5.0f64, 3),
                                                              w in prop::collection::vec(-2.0..2.0f64, 12),
                                                              shift in -10.0..10.0f64) {
            let s = RecognitionStudent {
                extractor: oracle(3),
                head_classes: vec![1, 2, 3, 4],
                weights: w,
                bias: vec![0.1, -0.2, 0.3, 0.0],
                validation_accuracy: 1.0,
                epoch_loss: Vec::new(),
            };
            let p = recognition_api(&s, &x).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut shifted = s.clone();
            shifted.bias.iter_mut().for_each(|b| *b += shift);
            let q = recognition_api(&shifted, &x).unwrap();
            for (u, v) in p.iter().zip(&q) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
