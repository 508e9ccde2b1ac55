//! Confusion metrics, ROC curves and fold splitting.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

/// Counts and rates for a binary prediction against binary labels.
///
/// Ratios with a zero denominator are reported as 0 and set `degenerate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub degenerate: bool,
}

impl Confusion {
    fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let fpr = ratio(fp, fp + tn);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate = true;
            0.0
        };
        Confusion {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            tpr: recall,
            fpr,
            degenerate,
        }
    }
}

pub fn confusion_metrics(predictions: &[bool], labels: &[bool]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::TooFewSamples("empty prediction vector".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Confusion::from_counts(tp, fp, tn, fn_))
}

/// JSON numbers with `"inf"`, `"-inf"` and `"nan"` for the values JSON lacks.
mod extended_f64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            x if x.is_nan() => s.serialize_str("nan"),
            x => s.serialize_f64(x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("expected a number, found `{other}`"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Rows with `score >= threshold` are predicted positive.
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Confusion metrics at the threshold with the highest F1.
    pub best_f1: Confusion,
    #[serde(with = "extended_f64")]
    pub best_threshold: f64,
}

/// ROC curve over every distinct score threshold, with trapezoid AUC.
///
/// Equal scores enter the sweep together, which is the same as counting a
/// tied positive/negative pair as one half.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = Confusion::from_counts(0, 0, neg, pos);
    let mut best_threshold = f64::INFINITY;
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().unwrap();
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) * 0.5;
        points.push(p);
        let c = Confusion::from_counts(tp, fp, neg - fp, pos - tp);
        if c.f1 > best.f1 {
            best = c;
            best_threshold = t;
        }
    }
    Ok(RocResult {
        points,
        auc: auc.clamp(0.0, 1.0),
        best_f1: best,
        best_threshold,
    })
}

pub fn write_roc_csv<W: Write>(roc: &RocResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fpr", "tpr", "threshold"])?;
    for p in &roc.points {
        out.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Partition `0..n` into `k` folds whose sizes differ by at most one.
///
/// With `stratify`, each label value is dealt round-robin across folds so that
/// per-label counts also differ by at most one.
pub fn kfold_split(n: usize, k: usize, stratify: Option<&[bool]>, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::OutOfRange(format!("fold count {k} must be at least 2")));
    }
    if k > n {
        return Err(Error::OutOfRange(format!("fold count {k} exceeds sample count {n}")));
    }
    let mut rng = rng_from(seed, &[stream::FOLDS, n as u64, k as u64]);
    let dealt: Vec<usize> = match stratify {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    left: labels.len(),
                    right: n,
                });
            }
            let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
            let mut neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            pos.into_iter().chain(neg).collect()
        }
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (j, i) in dealt.into_iter().enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut won = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        won += 1.0;
                    } else if scores[i] == scores[j] {
                        won += 0.5;
                    }
                }
            }
        }
        won / pairs
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_metrics(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!((c.precision, c.recall, c.f1), (0.5, 0.5, 0.5));
        assert!(!c.degenerate);

        let labels = [true, false, true, false, false];
        let c = confusion_metrics(&labels, &labels).unwrap();
        assert_eq!((c.precision, c.recall, c.f1, c.fpr), (1.0, 1.0, 1.0, 0.0));

        let c = confusion_metrics(&[false; 4], &[true, false, true, false]).unwrap();
        assert_eq!(c.precision, 0.0);
        assert!(c.degenerate);

        assert!(matches!(
            confusion_metrics(&[true], &[true, false]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn roc_examples() {
        let r = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_curve(&[0.3; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        let r = roc_curve(&[0.8, 0.6, 0.6, 0.3], &[true, false, true, false]).unwrap();
        assert_eq!(r.auc, 0.875);
        assert_eq!(brute_auc(&[0.8, 0.6, 0.6, 0.3], &[true, false, true, false]), 0.875);
        let first = r.points[0];
        let last = *r.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn roc_csv_has_header_and_all_points() {
        let r = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "fpr,tpr,threshold\n0,0,inf\n0,1,0.9\n1,1,0.1\n");
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 5, None, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let labels = [true, true, true, true, true, true, false, false, false, false];
        let folds = kfold_split(10, 2, Some(&labels), 9).unwrap();
        for f in &folds {
            let pos = f.iter().filter(|&&i| labels[i]).count();
            assert_eq!((pos, f.len() - pos), (3, 2));
        }
        assert!(kfold_split(3, 4, None, 0).is_err());
        assert_eq!(kfold_split(20, 4, None, 1).unwrap(), kfold_split(20, 4, None, 1).unwrap());
    }

    proptest! {
        #[test]
        fn trapezoid_matches_pair_counting(
            raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..80)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let r = roc_curve(&scores, &labels).unwrap();
            prop_assert!((r.auc - brute_auc(&scores, &labels)).abs() < 1e-9);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped = roc_curve(&neg, &labels).unwrap();
            prop_assert!((r.auc + flipped.auc - 1.0).abs() < 1e-9);
            for w in r.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }

        #[test]
        fn stratified_folds_balance(n in 4usize..60, k in 2usize..5, seed in any::<u64>(), bits in any::<u64>()) {
            prop_assume!(k <= n);
            let labels: Vec<bool> = (0..n).map(|i| (bits >> (i % 64)) & 1 == 1).collect();
            let folds = kfold_split(n, k, Some(&labels), seed).unwrap();
            let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let pos: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i]).count()).collect();
            prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
            let mut all = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
