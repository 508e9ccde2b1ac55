//! Output filters applied to API responses (noise, rounding, top-k masking),
//! the attacker's two ways of reading masked confidences, and the loop that
//! reruns an attack under a list of filters.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::membership::{covariance_upper_triangle, run_attack, AttackSpec, Scenario};
use crate::metrics::mean_sd;
use crate::par;
use crate::rng::{derive_seed, rng_from, stream};
use crate::student::Surface;

/// One response filter. A chain of filters is applied in declared order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseSpec {
    None,
    /// Replace each element `x` by a draw from `N(x, (eta * |x|)^2)`.
    Randomize {
        eta: f64,
        #[serde(default)]
        seed: u64,
    },
    Round { sig_figs: u32 },
    /// Reveal only the `keep_k` highest confidences (recognition only).
    Topk {
        keep_k: usize,
        #[serde(default)]
        renormalize: bool,
    },
}

impl DefenseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::None => "none",
            DefenseSpec::Randomize { .. } => "randomize",
            DefenseSpec::Round { .. } => "round",
            DefenseSpec::Topk { .. } => "topk",
        }
    }

    /// The swept parameter, as written in report tables.
    pub fn param(&self) -> String {
        match self {
            DefenseSpec::None => String::new(),
            DefenseSpec::Randomize { eta, .. } => eta.to_string(),
            DefenseSpec::Round { sig_figs } => sig_figs.to_string(),
            DefenseSpec::Topk { keep_k, .. } => keep_k.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DefenseSpec::Randomize { eta, .. } if !(*eta >= 0.0 && eta.is_finite()) => {
                Err(Error::config("defense.eta", "must be a non-negative finite number"))
            }
            DefenseSpec::Round { sig_figs: 0 } => Err(Error::config("defense.sig_figs", "must be at least 1")),
            DefenseSpec::Topk { keep_k: 0, .. } => Err(Error::config("defense.keep_k", "must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// A filtered response: a full vector, or the `(index, score)` pairs a top-k
/// filter chose to reveal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Dense(Vec<f64>),
    Masked(Vec<(usize, f64)>),
}

impl Response {
    pub fn into_dense(self) -> Result<Vec<f64>> {
        match self {
            Response::Dense(v) => Ok(v),
            Response::Masked(_) => Err(Error::Unsupported("response was masked by a top-k filter".into())),
        }
    }

    fn values_mut(&mut self) -> Vec<&mut f64> {
        match self {
            Response::Dense(v) => v.iter_mut().collect(),
            Response::Masked(v) => v.iter_mut().map(|(_, s)| s).collect(),
        }
    }
}

/// Relative Gaussian noise followed by the surface's normalization:
/// confidences are clamped at zero and rescaled to sum to one, a distance is
/// clamped at zero, features are left as drawn.
pub fn randomize_output(v: &[f64], eta: f64, seed: u64, query: u64, surface: Surface) -> Vec<f64> {
    if eta == 0.0 {
        return v.to_vec();
    }
    let mut rng = rng_from(seed, &[stream::DEFENSE, query]);
    let mut out: Vec<f64> = v
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + eta * x.abs() * z
        })
        .collect();
    match surface {
        Surface::Feature => {}
        Surface::Verification => out.iter_mut().for_each(|x| *x = x.max(0.0)),
        Surface::Recognition => normalize_probabilities(&mut out),
    }
    out
}

/// Clamp at zero and rescale to unit sum; an all-zero vector becomes uniform.
fn normalize_probabilities(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Round to `sig_figs` significant decimal digits, halves away from zero.
pub fn round_sig(x: f64, sig_figs: u32) -> f64 {
    if x == 0.0 || !x.is_finite() || sig_figs >= 17 {
        return x;
    }
    let mut e = x.abs().log10().floor() as i32;
    // log10 can land one off near powers of ten.
    if 10f64.powi(e) > x.abs() {
        e -= 1;
    } else if 10f64.powi(e + 1) <= x.abs() {
        e += 1;
    }
    let p = e - sig_figs as i32 + 1;
    if p >= 0 {
        let f = 10f64.powi(p);
        (x / f).round() * f
    } else {
        let f = 10f64.powi(-p);
        (x * f).round() / f
    }
}

pub fn round_output(v: &[f64], sig_figs: u32) -> Vec<f64> {
    v.iter().map(|&x| round_sig(x, sig_figs)).collect()
}

/// The `keep_k` largest scores with their indices, descending, ties to the
/// lower index. Scores are passed through unchanged.
pub fn topk_mask(confidences: &[f64], keep_k: usize) -> Result<Vec<(usize, f64)>> {
    if keep_k == 0 || keep_k > confidences.len() {
        return Err(Error::OutOfRange(format!(
            "keep_k {keep_k} outside 1..={}",
            confidences.len()
        )));
    }
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    idx.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    Ok(idx.into_iter().take(keep_k).map(|i| (i, confidences[i])).collect())
}

/// Run `values` through every filter in order. `query` keys the noise so a
/// repeated query gets the same answer.
pub fn apply_filters(filters: &[DefenseSpec], values: Vec<f64>, surface: Surface, query: u64) -> Result<Response> {
    let mut r = Response::Dense(values);
    for (pos, f) in filters.iter().enumerate() {
        r = match (f, r) {
            (DefenseSpec::None, r) => r,
            (DefenseSpec::Randomize { eta, seed }, Response::Dense(v)) => {
                let s = derive_seed(*seed, &[pos as u64, surface.tag()]);
                Response::Dense(randomize_output(&v, *eta, s, query, surface))
            }
            (DefenseSpec::Randomize { eta, seed }, Response::Masked(m)) => {
                let s = derive_seed(*seed, &[pos as u64, surface.tag()]);
                let scores: Vec<f64> = m.iter().map(|p| p.1).collect();
                let noised = randomize_output(&scores, *eta, s, query, Surface::Verification);
                Response::Masked(m.iter().zip(noised).map(|(p, v)| (p.0, v)).collect())
            }
            (DefenseSpec::Round { sig_figs }, mut r) => {
                for x in r.values_mut() {
                    *x = round_sig(*x, *sig_figs);
                }
                r
            }
            (DefenseSpec::Topk { keep_k, renormalize }, Response::Dense(v)) => {
                if surface != Surface::Recognition {
                    return Err(Error::Unsupported(format!("top-k masking applies to recognition responses, not {}", surface.name())));
                }
                let mut m = topk_mask(&v, *keep_k)?;
                if *renormalize {
                    let s: f64 = m.iter().map(|p| p.1).sum();
                    if s > 0.0 {
                        m.iter_mut().for_each(|p| p.1 /= s);
                    }
                }
                Response::Masked(m)
            }
            (DefenseSpec::Topk { .. }, Response::Masked(_)) => {
                return Err(Error::Unsupported("top-k filter applied twice".into()));
            }
        };
    }
    Ok(r)
}

/// How an attacker turns (possibly masked) confidence responses into rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterStrategy {
    /// Slot `j` holds the `j`-th largest revealed score.
    TruncatedK,
    /// Hidden entries are filled with zero in a length-`c` vector.
    #[default]
    ZerofillC,
}

impl CounterStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CounterStrategy::TruncatedK => "truncated_k",
            CounterStrategy::ZerofillC => "zerofill_c",
        }
    }
}

/// Rows the attacker builds from one identity's responses.
pub fn counter_topk_rows(responses: &[Response], strategy: CounterStrategy, c: usize) -> Result<Vec<Vec<f64>>> {
    let width = responses.first().map(|r| match r {
        Response::Dense(v) => v.len(),
        Response::Masked(m) => m.len(),
    });
    let mut rows = Vec::with_capacity(responses.len());
    for r in responses {
        let len = match r {
            Response::Dense(v) => v.len(),
            Response::Masked(m) => m.len(),
        };
        if Some(len) != width {
            return Err(Error::LengthMismatch {
                left: width.unwrap_or(0),
                right: len,
            });
        }
        let row = match (strategy, r) {
            (CounterStrategy::ZerofillC, Response::Dense(v)) => {
                if v.len() != c {
                    return Err(Error::DimensionMismatch { expected: c, found: v.len() });
                }
                v.clone()
            }
            (CounterStrategy::ZerofillC, Response::Masked(m)) => {
                let mut v = vec![0.0; c];
                for &(i, s) in m {
                    if i >= c {
                        return Err(Error::OutOfRange(format!("class index {i} not below {c}")));
                    }
                    v[i] = s;
                }
                v
            }
            (CounterStrategy::TruncatedK, Response::Dense(v)) => {
                let mut s = v.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                s
            }
            (CounterStrategy::TruncatedK, Response::Masked(m)) => {
                let mut s: Vec<f64> = m.iter().map(|p| p.1).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                s
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Upper-triangular covariance entries of the counter-strategy rows.
pub fn counter_topk_features(responses: &[Response], strategy: CounterStrategy, c: usize) -> Result<Vec<f64>> {
    covariance_upper_triangle(&counter_topk_rows(responses, strategy, c)?)
}

/// One row of a defense table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub defense: String,
    pub param: String,
    pub attack: String,
    pub aucs: Vec<f64>,
    pub auc_mean: f64,
    pub auc_sd: f64,
}

/// Rerun `attack` on every scenario once without filters and once per
/// defense, reporting mean and standard deviation of the AUC across
/// scenarios.
pub fn evaluate_defense(scenarios: &[Scenario], attack: &AttackSpec, defenses: &[DefenseSpec]) -> Result<Vec<DefenseRow>> {
    for d in defenses {
        d.validate()?;
    }
    let mut specs = vec![DefenseSpec::None];
    specs.extend(defenses.iter().filter(|d| **d != DefenseSpec::None).cloned());
    let cells: Vec<(usize, usize)> = (0..specs.len()).flat_map(|d| (0..scenarios.len()).map(move |s| (d, s))).collect();
    let aucs = par::try_map_slice(&cells, |&(d, s)| {
        let scenario = scenarios[s].with_filters(vec![specs[d].clone()]);
        run_attack(&scenario, attack).map(|r| r.auc)
    })?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(d, spec)| {
            let v: Vec<f64> = aucs[d * scenarios.len()..(d + 1) * scenarios.len()].to_vec();
            let (auc_mean, auc_sd) = mean_sd(&v);
            DefenseRow {
                defense: spec.name().to_string(),
                param: spec.param(),
                attack: attack.label(),
                aucs: v,
                auc_mean,
                auc_sd,
            }
        })
        .collect())
}

pub fn write_defense_csv<W: Write>(rows: &[DefenseRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["defense", "param", "attack", "auc_mean", "auc_sd"])?;
    for r in rows {
        out.write_record([
            r.defense.clone(),
            r.param.clone(),
            r.attack.clone(),
            r.auc_mean.to_string(),
            r.auc_sd.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_examples() {
        assert_eq!(round_sig(1.232, 1), 1.0);
        assert_eq!(round_sig(0.04567, 2), 0.046);
        assert_eq!(round_sig(0.0, 3), 0.0);
        assert_eq!(round_sig(-2.5, 1), -3.0);
        assert_eq!(round_sig(0.125, 2), 0.13);
        assert_eq!(round_sig(9.96, 2), 10.0);
        assert_eq!(round_sig(1234.0, 2), 1200.0);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_mask(&[0.7, 0.2, 0.1], 1).unwrap(), vec![(0, 0.7)]);
        assert_eq!(topk_mask(&[0.4, 0.4, 0.2], 1).unwrap(), vec![(0, 0.4)]);
        assert_eq!(topk_mask(&[0.1, 0.2, 0.7], 3).unwrap(), vec![(2, 0.7), (1, 0.2), (0, 0.1)]);
        assert!(topk_mask(&[0.5, 0.5], 3).is_err());
        assert!(topk_mask(&[0.5, 0.5], 0).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = vec![0.3, -1.7, 2.0];
        for s in [Surface::Feature, Surface::Verification, Surface::Recognition] {
            assert_eq!(randomize_output(&v, 0.0, 1, 2, s), v);
        }
    }

    #[test]
    fn noise_law_matches_relative_normal() {
        let n = 100_000u64;
        let draws: Vec<f64> = (0..n).map(|q| randomize_output(&[1.0], 1.0, 42, q, Surface::Feature)[0]).collect();
        let (mean, sd) = mean_sd(&draws);
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn noised_distance_stays_non_negative() {
        for q in 0..200 {
            assert!(randomize_output(&[0.5], 5.0, 3, q, Surface::Verification)[0] >= 0.0);
        }
    }

    #[test]
    fn feature_noise_changes_the_response() {
        let clean = vec![0.4, -0.2, 1.3];
        let f = [DefenseSpec::Randomize { eta: 1.0, seed: 9 }];
        let noisy = apply_filters(&f, clean.clone(), Surface::Feature, 0).unwrap().into_dense().unwrap();
        assert_ne!(noisy, clean);
        let again = apply_filters(&f, clean.clone(), Surface::Feature, 0).unwrap().into_dense().unwrap();
        assert_eq!(noisy, again);
    }

    #[test]
    fn topk_rejected_off_recognition() {
        let f = [DefenseSpec::Topk { keep_k: 1, renormalize: false }];
        assert!(apply_filters(&f, vec![1.0, 2.0], Surface::Feature, 0).is_err());
    }

    #[test]
    fn zerofill_with_full_k_matches_clean_rows() {
        let clean = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6]];
        let f = [DefenseSpec::Topk { keep_k: 3, renormalize: false }];
        let masked: Vec<Response> = clean
            .iter()
            .map(|v| apply_filters(&f, v.clone(), Surface::Recognition, 0).unwrap())
            .collect();
        let rows = counter_topk_rows(&masked, CounterStrategy::ZerofillC, 3).unwrap();
        assert_eq!(rows, clean);
        assert_eq!(
            counter_topk_features(&masked, CounterStrategy::ZerofillC, 3).unwrap(),
            covariance_upper_triangle(&clean).unwrap()
        );
    }

    #[test]
    fn truncated_top1_is_a_single_variance() {
        let clean = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6]];
        let f = [DefenseSpec::Topk { keep_k: 1, renormalize: false }];
        let masked: Vec<Response> = clean
            .iter()
            .map(|v| apply_filters(&f, v.clone(), Surface::Recognition, 0).unwrap())
            .collect();
        let feats = counter_topk_features(&masked, CounterStrategy::TruncatedK, 3).unwrap();
        assert_eq!(feats.len(), 1);
        let (_, sd) = mean_sd(&[0.5, 0.6, 0.6]);
        assert!((feats[0] - sd * sd).abs() < 1e-15);
        let ragged = vec![Response::Masked(vec![(0, 0.5)]), Response::Masked(vec![(0, 0.5), (1, 0.2)])];
        assert!(counter_topk_rows(&ragged, CounterStrategy::TruncatedK, 3).is_err());
    }

    proptest! {
        #[test]
        fn rounding_is_idempotent(x in -1e6..1e6f64, s in 1u32..10) {
            let r = round_sig(x, s);
            prop_assert_eq!(round_sig(r, s), r);
        }

        #[test]
        fn high_precision_rounding_is_identity(x in -1e12..1e12f64) {
            prop_assert_eq!(round_sig(x, 17), x);
        }

        #[test]
        fn noised_confidences_stay_distributions(v in prop::collection::vec(0.0..1.0f64, 2..12), eta in 0.0..10.0f64, q in 0u64..1000) {
            let s: f64 = v.iter().sum::<f64>() + 1e-3;
            let p: Vec<f64> = v.iter().map(|x| (x + 1e-3 / v.len() as f64) / s).collect();
            let r = randomize_output(&p, eta, 5, q, Surface::Recognition);
            prop_assert!(r.iter().all(|&x| x >= 0.0));
            if eta > 0.0 {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn topk_is_a_descending_subset(v in prop::collection::vec(0.0..1.0f64, 1..15), k in 1usize..15) {
            let k = k.min(v.len());
            let m = topk_mask(&v, k).unwrap();
            prop_assert_eq!(m.len(), k);
            prop_assert!(m.windows(2).all(|w| w[0].1 >= w[1].1));
            prop_assert!(m.iter().all(|&(i, s)| v[i] == s));
        }
    }
}
