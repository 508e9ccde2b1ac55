//! Membership inference: the per-instance baseline and the class-based
//! attacks that aggregate an identity's responses before deciding.
//!
//! Attacks receive [`ClassGroup`]s only. The membership flags travel
//! separately in [`Observed::membership`] and are read by the scoring step
//! (and by supervised attacks for their training folds).

mod observe;
mod stats;

use serde::{Deserialize, Serialize};

pub use observe::{assign_classes, observe, ClassGroup, Labeler, LabelerSpec, Observation, Observed, Scenario};
pub use stats::{class_distance_stats, covariance_summary, covariance_upper_triangle, CovParams, DistanceStat};

use crate::defenses::CounterStrategy;
use crate::error::{Error, Result};
use crate::learners::{fit_classifier, fit_gmm, fit_pca, predict_score, ClassifierKind, GmmConfig, Hyper, PcaModel};
use crate::linalg::{from_rows, Matrix};
use crate::metrics::{kfold_split, mean_sd, roc_curve, RocResult};
use crate::par;
use crate::rng::{derive_seed, stream};
use crate::student::Surface;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Per-instance scores: a classifier on single responses, or the raw
    /// pair distance on the verification surface.
    Firstcut,
    /// Rank identities by the covariance summary (or a distance statistic).
    ClassSummary,
    /// Rank identities by a mixture fitted to their aggregate features.
    ClassGmm,
    /// Classifier on aggregate features with identity-level folds.
    ClassSupervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ranking,
    Supervised,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ranking => "ranking",
            Mode::Supervised => "supervised",
        }
    }
}

/// Which end of a ranking statistic points at members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    High,
    Low,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    MemberHigh,
    #[default]
    MemberLow,
    /// Expanded into one run per direction.
    Both,
    /// Pick the direction on a labeled slice of identities, report on the rest.
    Calibrate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmScore {
    /// Posterior of the member component.
    #[default]
    Posterior,
    /// Weighted log-density of the member component.
    Likelihood,
}

/// Everything needed to rerun one membership attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub family: Family,
    pub surface: Surface,
    /// Defaults to logistic regression for the per-instance baseline and
    /// for verification aggregates, QDA otherwise.
    pub classifier: Option<ClassifierKind>,
    pub orientation: Orientation,
    pub params: CovParams,
    pub statistic: DistanceStat,
    pub gmm_score: GmmScore,
    /// Defaults to 2 on the feature surface and 3 elsewhere.
    pub gmm_components: Option<usize>,
    pub gmm_restarts: usize,
    pub folds: usize,
    /// Share of identities used to pick the direction under `calibrate`.
    pub calibration_fraction: f64,
    pub counter: CounterStrategy,
    pub labeler: LabelerSpec,
    /// PCA size cap for feature-surface aggregates.
    pub feature_dims: usize,
    /// PCA size cap for recognition-surface aggregates.
    pub recognition_dims: usize,
    pub hyper: Hyper,
    pub seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            family: Family::ClassSummary,
            surface: Surface::Feature,
            classifier: None,
            orientation: Orientation::default(),
            params: CovParams::default(),
            statistic: DistanceStat::Mean,
            gmm_score: GmmScore::Posterior,
            gmm_components: None,
            gmm_restarts: 5,
            folds: 5,
            calibration_fraction: 0.2,
            counter: CounterStrategy::default(),
            labeler: LabelerSpec::Oracle,
            feature_dims: 50,
            recognition_dims: 15,
            hyper: Hyper::default(),
            seed: 0,
        }
    }
}

impl AttackSpec {
    pub fn mode(&self) -> Mode {
        match (self.family, self.surface) {
            (Family::Firstcut, Surface::Verification) => Mode::Ranking,
            (Family::Firstcut, _) | (Family::ClassSupervised, _) => Mode::Supervised,
            _ => Mode::Ranking,
        }
    }

    pub fn classifier(&self) -> ClassifierKind {
        self.classifier.unwrap_or(match (self.family, self.surface) {
            (Family::ClassSupervised, Surface::Feature | Surface::Recognition) => ClassifierKind::Qda,
            _ => ClassifierKind::Logistic,
        })
    }

    pub fn gmm_components(&self) -> usize {
        self.gmm_components.unwrap_or(match self.surface {
            Surface::Feature => 2,
            _ => 3,
        })
    }

    /// Attack name used in reports.
    pub fn label(&self) -> String {
        let base = match (self.family, self.surface) {
            (Family::Firstcut, Surface::Verification) => "firstcut_distance".to_string(),
            (Family::Firstcut, _) => format!("firstcut_{}", self.classifier().name()),
            (Family::ClassSummary, Surface::Verification) => format!("class_{}", self.statistic.name()),
            (Family::ClassSummary, _) => "class_summary".to_string(),
            (Family::ClassGmm, _) => match self.gmm_score {
                GmmScore::Posterior => "class_gmm".to_string(),
                GmmScore::Likelihood => "class_gmm_likelihood".to_string(),
            },
            (Family::ClassSupervised, _) => format!("class_{}", self.classifier().name()),
        };
        if self.mode() == Mode::Supervised {
            return base;
        }
        let suffix = match self.orientation {
            Orientation::MemberHigh => "high",
            Orientation::MemberLow => "low",
            Orientation::Both => "both",
            Orientation::Calibrate => "calibrated",
        };
        format!("{base}/{suffix}")
    }

    /// One spec per direction when the orientation is `both`.
    pub fn expand(&self) -> Vec<AttackSpec> {
        if self.orientation == Orientation::Both && self.mode() == Mode::Ranking {
            [Orientation::MemberHigh, Orientation::MemberLow]
                .into_iter()
                .map(|o| AttackSpec {
                    orientation: o,
                    ..self.clone()
                })
                .collect()
        } else {
            vec![self.clone()]
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.folds < 2 {
            return Err(Error::config("attack.folds", "must be at least 2"));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::config("attack.calibration_fraction", "must lie strictly between 0 and 1"));
        }
        if self.feature_dims == 0 || self.recognition_dims == 0 {
            return Err(Error::config("attack.feature_dims", "PCA caps must be at least 1"));
        }
        if self.gmm_components() == 0 {
            return Err(Error::config("attack.gmm_components", "must be at least 1"));
        }
        Ok(())
    }
}

/// Aggregate feature rows, one per group.
#[derive(Clone, Debug)]
pub struct ClassFeatures {
    pub matrix: Matrix,
    /// Dimension before PCA.
    pub raw_dim: usize,
    pub pca: Option<PcaModel>,
}

/// Feature surface: covariance upper triangle reduced by PCA to at most
/// `feature_dims`. Recognition: the same over confidence rows with
/// `recognition_dims`. Verification: the six distance statistics.
pub fn build_class_feature_vectors(groups: &[ClassGroup], surface: Surface, feature_dims: usize, recognition_dims: usize) -> Result<ClassFeatures> {
    if groups.is_empty() {
        return Err(Error::TooFewSamples("no class groups".into()));
    }
    let rows: Vec<Vec<f64>> = par::try_map_slice(groups, |g| match (&g.observation, surface) {
        (Observation::Distances(d), Surface::Verification) => Ok(class_distance_stats(d)?.to_vec()),
        (Observation::Rows(r), Surface::Feature | Surface::Recognition) => covariance_upper_triangle(r),
        _ => Err(Error::Unsupported(format!("group {} does not hold {} observations", g.y1, surface.name()))),
    })?;
    let raw = from_rows(&rows)?;
    let raw_dim = raw.ncols();
    let cap = match surface {
        Surface::Feature => feature_dims,
        Surface::Recognition => recognition_dims,
        Surface::Verification => return Ok(ClassFeatures { matrix: raw, raw_dim, pca: None }),
    };
    let available = raw_dim.min(raw.nrows().saturating_sub(1));
    if available == 0 {
        return Err(Error::TooFewSamples("need at least two groups for PCA".into()));
    }
    let pca = fit_pca(&raw, cap.min(available))?;
    Ok(ClassFeatures {
        matrix: pca.transform(&raw)?,
        raw_dim,
        pca: Some(pca),
    })
}

/// Per-group ranking statistic: the covariance summary, or the chosen
/// distance statistic on the verification surface.
pub fn summary_statistic(groups: &[ClassGroup], params: CovParams, statistic: DistanceStat) -> Result<Vec<f64>> {
    par::try_map_slice(groups, |g| match &g.observation {
        Observation::Rows(r) => covariance_summary(r, params),
        Observation::Distances(d) => Ok(class_distance_stats(d)?[statistic.index()]),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankingMethod {
    Summary { params: CovParams, statistic: DistanceStat },
    Gmm { components: usize, restarts: usize, score: GmmScore },
}

/// Unsupervised per-group membership scores, larger meaning more likely a
/// member under `direction`.
///
/// For the mixture, the member component is the one whose mean of the first
/// aggregate feature is largest (`High`) or smallest (`Low`).
pub fn class_based_ranking(groups: &[ClassGroup], features: Option<&Matrix>, method: RankingMethod, direction: Direction, seed: u64) -> Result<Vec<f64>> {
    match method {
        RankingMethod::Summary { params, statistic } => {
            let s = summary_statistic(groups, params, statistic)?;
            Ok(match direction {
                Direction::High => s,
                Direction::Low => s.into_iter().map(|v| -v).collect(),
            })
        }
        RankingMethod::Gmm { components, restarts, score } => {
            let x = features.ok_or_else(|| Error::Unsupported("mixture ranking needs aggregate features".into()))?;
            let model = fit_gmm(
                x,
                &GmmConfig {
                    n_components: components,
                    n_restarts: restarts,
                    seed: derive_seed(seed, &[stream::GMM]),
                    ..GmmConfig::default()
                },
            )?;
            let first: Vec<f64> = model.means.iter().map(|m| m[0]).collect();
            let pick = (0..first.len()).fold(0, |b, k| {
                let better = match direction {
                    Direction::High => first[k] > first[b],
                    Direction::Low => first[k] < first[b],
                };
                if better {
                    k
                } else {
                    b
                }
            });
            Ok(match score {
                GmmScore::Posterior => model.posterior(x)?.into_iter().map(|p| p[pick]).collect(),
                GmmScore::Likelihood => model.log_joint(x)?.into_iter().map(|l| l[pick]).collect(),
            })
        }
    }
}

/// Result on one evaluation fold (`None` for a single ranking over everything).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: Option<usize>,
    pub roc: RocResult,
}

fn subset<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

fn rows_of(x: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

fn complement(n: usize, idx: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    idx.iter().for_each(|&i| mark[i] = true);
    (0..n).filter(|&i| !mark[i]).collect()
}

/// Identity-level cross-validation of a classifier on aggregate features.
pub fn class_based_supervised(features: &Matrix, membership: &[bool], folds: usize, kind: ClassifierKind, hyper: &Hyper, seed: u64) -> Result<Vec<FoldResult>> {
    if features.nrows() != membership.len() {
        return Err(Error::LengthMismatch {
            left: features.nrows(),
            right: membership.len(),
        });
    }
    let parts = kfold_split(membership.len(), folds, Some(membership), seed)?;
    par::try_map_range(parts.len(), |f| {
        let test = &parts[f];
        let train = complement(membership.len(), test);
        let model = fit_classifier(kind, &rows_of(features, &train), &subset(membership, &train), hyper, derive_seed(seed, &[f as u64]))?;
        let scores = predict_score(&model, &rows_of(features, test))?;
        Ok(FoldResult {
            fold: Some(f),
            roc: roc_curve(&scores, &subset(membership, test))?,
        })
    })
}

/// Every within-group distance as one score, labeled with its group's flag.
fn pair_scores(groups: &[ClassGroup], membership: &[bool], idx: &[usize], direction: Direction) -> (Vec<f64>, Vec<bool>) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for &g in idx {
        if let Observation::Distances(d) = &groups[g].observation {
            for &v in d {
                scores.push(if direction == Direction::High { v } else { -v });
                labels.push(membership[g]);
            }
        }
    }
    (scores, labels)
}

/// Per-instance baseline. On the verification surface every within-group
/// pair distance is a ranking score; elsewhere a classifier is trained on
/// single responses with folds drawn at the identity level.
pub fn firstcut_attack(
    groups: &[ClassGroup],
    membership: &[bool],
    folds: usize,
    kind: ClassifierKind,
    hyper: &Hyper,
    direction: Direction,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    if groups.len() != membership.len() {
        return Err(Error::LengthMismatch {
            left: groups.len(),
            right: membership.len(),
        });
    }
    if groups.iter().all(|g| matches!(g.observation, Observation::Distances(_))) {
        let all: Vec<usize> = (0..groups.len()).collect();
        let (scores, labels) = pair_scores(groups, membership, &all, direction);
        return Ok(vec![FoldResult {
            fold: None,
            roc: roc_curve(&scores, &labels)?,
        }]);
    }
    let rows: Vec<&Vec<Vec<f64>>> = groups
        .iter()
        .map(|g| match &g.observation {
            Observation::Rows(r) => Ok(r),
            Observation::Distances(_) => Err(Error::Unsupported("mixed observation kinds".into())),
        })
        .collect::<Result<_>>()?;
    let stack = |idx: &[usize]| -> Result<(Matrix, Vec<bool>)> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &g in idx {
            for r in rows[g] {
                x.push(r.clone());
                y.push(membership[g]);
            }
        }
        Ok((from_rows(&x)?, y))
    };
    let parts = kfold_split(groups.len(), folds, Some(membership), seed)?;
    par::try_map_range(parts.len(), |f| {
        let train = complement(groups.len(), &parts[f]);
        let (xt, yt) = stack(&train)?;
        let (xe, ye) = stack(&parts[f])?;
        let model = fit_classifier(kind, &xt, &yt, hyper, derive_seed(seed, &[f as u64]))?;
        Ok(FoldResult {
            fold: Some(f),
            roc: roc_curve(&predict_score(&model, &xe)?, &ye)?,
        })
    })
}

/// Outcome of one attack run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub surface: Surface,
    pub mode: Mode,
    /// Direction used by a ranking attack.
    pub direction: Option<Direction>,
    pub folds: Vec<FoldResult>,
    /// Mean AUC over folds.
    pub auc: f64,
    pub auc_sd: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_groups: usize,
    pub label_accuracy: f64,
    pub spec: AttackSpec,
}

impl AttackReport {
    fn new(spec: &AttackSpec, direction: Option<Direction>, folds: Vec<FoldResult>, observed: &Observed) -> Self {
        let aucs: Vec<f64> = folds.iter().map(|f| f.roc.auc).collect();
        let (auc, auc_sd) = mean_sd(&aucs);
        let avg = |get: fn(&FoldResult) -> f64| folds.iter().map(get).sum::<f64>() / folds.len() as f64;
        AttackReport {
            attack: spec.label(),
            surface: spec.surface,
            mode: spec.mode(),
            direction,
            auc,
            auc_sd,
            precision: avg(|f| f.roc.best_f1.precision),
            recall: avg(|f| f.roc.best_f1.recall),
            f1: avg(|f| f.roc.best_f1.f1),
            n_groups: observed.groups.len(),
            label_accuracy: observed.label_accuracy,
            folds,
            spec: spec.clone(),
        }
    }
}

const MIN_CLASSES_PER_STATUS: usize = 4;

/// Observe the scenario and run one attack end to end.
pub fn run_attack(scenario: &Scenario, spec: &AttackSpec) -> Result<AttackReport> {
    let observed = observe(scenario, spec.surface, spec.labeler, spec.counter)?;
    attack_observed(&observed, spec)
}

/// Run one attack on already collected observations.
pub fn attack_observed(observed: &Observed, spec: &AttackSpec) -> Result<AttackReport> {
    spec.validate()?;
    if spec.orientation == Orientation::Both && spec.mode() == Mode::Ranking {
        return Err(Error::config("attack.orientation", "'both' must be expanded into one run per direction"));
    }
    let groups = &observed.groups;
    let membership = &observed.membership;
    let members = membership.iter().filter(|&&m| m).count();
    if spec.family != Family::Firstcut && members.min(membership.len() - members) < MIN_CLASSES_PER_STATUS {
        return Err(Error::TooFewSamples(format!(
            "class-based attacks need at least {MIN_CLASSES_PER_STATUS} identities per membership status"
        )));
    }
    let seed = spec.seed;
    if spec.mode() == Mode::Supervised {
        let folds = match spec.family {
            Family::Firstcut => firstcut_attack(groups, membership, spec.folds, spec.classifier(), &spec.hyper, Direction::High, seed)?,
            _ => {
                let f = build_class_feature_vectors(groups, spec.surface, spec.feature_dims, spec.recognition_dims)?;
                class_based_supervised(&f.matrix, membership, spec.folds, spec.classifier(), &spec.hyper, seed)?
            }
        };
        return Ok(AttackReport::new(spec, None, folds, observed));
    }

    let features = match spec.family {
        Family::ClassGmm => Some(build_class_feature_vectors(groups, spec.surface, spec.feature_dims, spec.recognition_dims)?.matrix),
        _ => None,
    };
    let method = match spec.family {
        Family::ClassGmm => RankingMethod::Gmm {
            components: spec.gmm_components(),
            restarts: spec.gmm_restarts,
            score: spec.gmm_score,
        },
        _ => RankingMethod::Summary {
            params: spec.params,
            statistic: spec.statistic,
        },
    };
    let all: Vec<usize> = (0..groups.len()).collect();
    let firstcut = spec.family == Family::Firstcut;
    // Per-group scores; the per-instance baseline ranks a group by its mean distance.
    let group_scores = |d: Direction| -> Result<Vec<f64>> {
        if firstcut {
            Ok(groups
                .iter()
                .map(|g| match &g.observation {
                    Observation::Distances(ds) => {
                        let m = ds.iter().sum::<f64>() / ds.len().max(1) as f64;
                        if d == Direction::High {
                            m
                        } else {
                            -m
                        }
                    }
                    Observation::Rows(_) => 0.0,
                })
                .collect())
        } else {
            class_based_ranking(groups, features.as_ref(), method, d, seed)
        }
    };
    let (direction, evaluated) = match spec.orientation {
        Orientation::MemberHigh => (Direction::High, all),
        Orientation::MemberLow | Orientation::Both => (Direction::Low, all),
        Orientation::Calibrate => {
            let k = (1.0 / spec.calibration_fraction).round().max(2.0) as usize;
            let parts = kfold_split(groups.len(), k, Some(membership), derive_seed(seed, &[stream::CALIBRATION]))?;
            let calib = &parts[0];
            let high = roc_curve(&subset(&group_scores(Direction::High)?, calib), &subset(membership, calib))?.auc;
            let low = roc_curve(&subset(&group_scores(Direction::Low)?, calib), &subset(membership, calib))?.auc;
            let d = if high >= low { Direction::High } else { Direction::Low };
            (d, complement(groups.len(), calib))
        }
    };
    let (scores, labels) = if firstcut {
        pair_scores(groups, membership, &evaluated, direction)
    } else {
        let s = group_scores(direction)?;
        (subset(&s, &evaluated), subset(membership, &evaluated))
    };
    let roc = roc_curve(&scores, &labels)?;
    Ok(AttackReport::new(spec, Some(direction), vec![FoldResult { fold: None, roc }], observed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_oracle_features, WorldConfig};

    fn feature_groups(gap: f64, seed: u64) -> Observed {
        let cfg = WorldConfig {
            concentration_gap: gap,
            seed,
            ..WorldConfig::default()
        };
        let s = Scenario::features_only(generate_oracle_features(&cfg).unwrap()).unwrap();
        observe(&s, Surface::Feature, LabelerSpec::Oracle, CounterStrategy::default()).unwrap()
    }

    #[test]
    fn summary_ranking_separates_the_gap_world() {
        let o = feature_groups(2.0, 1);
        let spec = AttackSpec::default();
        let r = attack_observed(&o, &spec).unwrap();
        assert!(r.auc > 0.9, "{}", r.auc);
        assert_eq!(r.attack, "class_summary/low");
        assert_eq!(r.direction, Some(Direction::Low));
    }

    #[test]
    fn both_orientations_sum_to_one() {
        let o = feature_groups(1.3, 2);
        let hi = attack_observed(&o, &AttackSpec { orientation: Orientation::MemberHigh, ..AttackSpec::default() }).unwrap();
        let lo = attack_observed(&o, &AttackSpec { orientation: Orientation::MemberLow, ..AttackSpec::default() }).unwrap();
        assert!((hi.auc + lo.auc - 1.0).abs() < 1e-9);
        let both = AttackSpec { orientation: Orientation::Both, ..AttackSpec::default() };
        assert_eq!(both.expand().len(), 2);
        assert!(attack_observed(&o, &both).is_err());
    }

    #[test]
    fn calibration_finds_the_member_direction() {
        let o = feature_groups(2.0, 3);
        let r = attack_observed(&o, &AttackSpec { orientation: Orientation::Calibrate, ..AttackSpec::default() }).unwrap();
        assert_eq!(r.direction, Some(Direction::Low));
        assert!(r.auc > 0.9);
    }

    #[test]
    fn feature_vectors_have_the_documented_shapes() {
        let o = feature_groups(2.0, 4);
        let f = build_class_feature_vectors(&o.groups, Surface::Feature, 50, 15).unwrap();
        assert_eq!(f.raw_dim, 528);
        assert_eq!(f.matrix.shape(), (80, 50));
        let twice: Vec<ClassGroup> = vec![o.groups[0].clone(), o.groups[0].clone(), o.groups[1].clone()];
        let g = build_class_feature_vectors(&twice, Surface::Feature, 50, 15).unwrap();
        assert_eq!(g.matrix.row(0), g.matrix.row(1));
    }

    #[test]
    fn supervised_and_gmm_run() {
        let o = feature_groups(2.0, 5);
        for family in [Family::ClassGmm, Family::ClassSupervised, Family::Firstcut] {
            let r = attack_observed(&o, &AttackSpec { family, ..AttackSpec::default() }).unwrap();
            assert!(r.auc.is_finite());
            if family == Family::ClassSupervised {
                assert_eq!(r.folds.len(), 5);
            }
        }
    }

    #[test]
    fn too_few_classes_rejected() {
        let mut o = feature_groups(2.0, 6);
        o.groups.truncate(6);
        o.membership.truncate(6);
        assert!(matches!(attack_observed(&o, &AttackSpec::default()), Err(Error::TooFewSamples(_))));
    }
}
