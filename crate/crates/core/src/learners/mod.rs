//! Minimal learner kit used by the attacks.
//!
//! Every supervised learner consumes a row-per-sample matrix and boolean
//! labels, and produces a [`FittedModel`] whose [`predict_score`] is larger for
//! rows more likely to carry label `true`.

pub mod forest;
pub mod gmm;
pub mod logistic;
pub mod pca;
pub mod qda;
pub mod svm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, Matrix};

pub use forest::ForestModel;
pub use gmm::{fit_gmm, GmmConfig, GmmModel};
pub use logistic::LogisticModel;
pub use pca::{fit_pca, PcaModel};
pub use qda::QdaModel;
pub use svm::SvmModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logistic,
    LinearSvm,
    RandomForest,
    Qda,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::LinearSvm => "linear_svm",
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::Qda => "qda",
        }
    }
}

/// Kind-specific settings; each learner reads the fields it cares about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    /// L2 penalty for logistic regression and the linear SVM.
    pub l2: f64,
    /// Gradient-norm tolerance for logistic regression.
    pub tol: f64,
    pub max_iter: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `sqrt(d)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Ridge as a fraction of `trace(cov)/dim`; 0 disables regularization.
    pub ridge_scale: f64,
    /// QDA priors from label frequencies instead of equal priors.
    pub empirical_priors: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            l2: 1e-2,
            tol: 1e-6,
            max_iter: 10_000,
            n_trees: 100,
            max_depth: 8,
            max_features: None,
            bootstrap: true,
            ridge_scale: 1e-6,
            empirical_priors: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FittedModel {
    Logistic(LogisticModel),
    LinearSvm(SvmModel),
    RandomForest(ForestModel),
    Qda(QdaModel),
    Pca(PcaModel),
    Gmm(GmmModel),
}

impl FittedModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            FittedModel::Logistic(_) => "logistic",
            FittedModel::LinearSvm(_) => "linear_svm",
            FittedModel::RandomForest(_) => "random_forest",
            FittedModel::Qda(_) => "qda",
            FittedModel::Pca(_) => "pca",
            FittedModel::Gmm(_) => "gmm",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FittedModel::Logistic(m) => m.weights.len(),
            FittedModel::LinearSvm(m) => m.weights.len(),
            FittedModel::RandomForest(m) => m.n_features,
            FittedModel::Qda(m) => m.dim(),
            FittedModel::Pca(m) => m.mean.len(),
            FittedModel::Gmm(m) => m.dim(),
        }
    }
}

pub(crate) fn validate_supervised(x: &Matrix, y: &[bool]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::TooFewSamples("empty training matrix".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    check_finite(x)
}

pub fn fit_classifier(kind: ClassifierKind, x: &Matrix, y: &[bool], hyper: &Hyper, seed: u64) -> Result<FittedModel> {
    validate_supervised(x, y)?;
    Ok(match kind {
        ClassifierKind::Logistic => FittedModel::Logistic(logistic::fit(x, y, hyper)?),
        ClassifierKind::LinearSvm => FittedModel::LinearSvm(svm::fit(x, y, hyper)?),
        ClassifierKind::RandomForest => FittedModel::RandomForest(forest::fit(x, y, hyper, seed)?),
        ClassifierKind::Qda => FittedModel::Qda(qda::fit(x, y, hyper)?),
    })
}

pub fn predict_score(model: &FittedModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            found: x.ncols(),
        });
    }
    match model {
        FittedModel::Logistic(m) => Ok(m.predict_proba(x)),
        FittedModel::LinearSvm(m) => Ok(m.margin(x)),
        FittedModel::RandomForest(m) => Ok(m.vote_fraction(x)),
        FittedModel::Qda(m) => Ok(m.log_odds(x)),
        FittedModel::Pca(_) | FittedModel::Gmm(_) => Err(Error::Unsupported(format!(
            "{} models are not binary scorers",
            model.kind_name()
        ))),
    }
}

/// Per-column affine standardization learned from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.nrows() as f64;
        let mut shift = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
            shift.push(m);
            scale.push(if v > 0.0 { v.sqrt() } else { 1.0 });
        }
        Standardizer { shift, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.shift[j]) / self.scale[j])
    }
}

pub(crate) fn training_accuracy(scores: &[f64], y: &[bool], cut: f64) -> f64 {
    let hits = scores.iter().zip(y).filter(|(&s, &l)| (s >= cut) == l).count();
    hits as f64 / y.len() as f64
}
