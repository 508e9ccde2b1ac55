//! Bagged CART trees with Gini splits and per-split feature subsampling.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Hyper;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::par;
use crate::rng::{rng_from, stream, Rng};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Fraction of training rows in this leaf with label `true`.
        positive: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { positive } => return *positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Node>,
    pub n_features: usize,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [bool],
    max_depth: usize,
    mtry: usize,
}

impl Builder<'_> {
    fn grow(&self, rows: &mut [usize], depth: usize, rng: &mut Rng) -> Node {
        let total = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        let leaf = Node::Leaf {
            positive: pos as f64 / total as f64,
        };
        if depth >= self.max_depth || pos == 0 || pos == total || total < 2 {
            return leaf;
        }
        let parent = gini(pos, total);
        let d = self.x.ncols();
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in sample(rng, d, self.mtry.min(d)).into_iter() {
            rows.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]));
            let mut left_pos = 0;
            for k in 0..total - 1 {
                if self.y[rows[k]] {
                    left_pos += 1;
                }
                let here = self.x[(rows[k], feature)];
                let next = self.x[(rows[k + 1], feature)];
                if here == next {
                    continue;
                }
                let nl = k + 1;
                let nr = total - nl;
                let impurity = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(pos - left_pos, nr)) / total as f64;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, feature, 0.5 * (here + next)));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            return leaf;
        };
        if impurity >= parent {
            return leaf;
        }
        let mut left: Vec<usize> = rows.iter().copied().filter(|&r| self.x[(r, feature)] <= threshold).collect();
        let mut right: Vec<usize> = rows.iter().copied().filter(|&r| self.x[(r, feature)] > threshold).collect();
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&mut left, depth + 1, rng)),
            right: Box::new(self.grow(&mut right, depth + 1, rng)),
        }
    }
}

pub fn fit(x: &Matrix, y: &[bool], hyper: &Hyper, seed: u64) -> Result<ForestModel> {
    let n = x.nrows();
    let d = x.ncols();
    let mtry = hyper
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
        .clamp(1, d);
    let builder = Builder {
        x,
        y,
        max_depth: hyper.max_depth,
        mtry,
    };
    let trees = par::map_range(hyper.n_trees.max(1), |t| {
        let mut rng = rng_from(seed, &[stream::FOREST, t as u64]);
        let mut rows: Vec<usize> = if hyper.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        builder.grow(&mut rows, 0, &mut rng)
    });
    Ok(ForestModel { trees, n_features: d })
}

impl ForestModel {
    /// Mean over trees of the leaf's positive fraction.
    pub fn vote_fraction(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}
