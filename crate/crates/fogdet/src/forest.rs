//! Random forest over the 21-value window summaries: the reference
//! classifier the sequence model is compared against.
//!
//! 100 CART trees, each grown on a bootstrap resample, choosing at every
//! node the best Gini-impurity split among 5 features sampled without
//! replacement. Split quality is compared in exact integer arithmetic, so
//! tie-breaking (lowest feature index, then lowest threshold) never depends
//! on floating-point rounding.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::windows::MAZILU_LEN;

/// Trees per forest.
pub const N_TREES: usize = 100;
/// Candidate features per node: the rounded-up square root of 21.
pub const MTRY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Fraction of this leaf's training samples labeled FOG.
        p_fog: f64,
    },
    Split {
        feature: usize,
        /// Samples with `value <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node arena; the root is index 0.
    nodes: Vec<Node>,
}

impl Tree {
    fn score(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { p_fog } => return *p_fog,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    fn max_feature(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
            .map_or(0, |f| f + 1)
    }
}

/// A fitted forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    n_features: usize,
    /// Set when the training labels contained only one class; the forest
    /// then predicts that class everywhere.
    pub single_class_training: bool,
}

/// A candidate split and the quantity that ranks it.
///
/// Maximizing Gini impurity decrease at a node is equivalent to maximizing
/// `(l0² + l1²)/nL + (r0² + r1²)/nR` over left/right class counts. That
/// value is a rational with a small denominator, so candidates are compared
/// by u128 cross-multiplication: exact, and therefore reproducible.
#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    score_num: u128,
    score_den: u128,
}

impl SplitChoice {
    fn beats(&self, other: &SplitChoice) -> bool {
        // Strictly greater score; candidates are generated in ascending
        // (feature, threshold) order, so "first wins" is the tie rule.
        self.score_num * other.score_den > other.score_num * self.score_den
    }
}

fn split_score(l0: u64, l1: u64, r0: u64, r1: u64) -> (u128, u128) {
    let nl = u128::from(l0 + l1);
    let nr = u128::from(r0 + r1);
    let left = u128::from(l0) * u128::from(l0) + u128::from(l1) * u128::from(l1);
    let right = u128::from(r0) * u128::from(r0) + u128::from(r1) * u128::from(r1);
    (left * nr + right * nl, nl * nr)
}

/// Midpoint between two consecutive distinct values, nudged down when
/// rounding would land it on the upper value (which would leak upper
/// samples into the left child).
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi {
        lo
    } else {
        t
    }
}

/// Best Gini split at one node among the given candidate features, or
/// `None` when every candidate is constant over the node's samples.
fn best_split(
    features: &[f64],
    width: usize,
    labels: &[u8],
    idx: &[u32],
    candidates: &[usize],
) -> Option<(usize, f64)> {
    let mut best: Option<SplitChoice> = None;
    let mut values: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
    for &feature in candidates {
        values.clear();
        values.extend(
            idx.iter()
                .map(|&i| (features[i as usize * width + feature], labels[i as usize])),
        );
        values.sort_by(|a, b| a.0.total_cmp(&b.0));

        let total1: u64 = values.iter().map(|&(_, y)| u64::from(y)).sum();
        let total0 = values.len() as u64 - total1;
        let mut l0 = 0u64;
        let mut l1 = 0u64;
        for i in 1..values.len() {
            let (prev, y) = values[i - 1];
            l0 += u64::from(y == 0);
            l1 += u64::from(y);
            let here = values[i].0;
            if here > prev {
                let (score_num, score_den) = split_score(l0, l1, total0 - l0, total1 - l1);
                let candidate = SplitChoice {
                    feature,
                    threshold: midpoint(prev, here),
                    score_num,
                    score_den,
                };
                if best.is_none_or(|b| candidate.beats(&b)) {
                    best = Some(candidate);
                }
            }
        }
    }
    best.map(|b| (b.feature, b.threshold))
}

fn grow(
    features: &[f64],
    width: usize,
    labels: &[u8],
    idx: Vec<u32>,
    rng: &mut impl Rng,
    nodes: &mut Vec<Node>,
    feature_pool: &mut Vec<usize>,
) -> usize {
    let n1: u64 = idx.iter().map(|&i| u64::from(labels[i as usize])).sum();
    let n = idx.len() as u64;
    if n < 2 || n1 == 0 || n1 == n {
        nodes.push(Node::Leaf {
            p_fog: n1 as f64 / n as f64,
        });
        return nodes.len() - 1;
    }

    let mtry = MTRY.min(width);
    feature_pool.clear();
    feature_pool.extend(0..width);
    feature_pool.shuffle(rng);
    let mut candidates: Vec<usize> = feature_pool[..mtry].to_vec();
    candidates.sort_unstable();

    let Some((feature, threshold)) = best_split(features, width, labels, &idx, &candidates)
    else {
        // All candidates constant here; a leaf with the mixed-class rate is
        // the only honest answer.
        nodes.push(Node::Leaf {
            p_fog: n1 as f64 / n as f64,
        });
        return nodes.len() - 1;
    };

    let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = idx
        .into_iter()
        .partition(|&i| features[i as usize * width + feature] <= threshold);
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

    let at = nodes.len();
    nodes.push(Node::Leaf { p_fog: 0.0 });
    let left = grow(features, width, labels, left_idx, rng, nodes, feature_pool);
    let right = grow(features, width, labels, right_idx, rng, nodes, feature_pool);
    nodes[at] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    at
}

fn fit_tree(features: &[f64], width: usize, labels: &[u8], stream: &SeedStream) -> Tree {
    let n = labels.len();
    let mut rng = stream.rng();
    let bootstrap: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
    let mut nodes = Vec::new();
    let mut pool = Vec::with_capacity(width);
    let root = grow(features, width, labels, bootstrap, &mut rng, &mut nodes, &mut pool);
    debug_assert_eq!(root, 0);
    Tree { nodes }
}

fn check_width(width: usize) -> Result<()> {
    if width != MAZILU_LEN {
        return Err(Error::validation(format!(
            "forest features must have {MAZILU_LEN} columns, got {width}"
        )));
    }
    Ok(())
}

/// Trains a 100-tree forest on rows of window summaries.
pub fn fit_forest(features: &[f64], width: usize, labels: &[u8], seed: u64) -> Result<ForestModel> {
    check_width(width)?;
    if features.len() != width * labels.len() {
        return Err(Error::validation(format!(
            "feature matrix of {} values is not {} rows of width {width}",
            features.len(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::validation(
            "forest training needs at least two samples".to_string(),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::validation(format!(
            "labels must be 0 or 1, found {bad}"
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(
            "features must be finite".to_string(),
        ));
    }
    let single_class = labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1);

    let root = SeedStream::new(seed).child("forest");
    let trees: Vec<Tree> = (0..N_TREES)
        .into_par_iter()
        .map(|i| fit_tree(features, width, labels, &root.child_idx("tree", i as u64)))
        .collect();
    Ok(ForestModel {
        trees,
        n_features: width,
        single_class_training: single_class,
    })
}

impl ForestModel {
    /// Mean FOG probability over all trees for each row.
    pub fn predict_proba(&self, features: &[f64], width: usize) -> Result<Vec<f64>> {
        check_width(width)?;
        if width != self.n_features || features.len() % width != 0 {
            return Err(Error::validation(format!(
                "prediction rows of width {width} do not match the fitted {}",
                self.n_features
            )));
        }
        Ok(features
            .par_chunks(width)
            .map(|row| {
                self.trees.iter().map(|t| t.score(row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect())
    }

    /// Every tree's score for one row, in tree order.
    pub fn tree_votes(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features {
            return Err(Error::validation(format!(
                "row of width {} does not match the fitted {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(self.trees.iter().map(|t| t.score(row)).collect())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    #[cfg(test)]
    fn from_trees(trees: Vec<Tree>, n_features: usize) -> ForestModel {
        ForestModel {
            trees,
            n_features,
            single_class_training: false,
        }
    }
}
