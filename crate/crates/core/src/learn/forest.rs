//! Random forest of CART classification trees with Gini splits.
//!
//! Randomness is fully determined by the seed:
//!
//! 1. A SplitMix64 stream seeded with `seed` yields one `u64` per tree, in
//!    tree order.
//! 2. Each tree owns a Xoshiro256++ generator seeded (via SplitMix64
//!    expansion) from its `u64`. With bootstrapping it first draws `n`
//!    sample indices uniformly with replacement.
//! 3. Nodes are built depth-first, left child before right. Every internal
//!    candidate node draws `mtry` distinct features by a partial
//!    Fisher-Yates shuffle of `0..d`.
//!
//! Trees are independent given their seeds, so they may be grown in
//! parallel without changing the result.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{BinaryClassifier, ModelKind, ModelParams, TrainedModel};
use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 1, mtry: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Pre-order arena; the root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive } => return positive,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Fraction of trees voting positive.
    pub fn vote_fraction(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        votes as f64 / self.trees.len() as f64
    }
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

/// Best split of `samples` on one feature: (weighted impurity, threshold).
/// Considers every boundary between distinct sorted values with at least
/// `min_leaf` samples on each side; ties keep the lowest threshold.
pub(crate) fn best_split_on_feature(
    x: &DMatrix<f64>,
    y: &[bool],
    samples: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let mut vals: Vec<(f64, bool)> = samples.iter().map(|&i| (x[(i, feature)], y[i])).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = vals.len();
    let total_pos = vals.iter().filter(|v| v.1).count();
    let mut left_pos = 0;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n.saturating_sub(1) {
        left_pos += vals[k].1 as usize;
        let nl = k + 1;
        let nr = n - nl;
        if vals[k].0 == vals[k + 1].0 || nl < min_leaf || nr < min_leaf {
            continue;
        }
        let imp = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / n as f64;
        if best.is_none_or(|(b, _)| imp < b) {
            let (lo, hi) = (vals[k].0, vals[k + 1].0);
            let mut thr = lo + (hi - lo) / 2.0;
            if thr >= hi {
                thr = lo;
            }
            best = Some((imp, thr));
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [bool],
    params: &'a ForestParams,
    mtry: usize,
    rng: Xoshiro256PlusPlus,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, samples: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let pos = samples.iter().filter(|&&i| self.y[i]).count();
        let majority = Node::Leaf { positive: 2 * pos > samples.len() };
        self.nodes.push(majority.clone());

        let pure = pos == 0 || pos == samples.len();
        let depth_reached = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_reached || samples.len() < 2 * self.params.min_leaf {
            return id;
        }

        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        for k in 0..self.mtry {
            let j = self.rng.random_range(k..d);
            features.swap(k, j);
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features[..self.mtry] {
            if let Some((imp, thr)) = best_split_on_feature(self.x, self.y, samples, f, self.params.min_leaf) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (left_s, right_s): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        let left = self.build(&left_s, depth + 1);
        let right = self.build(&right_s, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

fn grow_tree(x: &DMatrix<f64>, y: &[bool], params: &ForestParams, mtry: usize, tree_seed: u64) -> Tree {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(tree_seed);
    let n = y.len();
    let samples: Vec<usize> =
        if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
    let mut b = TreeBuilder { x, y, params, mtry, rng, nodes: Vec::new() };
    b.build(&samples, 0);
    Tree { nodes: b.nodes }
}

pub(crate) fn fit_forest(x: &DMatrix<f64>, y: &[bool], params: &ForestParams) -> Result<Forest, LearnError> {
    if x.nrows() != y.len() {
        return Err(LearnError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(LearnError::InvalidParam("n_trees and min_leaf must be positive".into()));
    }
    if y.len() < 2 * params.min_leaf {
        return Err(LearnError::TooFewSamples(format!("{} rows for min_leaf {}", y.len(), params.min_leaf)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::NonFinite);
    }
    let d = x.ncols();
    let mtry = params.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1));
    let mut seeder = SplitMix64::seed_from_u64(params.seed);
    let seeds: Vec<u64> = (0..params.n_trees).map(|_| seeder.next_u64()).collect();
    let trees = seeds.par_iter().map(|&s| grow_tree(x, y, params, mtry, s)).collect();
    Ok(Forest { n_features: d, trees })
}

/// Binary forest; labels are `["0", "1"]`. A single-class label vector
/// yields a constant predictor.
pub fn train_forest(x: &DMatrix<f64>, y: &[bool], params: &ForestParams) -> Result<TrainedModel, LearnError> {
    let forest = fit_forest(x, y, params)?;
    Ok(TrainedModel::new(
        ModelKind::Forest,
        vec!["0".into(), "1".into()],
        ModelParams::Classifiers(vec![BinaryClassifier::Forest(forest)]),
    ))
}
