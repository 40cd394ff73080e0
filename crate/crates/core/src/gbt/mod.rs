//! Stage-1 gradient-boosted regression trees and the ridge baseline.
//!
//! Squared-loss boosting with exact greedy split search. With the loss
//! written as `(y - p)^2 / 2` every sample contributes gradient `p - y` and
//! hessian 1, so a node's hessian sum is its sample count. A split is scored
//!
//! ```text
//! gain = G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)
//! ```
//!
//! and taken only when `gain > gamma`. Leaves carry `-G / (H + lambda)`.

mod lags;
mod ridge;

pub use lags::{stage1_predictions, stage1_training_pairs, synthesize_lags, LagTable};
pub use ridge::{fit_ridge, RidgeModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance under which two split gains count as tied.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum gain required to split.
    pub gamma: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_rounds: 200, max_depth: 4, learning_rate: 0.1, lambda: 1.0, gamma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { weight: f64 },
    /// Samples with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    pub base_score: f64,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    /// Training MSE after the base score and after each round.
    pub train_mse: Vec<f64>,
    /// Hash of the feature schema the contexts were built from, if known.
    pub schema_hash: Option<String>,
}

impl GbtModel {
    /// A model with no trees, predicting `base_score` everywhere.
    pub fn constant(base_score: f64, n_features: usize, params: GbtParams) -> Self {
        Self { params, base_score, n_features, trees: Vec::new(), train_mse: Vec::new(), schema_hash: None }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::shape(format!(
                "model trained on {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.params.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    // Per feature, all sample indices sorted by value (stable on index).
    sorted: &'a [Vec<usize>],
    params: &'a GbtParams,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.params.lambda;
        if denom > 0.0 {
            -g / denom
        } else {
            0.0
        }
    }

    fn best_split(&self, member: &[bool], g_total: f64, h_total: f64) -> Option<SplitChoice> {
        let lambda = self.params.lambda;
        let score = |g: f64, h: f64| if h + lambda > 0.0 { g * g / (h + lambda) } else { 0.0 };
        let parent = score(g_total, h_total);
        let mut best: Option<SplitChoice> = None;
        for (feature, order) in self.sorted.iter().enumerate() {
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            let mut prev: Option<f64> = None;
            for &i in order.iter().filter(|&&i| member[i]) {
                let v = self.x[i][feature];
                if let Some(p) = prev {
                    if v > p {
                        let gain = score(g_left, h_left) + score(g_total - g_left, h_total - h_left) - parent;
                        let better = match &best {
                            None => true,
                            Some(b) => gain > b.gain + GAIN_TIE_TOLERANCE * (1.0 + b.gain.abs()),
                        };
                        if better && gain > self.params.gamma {
                            best = Some(SplitChoice { feature, threshold: midpoint(p, v), gain });
                        }
                    }
                }
                g_left += self.grad[i];
                h_left += 1.0;
                prev = Some(v);
            }
        }
        best
    }

    fn build(&mut self, member: Vec<bool>, depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { weight: 0.0 });
        let (g, h) = member
            .iter()
            .zip(self.grad)
            .filter(|(m, _)| **m)
            .fold((0.0, 0.0), |(g, h), (_, gi)| (g + gi, h + 1.0));
        let split = if depth < self.params.max_depth && h >= 2.0 {
            self.best_split(&member, g, h)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[idx] = TreeNode::Leaf { weight: self.leaf_weight(g, h) };
            }
            Some(s) => {
                let goes_left: Vec<bool> = self.x.iter().map(|row| row[s.feature] < s.threshold).collect();
                let left_member: Vec<bool> = member.iter().zip(&goes_left).map(|(m, l)| *m && *l).collect();
                let right_member: Vec<bool> = member.iter().zip(&goes_left).map(|(m, l)| *m && !*l).collect();
                let left = self.build(left_member, depth + 1);
                let right = self.build(right_member, depth + 1);
                self.nodes[idx] = TreeNode::Split { feature: s.feature, threshold: s.threshold, left, right };
            }
        }
        idx
    }
}

/// Split point strictly between two consecutive distinct values.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo && m <= hi {
        m
    } else {
        hi
    }
}

/// Fits a boosted ensemble to `(contexts, targets)` pairs.
///
/// Split search ties resolve to the lowest feature index, then the lowest
/// threshold. No row or column subsampling.
pub fn fit_gbt(contexts: &[Vec<f64>], targets: &[f64], params: &GbtParams) -> Result<GbtModel> {
    if contexts.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if contexts.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} contexts but {} targets",
            contexts.len(),
            targets.len()
        )));
    }
    if !(params.learning_rate > 0.0) || params.lambda < 0.0 {
        return Err(Error::invalid("learning rate must be positive and lambda non-negative"));
    }
    let n_features = contexts[0].len();
    if contexts.iter().any(|c| c.len() != n_features) {
        return Err(Error::shape("contexts have differing lengths"));
    }
    if contexts.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in training data".into()));
    }

    let n = targets.len();
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|j| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| contexts[a][j].total_cmp(&contexts[b][j]).then(a.cmp(&b)));
            order
        })
        .collect();

    let mut pred = vec![base_score; n];
    let mut train_mse = vec![mse(&pred, targets)];
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let grad: Vec<f64> = pred.iter().zip(targets).map(|(p, y)| p - y).collect();
        let mut builder = TreeBuilder { x: contexts, grad: &grad, sorted: &sorted, params, nodes: Vec::new() };
        builder.build(vec![true; n], 0);
        let tree = RegressionTree { nodes: builder.nodes };
        for (p, x) in pred.iter_mut().zip(contexts) {
            *p += params.learning_rate * tree.predict(x);
        }
        train_mse.push(mse(&pred, targets));
        trees.push(tree);
    }
    Ok(GbtModel { params: *params, base_score, n_features, trees, train_mse, schema_hash: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_targets_predict_constant() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y = vec![3.5; 10];
        let m = fit_gbt(&x, &y, &GbtParams { n_rounds: 3, ..Default::default() }).unwrap();
        for probe in [[-5.0, 2.0], [100.0, -1.0], [4.0, 16.0]] {
            assert_eq!(m.predict(&probe).unwrap(), 3.5);
        }
    }

    #[test]
    fn step_function_is_recovered_by_one_stump() {
        let x: Vec<Vec<f64>> = (-5..5).map(|i| vec![i as f64 + 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] < 0.0 { 0.0 } else { 1.0 }).collect();
        let params = GbtParams { n_rounds: 1, max_depth: 1, learning_rate: 1.0, lambda: 0.0, gamma: 0.0 };
        let m = fit_gbt(&x, &y, &params).unwrap();
        match m.trees[0].nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.0);
            }
            ref other => panic!("expected a split, got {other:?}"),
        }
        assert!(m.train_mse.last().unwrap().abs() < 1e-24);
    }

    #[test]
    fn zero_trees_predict_base_score() {
        let m = GbtModel::constant(2.25, 3, GbtParams::default());
        assert_eq!(m.predict(&[0.0, 1.0, 2.0]).unwrap(), 2.25);
        assert!(m.predict(&[0.0]).is_err());
    }

    #[test]
    fn single_leaf_is_scaled_by_learning_rate() {
        let m = GbtModel {
            trees: vec![RegressionTree { nodes: vec![TreeNode::Leaf { weight: 4.0 }] }],
            ..GbtModel::constant(0.0, 1, GbtParams { learning_rate: 0.5, ..Default::default() })
        };
        assert_eq!(m.predict(&[7.0]).unwrap(), 2.0);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(fit_gbt(&[], &[], &GbtParams::default()).is_err());
    }

    #[test]
    fn training_loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0].sin() + r[1] * r[2] + rng.gen_range(-0.1..0.1)).collect();
        for lr in [0.1, 0.5, 1.0] {
            let m = fit_gbt(&x, &y, &GbtParams { n_rounds: 30, learning_rate: lr, ..Default::default() }).unwrap();
            for w in m.train_mse.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", m.train_mse);
            }
            assert!(m.trees.iter().all(|t| t.depth() <= 4));
        }
    }

    #[test]
    fn model_serializes_and_predicts_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[2]).collect();
        let m = fit_gbt(&x, &y, &GbtParams { n_rounds: 20, ..Default::default() }).unwrap();
        let back: GbtModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        for r in &x {
            assert_eq!(m.predict(r).unwrap(), back.predict(r).unwrap());
        }
    }
}
