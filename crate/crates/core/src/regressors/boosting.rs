//! Gradient boosting with squared loss, in two tree shapes.
//!
//! Both variants start from the mean target and add `eta * tree` per round,
//! each tree fitted to the gradients `g_i = pred_i - y_i` with unit
//! hessians. `gbt_fit` grows ordinary depth-first trees. `obt_fit` grows
//! oblivious trees and, on large enough training sets, picks each tree's
//! structure from ordered gradients: rows are visited in a seeded random
//! order and the gradient of the row at position `i` comes from supporting
//! models that were fitted only on rows before `i`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::data::Dataset;
use crate::seed::derive;
use crate::tree::{build_oblivious_tree_presorted, build_tree_presorted, presort, TreeNode, TreeParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    /// Depth-first trees.
    Plain,
    /// One shared split per level; `ordered` records whether ordered
    /// gradients chose the structure.
    Oblivious { ordered: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub lambda: f64,
    pub variant: BoostVariant,
    pub trees: Vec<TreeNode>,
    /// Training MSE after `k` trees, `k = 0..=rounds`.
    pub train_mse: Vec<f64>,
    /// `1/2 SSE + 1/2 lambda * sum of squared leaf increments`, after `k` trees.
    pub train_objective: Vec<f64>,
}

impl BoostedModel {
    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_prefix(x, self.trees.len())
    }

    /// Prediction using only the first `k` trees.
    pub fn predict_prefix(&self, x: &[f64], k: usize) -> f64 {
        let mut acc = self.base_score;
        for t in &self.trees[..k.min(self.trees.len())] {
            acc += self.learning_rate * t.predict(x);
        }
        acc
    }
}

pub fn boosted_predict(model: &BoostedModel, features: &[f64]) -> f64 {
    model.predict(features)
}

fn check_rate(learning_rate: f64, rounds: usize) -> Result<(), FitError> {
    if !(learning_rate > 0.0 && learning_rate <= 1.0) {
        return Err(FitError::InvalidHyperparam {
            name: "learning_rate".into(),
            reason: format!("must lie in (0, 1], got {learning_rate}"),
        });
    }
    if rounds < 1 {
        return Err(FitError::InvalidHyperparam {
            name: "rounds".into(),
            reason: "must be >= 1".into(),
        });
    }
    Ok(())
}

struct Trace {
    mse: Vec<f64>,
    objective: Vec<f64>,
    penalty: f64,
}

impl Trace {
    fn new(pred: &[f64], y: &[f64]) -> Self {
        let sse = sse(pred, y);
        Self {
            mse: vec![sse / y.len() as f64],
            objective: vec![0.5 * sse],
            penalty: 0.0,
        }
    }

    fn push(&mut self, pred: &[f64], y: &[f64], tree: &TreeNode, eta: f64, lambda: f64) {
        for leaf in tree.leaves() {
            if let TreeNode::Leaf { value, .. } = leaf {
                self.penalty += 0.5 * lambda * (eta * value) * (eta * value);
            }
        }
        let sse = sse(pred, y);
        self.mse.push(sse / y.len() as f64);
        self.objective.push(0.5 * sse + self.penalty);
    }
}

fn sse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum()
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

/// Depth-first boosted trees (XGBR family). `tree_params.seed` is replaced
/// per round by a seed derived from `seed`.
pub fn gbt_fit(
    train: &Dataset,
    rounds: usize,
    learning_rate: f64,
    tree_params: &TreeParams,
    seed: u64,
) -> Result<BoostedModel, FitError> {
    check_rate(learning_rate, rounds)?;
    tree_params.validate()?;
    let (n, cols, y) = (train.n(), train.columns(), train.targets());
    let base_score = mean(y);
    let mut pred = vec![base_score; n];
    let hessians = vec![1.0; n];
    let rows: Vec<usize> = (0..n).collect();
    let sorted = presort(cols, &rows);
    let mut trace = Trace::new(&pred, y);
    let mut trees = Vec::with_capacity(rounds);
    let mut row = vec![0.0; train.n_features()];
    for round in 0..rounds {
        let gradients: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let params = TreeParams {
            seed: derive(seed, &[round as u64]),
            ..tree_params.clone()
        };
        let tree = build_tree_presorted(cols, sorted.clone(), &gradients, &hessians, &params)?;
        for (i, p) in pred.iter_mut().enumerate() {
            train.fill_row(i, &mut row);
            *p += learning_rate * tree.predict(&row);
        }
        trace.push(&pred, y, &tree, learning_rate, tree_params.lambda);
        trees.push(tree);
    }
    Ok(BoostedModel {
        base_score,
        learning_rate,
        lambda: tree_params.lambda,
        variant: BoostVariant::Plain,
        trees,
        train_mse: trace.mse,
        train_objective: trace.objective,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub depth: usize,
    pub lambda: f64,
    /// Ordered gradients are used when the training set has at least this
    /// many rows; 0 turns them off.
    pub ordered_min_rows: usize,
}

impl Default for ObtParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.1,
            depth: 6,
            lambda: 3.0,
            ordered_min_rows: 256,
        }
    }
}

/// Leaf index of `x` in an oblivious tree given its levels.
fn oblivious_leaf(levels: &[(usize, f64)], columns: &[Vec<f64>], row: usize) -> usize {
    levels
        .iter()
        .fold(0, |leaf, &(f, thr)| 2 * leaf + usize::from(columns[f][row] > thr))
}

/// Supporting models for ordered gradients. Model `j` is fitted on the rows
/// at permutation positions `[0, 2^j)` and supplies the gradient of rows at
/// positions `[2^j, 2^(j+1))`; it keeps predictions for all of `[0, 2^(j+1))`.
struct Ordered {
    perm: Vec<usize>,
    support: Vec<Vec<f64>>,
    base_score: f64,
}

impl Ordered {
    fn new(n: usize, base_score: f64, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut support = Vec::new();
        let mut j = 0;
        while (1usize << j) < n {
            support.push(vec![base_score; (1usize << (j + 1)).min(n)]);
            j += 1;
        }
        Self {
            perm,
            support,
            base_score,
        }
    }

    /// Gradient of each row, indexed by row, from its supporting model.
    fn gradients(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; y.len()];
        for (pos, &r) in self.perm.iter().enumerate() {
            let p = if pos == 0 {
                self.base_score
            } else {
                let j = usize::BITS as usize - 1 - pos.leading_zeros() as usize;
                self.support[j][pos]
            };
            g[r] = p - y[r];
        }
        g
    }

    /// Refits each supporting model's leaves on its own prefix, reusing the
    /// round's tree structure.
    fn update(&mut self, levels: &[(usize, f64)], columns: &[Vec<f64>], y: &[f64], eta: f64, lambda: f64) {
        let n_leaves = 1usize << levels.len();
        let leaf_of: Vec<usize> = self.perm.iter().map(|&r| oblivious_leaf(levels, columns, r)).collect();
        let mut g = vec![0.0; n_leaves];
        let mut h = vec![0.0; n_leaves];
        for (j, pred) in self.support.iter_mut().enumerate() {
            g.iter_mut().for_each(|v| *v = 0.0);
            h.iter_mut().for_each(|v| *v = 0.0);
            for pos in 0..(1usize << j) {
                let r = self.perm[pos];
                g[leaf_of[pos]] += pred[pos] - y[r];
                h[leaf_of[pos]] += 1.0;
            }
            for (pos, p) in pred.iter_mut().enumerate() {
                let l = leaf_of[pos];
                if h[l] > 0.0 {
                    *p += eta * (-g[l] / (h[l] + lambda));
                }
            }
        }
    }
}

/// Oblivious-tree boosting (CBR family).
pub fn obt_fit(train: &Dataset, params: &ObtParams, seed: u64) -> Result<BoostedModel, FitError> {
    check_rate(params.learning_rate, params.rounds)?;
    if params.depth < 1 {
        return Err(FitError::InvalidHyperparam {
            name: "depth".into(),
            reason: "must be >= 1".into(),
        });
    }
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(FitError::InvalidHyperparam {
            name: "lambda".into(),
            reason: "must be >= 0".into(),
        });
    }
    let (n, cols, y) = (train.n(), train.columns(), train.targets());
    let eta = params.learning_rate;
    let base_score = mean(y);
    let mut pred = vec![base_score; n];
    let hessians = vec![1.0; n];
    let rows: Vec<usize> = (0..n).collect();
    let sorted = presort(cols, &rows);
    let ordered = params.ordered_min_rows > 0 && n >= params.ordered_min_rows;
    let mut support = ordered.then(|| Ordered::new(n, base_score, derive(seed, &[0])));
    let mut trace = Trace::new(&pred, y);
    let mut trees = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        let gradients: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let split_gradients = match &support {
            Some(s) => s.gradients(y),
            None => gradients.clone(),
        };
        let tree = build_oblivious_tree_presorted(
            cols,
            &rows,
            &sorted,
            &split_gradients,
            &gradients,
            &hessians,
            params.depth,
            params.lambda,
        )?;
        let levels = tree.oblivious_levels().expect("oblivious by construction");
        for (i, p) in pred.iter_mut().enumerate() {
            let mut node = &tree;
            // Walk the tree directly; equivalent to `tree.predict` on row i.
            while let TreeNode::Internal {
                feature_index,
                threshold,
                left,
                right,
            } = node
            {
                node = if cols[*feature_index][i] <= *threshold { left } else { right };
            }
            if let TreeNode::Leaf { value, .. } = node {
                *p += eta * value;
            }
        }
        if let Some(s) = support.as_mut() {
            s.update(&levels, cols, y, eta, params.lambda);
        }
        trace.push(&pred, y, &tree, eta, params.lambda);
        trees.push(tree);
    }
    Ok(BoostedModel {
        base_score,
        learning_rate: eta,
        lambda: params.lambda,
        variant: BoostVariant::Oblivious { ordered },
        trees,
        train_mse: trace.mse,
        train_objective: trace.objective,
    })
}
