//! Bagged regression trees with per-split feature subsampling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::data::Dataset;
use crate::seed::derive;
use crate::tree::{build_tree_presorted, presort, presort_counts, TreeNode, TreeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    /// Seed of each tree's bootstrap draw and feature subsets.
    pub bootstrap_seeds: Vec<u64>,
    pub feature_subsample: f64,
}

impl ForestModel {
    /// Mean of the tree outputs.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Forest on bootstrap resamples. Leaves hold plain target means: the
/// tree's `lambda` and `gamma` are forced to 0.
pub fn rf_fit(train: &Dataset, n_trees: usize, tree_params: &TreeParams, seed: u64) -> Result<ForestModel, FitError> {
    rf_fit_with(train, n_trees, tree_params, seed, true)
}

/// As [`rf_fit`]; with `bootstrap` off every tree sees each row once.
///
/// Tree `t`'s seed is the `t`-th draw of a stream seeded by `seed`, so a
/// forest of `k` trees is a prefix of the forest of `k + 1`.
pub fn rf_fit_with(
    train: &Dataset,
    n_trees: usize,
    tree_params: &TreeParams,
    seed: u64,
    bootstrap: bool,
) -> Result<ForestModel, FitError> {
    if n_trees < 1 {
        return Err(FitError::InvalidHyperparam {
            name: "n_trees".into(),
            reason: "must be >= 1".into(),
        });
    }
    let n = train.n();
    let gradients: Vec<f64> = train.targets().iter().map(|y| -y).collect();
    let hessians = vec![1.0; n];
    let all: Vec<usize> = (0..n).collect();
    let sorted_all = presort(train.columns(), &all);
    let mut counts = vec![0usize; n];
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(n_trees);
    let mut bootstrap_seeds = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let tree_seed = seeds.next_u64();
        if bootstrap {
            counts.iter_mut().for_each(|c| *c = 0);
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        } else {
            counts.iter_mut().for_each(|c| *c = 1);
        }
        let params = TreeParams {
            lambda: 0.0,
            gamma: 0.0,
            seed: derive(tree_seed, &[1]),
            ..tree_params.clone()
        };
        let sorted = presort_counts(&sorted_all, &counts);
        trees.push(build_tree_presorted(train.columns(), sorted, &gradients, &hessians, &params)?);
        bootstrap_seeds.push(tree_seed);
    }
    Ok(ForestModel {
        trees,
        bootstrap_seeds,
        feature_subsample: tree_params.feature_subsample,
    })
}
