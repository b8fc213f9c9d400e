//! Second-order regression trees shared by the forest and both boosters.
//!
//! Trees are grown from per-row gradients and hessians. A split of a node
//! with gradient/hessian sums `(G, H)` into `(G_L, H_L)` and `(G_R, H_R)`
//! scores
//!
//! ```text
//! gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma
//! ```
//!
//! and a leaf predicts `-G/(H+lambda)`. With squared loss (`h = 1`) and
//! `lambda = 0` that is the mean residual of the leaf's rows.
//!
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values. Rows with `value <= threshold` go left. Ties in gain keep the
//! lowest feature index, then the lowest threshold.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gains within this fraction of the parent score are rounding noise.
const GAIN_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("{gradients} gradients but {hessians} hessians")]
    LengthMismatch { gradients: usize, hessians: usize },
    #[error("gradient vector has {gradients} entries for {rows} data rows")]
    RowCountMismatch { gradients: usize, rows: usize },
    #[error("row index {0} out of range")]
    RowOutOfRange(usize),
    #[error("cannot build a tree on zero rows")]
    EmptyRows,
    #[error("feature index {0} out of range")]
    FeatureOutOfRange(usize),
    #[error("invalid tree parameter: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum gain for a split.
    pub gamma: f64,
    /// Fraction of features considered at each split.
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_samples_leaf: 1,
            lambda: 0.0,
            gamma: 0.0,
            feature_subsample: 1.0,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: &str| Err(TreeError::InvalidParams(m.to_string()));
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be >= 0");
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return bad("feature_subsample must lie in (0, 1]");
        }
        Ok(())
    }

    /// Number of features drawn per split out of `p`.
    pub fn features_per_split(&self, p: usize) -> usize {
        ((self.feature_subsample * p as f64).ceil() as usize).clamp(1, p.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        sum_gradient: f64,
        sum_hessian: f64,
        count: usize,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode::Leaf {
            value,
            sum_gradient: 0.0,
            sum_hessian: 0.0,
            count: 0,
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature_index] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Depth of the deepest leaf; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                TreeNode::Leaf { .. } => out.push(n),
                TreeNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// `(feature, threshold)` pairs per depth level, or `None` when two
    /// nodes on one level disagree or leaves sit at different depths.
    pub fn oblivious_levels(&self) -> Option<Vec<(usize, f64)>> {
        let mut levels: Vec<(usize, f64)> = Vec::new();
        let mut frontier = vec![self];
        loop {
            let leaves = frontier.iter().filter(|n| n.is_leaf()).count();
            if leaves == frontier.len() {
                return Some(levels);
            }
            if leaves != 0 {
                return None;
            }
            let mut split = None;
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for n in &frontier {
                if let TreeNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                } = n
                {
                    match split {
                        None => split = Some((*feature_index, *threshold)),
                        Some(s) if s != (*feature_index, *threshold) => return None,
                        _ => {}
                    }
                    next.push(left.as_ref());
                    next.push(right.as_ref());
                }
            }
            levels.push(split.expect("non-empty frontier"));
            frontier = next;
        }
    }
}

pub fn predict_tree(tree: &TreeNode, features: &[f64]) -> f64 {
    tree.predict(features)
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

#[inline]
fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

#[inline]
fn min_gain(parent_score: f64) -> f64 {
    GAIN_TOLERANCE * (1.0 + parent_score.abs())
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

fn check_inputs(columns: &[Vec<f64>], gradients: &[f64], hessians: &[f64]) -> Result<(), TreeError> {
    if gradients.len() != hessians.len() {
        return Err(TreeError::LengthMismatch {
            gradients: gradients.len(),
            hessians: hessians.len(),
        });
    }
    if let Some(col) = columns.first() {
        if col.len() != gradients.len() {
            return Err(TreeError::RowCountMismatch {
                gradients: gradients.len(),
                rows: col.len(),
            });
        }
    }
    Ok(())
}

/// Scans one feature whose node rows are given in ascending value order and
/// updates `best` when a strictly better split turns up.
#[allow(clippy::too_many_arguments)]
fn scan_sorted(
    values: &[f64],
    sorted_rows: &[usize],
    feature: usize,
    gradients: &[f64],
    hessians: &[f64],
    totals: (f64, f64),
    params: &TreeParams,
    best: &mut Option<SplitCandidate>,
) {
    let (g_total, h_total) = totals;
    let parent = score(g_total, h_total, params.lambda);
    let floor = min_gain(parent);
    let m = sorted_rows.len();
    let (mut gl, mut hl) = (0.0, 0.0);
    for i in 0..m.saturating_sub(1) {
        let r = sorted_rows[i];
        gl += gradients[r];
        hl += hessians[r];
        let n_left = i + 1;
        let (a, b) = (values[r], values[sorted_rows[i + 1]]);
        if a == b || n_left < params.min_samples_leaf || m - n_left < params.min_samples_leaf {
            continue;
        }
        let gain = 0.5
            * (score(gl, hl, params.lambda) + score(g_total - gl, h_total - hl, params.lambda) - parent)
            - params.gamma;
        if gain > floor && best.is_none_or(|b| gain > b.gain) {
            *best = Some(SplitCandidate {
                feature_index: feature,
                threshold: midpoint(a, b),
                gain,
            });
        }
    }
}

fn sort_rows_by(values: &[f64], rows: &mut [usize]) {
    rows.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
}

/// Best split of `rows` over the features in `feature_mask`, or `None` when
/// no candidate has positive gain or the node is too small to split.
pub fn best_split(
    columns: &[Vec<f64>],
    rows: &[usize],
    gradients: &[f64],
    hessians: &[f64],
    params: &TreeParams,
    feature_mask: &[usize],
) -> Result<Option<SplitCandidate>, TreeError> {
    check_inputs(columns, gradients, hessians)?;
    if let Some(&r) = rows.iter().find(|&&r| r >= gradients.len()) {
        return Err(TreeError::RowOutOfRange(r));
    }
    if let Some(&f) = feature_mask.iter().find(|&&f| f >= columns.len()) {
        return Err(TreeError::FeatureOutOfRange(f));
    }
    if rows.len() < 2 * params.min_samples_leaf {
        return Ok(None);
    }
    let totals = rows
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + gradients[r], h + hessians[r]));
    let mut mask = feature_mask.to_vec();
    mask.sort_unstable();
    mask.dedup();
    let mut best = None;
    let mut sorted = rows.to_vec();
    for f in mask {
        sort_rows_by(&columns[f], &mut sorted);
        scan_sorted(&columns[f], &sorted, f, gradients, hessians, totals, params, &mut best);
    }
    Ok(best)
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    gradients: &'a [f64],
    hessians: &'a [f64],
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    /// Per feature, the tree's rows in ascending value order. Each node owns
    /// one contiguous range, kept sorted by stable in-place partitioning.
    sorted: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
    scratch: Vec<usize>,
}

impl Grower<'_> {
    fn feature_mask(&mut self) -> Vec<usize> {
        let p = self.columns.len();
        let k = self.params.features_per_split(p);
        if k >= p {
            return (0..p).collect();
        }
        let mut m = sample(&mut self.rng, p, k).into_vec();
        m.sort_unstable();
        m
    }

    fn grow(&mut self, start: usize, end: usize, depth: usize) -> TreeNode {
        let (g, h) = self.sorted[0][start..end]
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.gradients[r], h + self.hessians[r]));
        let count = end - start;
        let leaf = TreeNode::Leaf {
            value: leaf_value(g, h, self.params.lambda),
            sum_gradient: g,
            sum_hessian: h,
            count,
        };
        if depth >= self.params.max_depth || count < 2 * self.params.min_samples_leaf {
            return leaf;
        }
        let mut best = None;
        for f in self.feature_mask() {
            scan_sorted(
                &self.columns[f],
                &self.sorted[f][start..end],
                f,
                self.gradients,
                self.hessians,
                (g, h),
                self.params,
                &mut best,
            );
        }
        let Some(split) = best else {
            return leaf;
        };
        let col = &self.columns[split.feature_index];
        let mut n_left = 0;
        for &r in &self.sorted[0][start..end] {
            let left = col[r] <= split.threshold;
            self.goes_left[r] = left;
            n_left += usize::from(left);
        }
        for list in &mut self.sorted {
            let list = &mut list[start..end];
            self.scratch.clear();
            let mut k = 0;
            for i in 0..list.len() {
                let r = list[i];
                if self.goes_left[r] {
                    list[k] = r;
                    k += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            list[k..].copy_from_slice(&self.scratch);
        }
        let left = self.grow(start, start + n_left, depth + 1);
        let right = self.grow(start + n_left, end, depth + 1);
        TreeNode::Internal {
            feature_index: split.feature_index,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Per-feature orderings of `rows` by `(value, row index)`, the input of
/// [`build_tree_presorted`].
pub fn presort(columns: &[Vec<f64>], rows: &[usize]) -> Vec<Vec<usize>> {
    columns
        .iter()
        .map(|col| {
            let mut s = rows.to_vec();
            sort_rows_by(col, &mut s);
            s
        })
        .collect()
}

/// Orderings of a multiset of rows, derived in linear time from orderings of
/// all rows. `counts[r]` is the multiplicity of row `r`. Equal to
/// [`presort`] on the expanded row list.
pub fn presort_counts(sorted_all: &[Vec<usize>], counts: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().sum();
    sorted_all
        .iter()
        .map(|list| {
            let mut out = Vec::with_capacity(total);
            for &r in list {
                out.extend(std::iter::repeat_n(r, counts[r]));
            }
            out
        })
        .collect()
}

/// Greedy depth-first tree on `rows` (repeats allowed, e.g. a bootstrap
/// sample). Per-split feature subsets are drawn from `params.seed` in
/// depth-first node order.
pub fn build_tree(
    columns: &[Vec<f64>],
    rows: &[usize],
    gradients: &[f64],
    hessians: &[f64],
    params: &TreeParams,
) -> Result<TreeNode, TreeError> {
    check_inputs(columns, gradients, hessians)?;
    if let Some(&r) = rows.iter().find(|&&r| r >= gradients.len()) {
        return Err(TreeError::RowOutOfRange(r));
    }
    if columns.is_empty() {
        params.validate()?;
        if rows.is_empty() {
            return Err(TreeError::EmptyRows);
        }
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + gradients[r], h + hessians[r]));
        return Ok(TreeNode::Leaf {
            value: leaf_value(g, h, params.lambda),
            sum_gradient: g,
            sum_hessian: h,
            count: rows.len(),
        });
    }
    build_tree_presorted(columns, presort(columns, rows), gradients, hessians, params)
}

/// As [`build_tree`], with the per-feature orderings supplied (see
/// [`presort`]). Every list must hold the same rows.
pub fn build_tree_presorted(
    columns: &[Vec<f64>],
    sorted: Vec<Vec<usize>>,
    gradients: &[f64],
    hessians: &[f64],
    params: &TreeParams,
) -> Result<TreeNode, TreeError> {
    params.validate()?;
    check_inputs(columns, gradients, hessians)?;
    if sorted.len() != columns.len() || columns.is_empty() {
        return Err(TreeError::InvalidParams("one sorted row list per feature required".into()));
    }
    let n = sorted[0].len();
    if n == 0 {
        return Err(TreeError::EmptyRows);
    }
    if sorted.iter().any(|l| l.len() != n) {
        return Err(TreeError::InvalidParams("sorted row lists differ in length".into()));
    }
    if let Some(&r) = sorted[0].iter().find(|&&r| r >= gradients.len()) {
        return Err(TreeError::RowOutOfRange(r));
    }
    let mut grower = Grower {
        columns,
        gradients,
        hessians,
        params,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        sorted,
        goes_left: vec![false; gradients.len()],
        scratch: Vec::with_capacity(n),
    };
    Ok(grower.grow(0, n, 0))
}

/// Oblivious tree: every node on a level shares one `(feature, threshold)`.
///
/// Levels are chosen greedily, each maximizing the gain summed over all
/// current leaves, computed from `split_gradients`. Leaf values come from
/// `leaf_gradients`, which lets a caller pick the tree shape with one
/// gradient estimate and fit leaves with another. Growth stops early when
/// no threshold has positive total gain. Leaves that receive no rows
/// predict 0.
pub fn build_oblivious_tree(
    columns: &[Vec<f64>],
    rows: &[usize],
    split_gradients: &[f64],
    leaf_gradients: &[f64],
    hessians: &[f64],
    depth: usize,
    lambda: f64,
) -> Result<TreeNode, TreeError> {
    check_inputs(columns, split_gradients, hessians)?;
    if rows.is_empty() {
        return Err(TreeError::EmptyRows);
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= hessians.len()) {
        return Err(TreeError::RowOutOfRange(r));
    }
    let sorted = presort(columns, rows);
    build_oblivious_tree_presorted(columns, rows, &sorted, split_gradients, leaf_gradients, hessians, depth, lambda)
}

/// As [`build_oblivious_tree`] with per-feature orderings of `rows`
/// supplied (see [`presort`]).
#[allow(clippy::too_many_arguments)]
pub fn build_oblivious_tree_presorted(
    columns: &[Vec<f64>],
    rows: &[usize],
    sorted: &[Vec<usize>],
    split_gradients: &[f64],
    leaf_gradients: &[f64],
    hessians: &[f64],
    depth: usize,
    lambda: f64,
) -> Result<TreeNode, TreeError> {
    check_inputs(columns, split_gradients, hessians)?;
    check_inputs(columns, leaf_gradients, hessians)?;
    if rows.is_empty() {
        return Err(TreeError::EmptyRows);
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= hessians.len()) {
        return Err(TreeError::RowOutOfRange(r));
    }
    if depth < 1 || !(lambda >= 0.0) {
        return Err(TreeError::InvalidParams("depth >= 1 and lambda >= 0 required".into()));
    }
    if sorted.len() != columns.len() || sorted.iter().any(|l| l.len() != rows.len()) {
        return Err(TreeError::InvalidParams("one sorted row list per feature required".into()));
    }
    // Summation order for totals follows feature 0, like `build_tree`.
    let order: &[usize] = sorted.first().map_or(rows, Vec::as_slice);
    let mut leaf_of = vec![0usize; hessians.len()];
    let mut levels: Vec<(usize, f64)> = Vec::new();

    for level in 0..depth {
        let n_leaves = 1usize << level;
        let mut g_tot = vec![0.0; n_leaves];
        let mut h_tot = vec![0.0; n_leaves];
        for &r in order {
            g_tot[leaf_of[r]] += split_gradients[r];
            h_tot[leaf_of[r]] += hessians[r];
        }
        let parent: Vec<f64> = g_tot.iter().zip(&h_tot).map(|(&g, &h)| score(g, h, lambda)).collect();
        let floor = min_gain(parent.iter().sum());
        let mut best: Option<SplitCandidate> = None;
        let mut gl = vec![0.0; n_leaves];
        let mut hl = vec![0.0; n_leaves];
        let mut leaf_gain = vec![0.0; n_leaves];
        for (f, list) in sorted.iter().enumerate() {
            let values = &columns[f];
            gl.iter_mut().for_each(|x| *x = 0.0);
            hl.iter_mut().for_each(|x| *x = 0.0);
            leaf_gain.iter_mut().for_each(|x| *x = 0.0);
            let mut total = 0.0;
            for i in 0..list.len().saturating_sub(1) {
                let r = list[i];
                let l = leaf_of[r];
                gl[l] += split_gradients[r];
                hl[l] += hessians[r];
                let new = score(gl[l], hl[l], lambda) + score(g_tot[l] - gl[l], h_tot[l] - hl[l], lambda)
                    - parent[l];
                if n_leaves == 1 {
                    total = new;
                } else {
                    total += new - leaf_gain[l];
                }
                leaf_gain[l] = new;
                let (a, b) = (values[r], values[list[i + 1]]);
                if a == b {
                    continue;
                }
                let gain = 0.5 * total;
                if gain > floor && best.is_none_or(|bst| gain > bst.gain) {
                    best = Some(SplitCandidate {
                        feature_index: f,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        let Some(split) = best else {
            break;
        };
        let col = &columns[split.feature_index];
        for &r in rows {
            leaf_of[r] = 2 * leaf_of[r] + usize::from(col[r] > split.threshold);
        }
        levels.push((split.feature_index, split.threshold));
    }

    let n_leaves = 1usize << levels.len();
    let mut g = vec![0.0; n_leaves];
    let mut h = vec![0.0; n_leaves];
    let mut count = vec![0usize; n_leaves];
    for &r in order {
        g[leaf_of[r]] += leaf_gradients[r];
        h[leaf_of[r]] += hessians[r];
        count[leaf_of[r]] += 1;
    }
    Ok(assemble_oblivious(&levels, 0, 0, &g, &h, &count, lambda))
}

fn assemble_oblivious(
    levels: &[(usize, f64)],
    level: usize,
    leaf: usize,
    g: &[f64],
    h: &[f64],
    count: &[usize],
    lambda: f64,
) -> TreeNode {
    if level == levels.len() {
        return TreeNode::Leaf {
            value: if count[leaf] == 0 { 0.0 } else { leaf_value(g[leaf], h[leaf], lambda) },
            sum_gradient: g[leaf],
            sum_hessian: h[leaf],
            count: count[leaf],
        };
    }
    let (feature_index, threshold) = levels[level];
    TreeNode::Internal {
        feature_index,
        threshold,
        left: Box::new(assemble_oblivious(levels, level + 1, 2 * leaf, g, h, count, lambda)),
        right: Box::new(assemble_oblivious(levels, level + 1, 2 * leaf + 1, g, h, count, lambda)),
    }
}
