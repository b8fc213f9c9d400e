//! Nested cross validation.
//!
//! A [`FoldPlan`] shuffles row indices once and slices them into outer
//! folds; each outer-training set is shuffled again and sliced into inner
//! folds. For every model and outer fold, each grid point is scored on the
//! inner folds only, the winner is refitted on the whole outer-training set
//! and evaluated once on the untouched outer-test fold.
//!
//! All (model, outer fold, grid point, inner fold) fits are independent work
//! items run on the rayon pool. Results are collected in index order, and
//! every fit gets a seed derived from its indices, so the report does not
//! depend on the number of threads.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::metrics::{aggregate_folds, relative_difference, MetricError, MetricPair, PredictionSet};
use crate::regressors::{EstimatorSpec, FitError, GridPoint, Regressor};
use crate::seed::{derive, label_hash};

#[derive(Debug, Error)]
pub enum CvError {
    #[error("cannot split {n} rows into {outer_k} outer folds with {inner_k} inner folds: {reason}")]
    PlanTooSmall {
        n: usize,
        outer_k: usize,
        inner_k: usize,
        reason: String,
    },
    #[error("fold plan is for {plan} rows, dataset has {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("{model}: empty hyperparameter grid")]
    EmptyGrid { model: String },
    #[error("{model}, outer fold {outer}: every grid point failed ({first})")]
    AllGridPointsFailed { model: String, outer: usize, first: String },
    #[error("{model}, outer fold {outer}, refit of grid point {grid}: {source}")]
    Refit {
        model: String,
        outer: usize,
        grid: usize,
        source: FitError,
    },
    #[error("{model}, outer fold {outer}: {source}")]
    Metric {
        model: String,
        outer: usize,
        source: MetricError,
    },
    #[error("every model failed; first error: {0}")]
    AllModelsFailed(String),
    #[error("no models to evaluate")]
    NoModels,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Outer and inner fold assignment, shared by every model of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub outer_k: usize,
    pub inner_k: usize,
    pub seed: u64,
    /// Test indices of each outer fold.
    pub outer_folds: Vec<Vec<usize>>,
    /// Per outer fold, the validation indices of each inner fold.
    pub inner_folds: Vec<Vec<Vec<usize>>>,
}

/// Contiguous slices of `order`; the first `len % k` slices get one extra.
fn slice_folds(order: &[usize], k: usize) -> Vec<Vec<usize>> {
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

pub fn make_fold_plan(n: usize, outer_k: usize, inner_k: usize, seed: u64) -> Result<FoldPlan, CvError> {
    let too_small = |reason: &str| CvError::PlanTooSmall {
        n,
        outer_k,
        inner_k,
        reason: reason.into(),
    };
    if outer_k < 2 || inner_k < 2 {
        return Err(too_small("fold counts must be at least 2"));
    }
    if n < outer_k {
        return Err(too_small("fewer rows than outer folds"));
    }
    // The smallest outer-training set belongs to the largest test fold.
    if n - n.div_ceil(outer_k) < inner_k {
        return Err(too_small("an outer-training set has fewer rows than inner folds"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let outer_folds = slice_folds(&order, outer_k);
    let mut plan = FoldPlan {
        n,
        outer_k,
        inner_k,
        seed,
        outer_folds,
        inner_folds: Vec::with_capacity(outer_k),
    };
    for o in 0..outer_k {
        let mut train = plan.outer_train(o);
        train.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &[o as u64 + 1])));
        plan.inner_folds.push(slice_folds(&train, inner_k));
    }
    Ok(plan)
}

impl FoldPlan {
    /// Outer-training indices of fold `o`, ascending.
    pub fn outer_train(&self, o: usize) -> Vec<usize> {
        let mut test = vec![false; self.n];
        for &i in &self.outer_folds[o] {
            test[i] = true;
        }
        (0..self.n).filter(|&i| !test[i]).collect()
    }

    /// Inner-training indices for inner fold `j` of outer fold `o`, ascending.
    pub fn inner_train(&self, o: usize, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.inner_folds[o]
            .iter()
            .enumerate()
            .filter(|&(jj, _)| jj != j)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Checks the partition invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> Result<(), String> {
        if self.outer_folds.len() != self.outer_k || self.inner_folds.len() != self.outer_k {
            return Err("wrong number of outer folds".into());
        }
        let sizes_ok = |folds: &[Vec<usize>], total: usize, k: usize| {
            folds.len() == k
                && folds
                    .iter()
                    .enumerate()
                    .all(|(f, v)| v.len() == total / k + usize::from(f < total % k))
        };
        if !sizes_ok(&self.outer_folds, self.n, self.outer_k) {
            return Err("outer fold sizes break the floor/remainder rule".into());
        }
        let mut owner = vec![usize::MAX; self.n];
        for (o, fold) in self.outer_folds.iter().enumerate() {
            for &i in fold {
                if i >= self.n {
                    return Err(format!("index {i} out of range"));
                }
                if owner[i] != usize::MAX {
                    return Err(format!("index {i} in outer folds {} and {o}", owner[i]));
                }
                owner[i] = o;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(format!("index {i} in no outer fold"));
        }
        for o in 0..self.outer_k {
            let train = self.outer_train(o);
            if !sizes_ok(&self.inner_folds[o], train.len(), self.inner_k) {
                return Err(format!("inner fold sizes of outer fold {o} break the floor/remainder rule"));
            }
            let mut inner: Vec<usize> = self.inner_folds[o].iter().flatten().copied().collect();
            inner.sort_unstable();
            if inner != train {
                return Err(format!("inner folds of outer fold {o} do not partition its training set"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the fold contents, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.n, self.outer_k, self.inner_k] {
            h.update((v as u64).to_le_bytes());
        }
        for (o, fold) in self.outer_folds.iter().enumerate() {
            h.update(b"O");
            for &i in fold {
                h.update((i as u64).to_le_bytes());
            }
            for inner in &self.inner_folds[o] {
                h.update(b"I");
                for &i in inner {
                    h.update((i as u64).to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Where in the nested loop a fit happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Fit on inner-training rows, scored on inner fold `inner_fold`.
    Inner { grid_index: usize, inner_fold: usize },
    /// The winner refitted on the full outer-training set.
    Refit { grid_index: usize },
    /// Non-nested baseline: fit on outer-training rows, scored on the outer
    /// test fold for every grid point.
    Conventional { grid_index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FitContext {
    pub seed: u64,
    pub outer_fold: usize,
    pub stage: Stage,
}

impl FitContext {
    fn new(run_seed: u64, label: &str, outer_fold: usize, stage: Stage) -> Self {
        let tail = match stage {
            Stage::Inner { grid_index, inner_fold } => [0, grid_index as u64, inner_fold as u64],
            Stage::Refit { grid_index } => [1, grid_index as u64, 0],
            Stage::Conventional { grid_index } => [2, grid_index as u64, 0],
        };
        Self {
            seed: derive(run_seed, &[label_hash(label), outer_fold as u64, tail[0], tail[1], tail[2]]),
            outer_fold,
            stage,
        }
    }
}

/// A tunable model as seen by the nested loop.
pub trait Estimator: Sync {
    fn label(&self) -> String;
    fn grid(&self) -> Vec<GridPoint>;
    fn fit(&self, train: &Dataset, point: &GridPoint, ctx: &FitContext) -> Result<Box<dyn Regressor>, FitError>;
}

impl Estimator for EstimatorSpec {
    fn label(&self) -> String {
        self.family.label().to_string()
    }

    fn grid(&self) -> Vec<GridPoint> {
        self.points()
    }

    fn fit(&self, train: &Dataset, point: &GridPoint, ctx: &FitContext) -> Result<Box<dyn Regressor>, FitError> {
        Ok(Box::new(EstimatorSpec::fit(self, train, point, ctx.seed)?))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Mse,
    Mae,
}

impl SelectionMetric {
    fn of(self, m: &MetricPair) -> f64 {
        match self {
            SelectionMetric::Mse => m.mse,
            SelectionMetric::Mae => m.mae,
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Mse => "mse",
            SelectionMetric::Mae => "mae",
        })
    }
}

/// Index of the lowest score; the first wins ties. `None` if every score
/// is infinite or NaN.
pub fn select_index(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub grid_index: usize,
    pub inner_fold: Option<usize>,
    pub message: String,
}

/// Result of the inner search for one outer fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub grid_index: usize,
    pub point: GridPoint,
    /// Mean inner-validation score of the winner.
    pub score: f64,
    /// Mean inner-validation score per grid point; `None` where a fit failed.
    pub grid_scores: Vec<Option<f64>>,
    pub failures: Vec<GridFailure>,
}

fn score_fit(
    est: &dyn Estimator,
    data: &Dataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    point: &GridPoint,
    ctx: &FitContext,
) -> Result<MetricPair, String> {
    let train = data.split_rows(train_idx).map_err(|e| e.to_string())?;
    let eval = data.split_rows(eval_idx).map_err(|e| e.to_string())?;
    let model = est.fit(&train, point, ctx).map_err(|e| e.to_string())?;
    let pred = model.predict(&eval);
    PredictionSet::new(eval.targets().to_vec(), pred)
        .map(|p| p.metrics())
        .map_err(|e| e.to_string())
}

/// Turns per-(grid, inner fold) outcomes into a selection.
fn select_from(
    label: &str,
    outer: usize,
    grid: &[GridPoint],
    outcomes: &[Vec<Result<MetricPair, String>>],
    metric: SelectionMetric,
) -> Result<Selection, CvError> {
    let mut failures = Vec::new();
    let mut scores = Vec::with_capacity(grid.len());
    for (g, per_inner) in outcomes.iter().enumerate() {
        let mut sum = 0.0;
        let mut ok = true;
        for (j, r) in per_inner.iter().enumerate() {
            match r {
                Ok(m) => sum += metric.of(m),
                Err(message) => {
                    ok = false;
                    failures.push(GridFailure {
                        grid_index: g,
                        inner_fold: Some(j),
                        message: message.clone(),
                    });
                }
            }
        }
        let mean = sum / per_inner.len() as f64;
        scores.push(if ok && mean.is_finite() { mean } else { f64::INFINITY });
    }
    let Some(g) = select_index(&scores) else {
        return Err(CvError::AllGridPointsFailed {
            model: label.into(),
            outer,
            first: failures.first().map_or_else(|| "non-finite scores".into(), |f| f.message.clone()),
        });
    };
    Ok(Selection {
        grid_index: g,
        point: grid[g].clone(),
        score: scores[g],
        grid_scores: scores.iter().map(|s| s.is_finite().then_some(*s)).collect(),
        failures,
    })
}

/// Inner search for outer fold `outer`: every grid point is fitted on each
/// inner-training split and scored on the matching inner fold. Only rows of
/// the outer-training set are touched.
pub fn inner_select(
    est: &dyn Estimator,
    data: &Dataset,
    plan: &FoldPlan,
    outer: usize,
    metric: SelectionMetric,
    run_seed: u64,
) -> Result<Selection, CvError> {
    check_plan(plan, data)?;
    let label = est.label();
    let grid = est.grid();
    if grid.is_empty() {
        return Err(CvError::EmptyGrid { model: label });
    }
    let items: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..plan.inner_k).map(move |j| (g, j)))
        .collect();
    let flat: Vec<Result<MetricPair, String>> = items
        .par_iter()
        .map(|&(g, j)| inner_item(est, &label, data, plan, outer, g, j, &grid[g], run_seed))
        .collect();
    let outcomes: Vec<Vec<_>> = flat.chunks(plan.inner_k).map(<[_]>::to_vec).collect();
    select_from(&label, outer, &grid, &outcomes, metric)
}

#[allow(clippy::too_many_arguments)]
fn inner_item(
    est: &dyn Estimator,
    label: &str,
    data: &Dataset,
    plan: &FoldPlan,
    outer: usize,
    g: usize,
    j: usize,
    point: &GridPoint,
    run_seed: u64,
) -> Result<MetricPair, String> {
    let ctx = FitContext::new(
        run_seed,
        label,
        outer,
        Stage::Inner {
            grid_index: g,
            inner_fold: j,
        },
    );
    score_fit(est, data, &plan.inner_train(outer, j), &plan.inner_folds[outer][j], point, &ctx)
}

fn check_plan(plan: &FoldPlan, data: &Dataset) -> Result<(), CvError> {
    if plan.n != data.n() {
        return Err(CvError::PlanMismatch {
            plan: plan.n,
            data: data.n(),
        });
    }
    Ok(())
}

/// One outer fold's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub outer_fold: usize,
    pub test_size: usize,
    pub selection: Selection,
    pub metrics: MetricPair,
}

fn refit_and_score(
    est: &dyn Estimator,
    label: &str,
    data: &Dataset,
    plan: &FoldPlan,
    outer: usize,
    selection: Selection,
    run_seed: u64,
) -> Result<FoldResult, CvError> {
    let g = selection.grid_index;
    let ctx = FitContext::new(run_seed, label, outer, Stage::Refit { grid_index: g });
    let train = data.split_rows(&plan.outer_train(outer))?;
    let test = data.split_rows(&plan.outer_folds[outer])?;
    let model = est.fit(&train, &selection.point, &ctx).map_err(|source| CvError::Refit {
        model: label.into(),
        outer,
        grid: g,
        source,
    })?;
    let metrics = PredictionSet::new(test.targets().to_vec(), model.predict(&test))
        .map_err(|source| CvError::Metric {
            model: label.into(),
            outer,
            source,
        })?
        .metrics();
    Ok(FoldResult {
        outer_fold: outer,
        test_size: test.n(),
        selection,
        metrics,
    })
}

/// Inner selection, refit and outer-test scoring for every outer fold.
pub fn outer_evaluate(
    est: &dyn Estimator,
    data: &Dataset,
    plan: &FoldPlan,
    metric: SelectionMetric,
    run_seed: u64,
) -> Result<Vec<FoldResult>, CvError> {
    check_plan(plan, data)?;
    evaluate_many(&[est], data, plan, metric, run_seed)
        .pop()
        .expect("one estimator in, one result out")
}

/// The nested loop for several estimators with every inner fit in one
/// parallel batch, then every refit in a second. The plan must match `data`.
fn evaluate_many(
    ests: &[&dyn Estimator],
    data: &Dataset,
    plan: &FoldPlan,
    metric: SelectionMetric,
    run_seed: u64,
) -> Vec<Result<Vec<FoldResult>, CvError>> {
    let labels: Vec<String> = ests.iter().map(|e| e.label()).collect();
    let grids: Vec<Vec<GridPoint>> = ests.iter().map(|e| e.grid()).collect();
    let (outer_k, inner_k) = (plan.outer_k, plan.inner_k);
    let mut items = Vec::new();
    for (m, grid) in grids.iter().enumerate() {
        for o in 0..outer_k {
            for g in 0..grid.len() {
                for j in 0..inner_k {
                    items.push((m, o, g, j));
                }
            }
        }
    }
    let flat: Vec<Result<MetricPair, String>> = items
        .par_iter()
        .map(|&(m, o, g, j)| inner_item(ests[m], &labels[m], data, plan, o, g, j, &grids[m][g], run_seed))
        .collect();

    let mut cursor = flat.into_iter();
    let mut selections: Vec<Vec<Result<Selection, CvError>>> = Vec::with_capacity(ests.len());
    for (m, grid) in grids.iter().enumerate() {
        let mut per_outer = Vec::with_capacity(outer_k);
        for o in 0..outer_k {
            if grid.is_empty() {
                per_outer.push(Err(CvError::EmptyGrid { model: labels[m].clone() }));
                continue;
            }
            let outcomes: Vec<Vec<_>> = (0..grid.len())
                .map(|_| cursor.by_ref().take(inner_k).collect())
                .collect();
            per_outer.push(select_from(&labels[m], o, grid, &outcomes, metric));
        }
        selections.push(per_outer);
    }

    let refits: Vec<(usize, usize, Result<Selection, CvError>)> = selections
        .into_iter()
        .enumerate()
        .flat_map(|(m, per_outer)| per_outer.into_iter().enumerate().map(move |(o, s)| (m, o, s)))
        .collect();
    let folds: Vec<(usize, Result<FoldResult, CvError>)> = refits
        .into_par_iter()
        .map(|(m, o, sel)| {
            (m, sel.and_then(|s| refit_and_score(ests[m], &labels[m], data, plan, o, s, run_seed)))
        })
        .collect();

    let mut out: Vec<Result<Vec<FoldResult>, CvError>> = ests.iter().map(|_| Ok(Vec::new())).collect();
    for (m, r) in folds {
        if let Ok(list) = &mut out[m] {
            match r {
                Ok(f) => list.push(f),
                Err(e) => out[m] = Err(e),
            }
        }
    }
    out
}

/// Per-model section of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub grid_size: usize,
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold outer-test metrics; absent if the model failed.
    pub aggregate: Option<MetricPair>,
    /// `(other - best) / other` against the best model; absent for the best
    /// model itself and for failed models.
    pub diff_mae: Option<f64>,
    pub diff_mse: Option<f64>,
    pub error: Option<String>,
}

impl ModelReport {
    /// A report entry carrying only aggregate metrics.
    pub fn from_metrics(label: &str, aggregate: MetricPair) -> Self {
        Self {
            label: label.into(),
            grid_size: 0,
            folds: Vec::new(),
            aggregate: Some(aggregate),
            diff_mae: None,
            diff_mse: None,
            error: None,
        }
    }
}

/// Full benchmark outcome. Contains no timing, so equal inputs give equal
/// documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub n: usize,
    pub outer_k: usize,
    pub inner_k: usize,
    pub plan_hash: String,
    pub selection_metric: SelectionMetric,
    pub best: Option<String>,
    pub models: Vec<ModelReport>,
}

impl EvaluationReport {
    /// Report from precomputed aggregate metrics, ranked.
    pub fn from_metrics(entries: &[(&str, MetricPair)]) -> Self {
        let mut r = Self {
            seed: 0,
            n: 0,
            outer_k: 0,
            inner_k: 0,
            plan_hash: String::new(),
            selection_metric: SelectionMetric::default(),
            best: None,
            models: entries.iter().map(|(l, m)| ModelReport::from_metrics(l, *m)).collect(),
        };
        r.rank();
        r
    }

    pub fn model(&self, label: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.label == label)
    }

    /// Marks the best model (lowest MAE, then lowest MSE, then list order)
    /// and fills the relative-difference columns of the others.
    pub fn rank(&mut self) {
        let mut best: Option<(usize, MetricPair)> = None;
        for (i, m) in self.models.iter().enumerate() {
            if let Some(a) = m.aggregate {
                let better = best.is_none_or(|(_, b)| a.mae < b.mae || (a.mae == b.mae && a.mse < b.mse));
                if better {
                    best = Some((i, a));
                }
            }
        }
        self.best = best.map(|(i, _)| self.models[i].label.clone());
        for (i, m) in self.models.iter_mut().enumerate() {
            m.diff_mae = None;
            m.diff_mse = None;
            let (Some((bi, b)), Some(a)) = (best, m.aggregate) else {
                continue;
            };
            if i == bi {
                continue;
            }
            m.diff_mae = diff(b.mae, a.mae);
            m.diff_mse = diff(b.mse, a.mse);
        }
    }
}

/// Relative difference, with `0` when both values are 0.
fn diff(best: f64, other: f64) -> Option<f64> {
    match relative_difference(best, other) {
        Ok(d) => Some(d),
        Err(_) if best == 0.0 && other == 0.0 => Some(0.0),
        Err(_) => None,
    }
}

/// Runs the nested loop for every estimator on one shared fold plan.
/// A model whose every fold cannot be completed is kept in the report with
/// its error; the run fails only when no model succeeds.
pub fn run_benchmark(
    ests: &[&dyn Estimator],
    data: &Dataset,
    outer_k: usize,
    inner_k: usize,
    metric: SelectionMetric,
    seed: u64,
) -> Result<EvaluationReport, CvError> {
    let plan = make_fold_plan(data.n(), outer_k, inner_k, seed)?;
    run_with_plan(ests, data, &plan, metric)
}

/// As [`run_benchmark`] with an explicit plan; the plan's seed is the run seed.
pub fn run_with_plan(
    ests: &[&dyn Estimator],
    data: &Dataset,
    plan: &FoldPlan,
    metric: SelectionMetric,
) -> Result<EvaluationReport, CvError> {
    run_with_plan_timed(ests, data, plan, metric).map(|(report, _)| report)
}

/// As [`run_with_plan`], also returning each model's wall time. Models are
/// evaluated one after another, each with its own parallel batches.
pub fn run_with_plan_timed(
    ests: &[&dyn Estimator],
    data: &Dataset,
    plan: &FoldPlan,
    metric: SelectionMetric,
) -> Result<(EvaluationReport, Vec<Duration>), CvError> {
    if ests.is_empty() {
        return Err(CvError::NoModels);
    }
    check_plan(plan, data)?;
    let mut results = Vec::with_capacity(ests.len());
    let mut times = Vec::with_capacity(ests.len());
    for est in ests {
        let start = Instant::now();
        results.extend(evaluate_many(&[*est], data, plan, metric, plan.seed));
        times.push(start.elapsed());
    }
    let mut models = Vec::with_capacity(ests.len());
    let mut first_error = None;
    for (est, r) in ests.iter().zip(results) {
        let grid_size = est.grid().len();
        match r {
            Ok(folds) => {
                let per_fold: Vec<MetricPair> = folds.iter().map(|f| f.metrics).collect();
                models.push(ModelReport {
                    label: est.label(),
                    grid_size,
                    aggregate: Some(aggregate_folds(&per_fold).expect("outer_k >= 2 folds")),
                    folds,
                    diff_mae: None,
                    diff_mse: None,
                    error: None,
                });
            }
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
                models.push(ModelReport {
                    label: est.label(),
                    grid_size,
                    folds: Vec::new(),
                    aggregate: None,
                    diff_mae: None,
                    diff_mse: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if models.iter().all(|m| m.aggregate.is_none()) {
        return Err(CvError::AllModelsFailed(first_error.unwrap_or_default()));
    }
    let mut report = EvaluationReport {
        seed: plan.seed,
        n: plan.n,
        outer_k: plan.outer_k,
        inner_k: plan.inner_k,
        plan_hash: plan.hash(),
        selection_metric: metric,
        best: None,
        models,
    };
    report.rank();
    Ok((report, times))
}

/// Non-nested baseline result for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionalResult {
    pub label: String,
    pub grid_index: usize,
    pub point: GridPoint,
    /// Outer-fold metrics of the chosen point, averaged. The same folds both
    /// pick the point and score it, so this estimate is optimistic.
    pub aggregate: MetricPair,
}

/// Conventional cross validation: every grid point is scored on the outer
/// test folds and the best score is reported as the model's error.
pub fn conventional_evaluate(
    est: &dyn Estimator,
    data: &Dataset,
    plan: &FoldPlan,
    metric: SelectionMetric,
) -> Result<ConventionalResult, CvError> {
    check_plan(plan, data)?;
    let label = est.label();
    let grid = est.grid();
    if grid.is_empty() {
        return Err(CvError::EmptyGrid { model: label });
    }
    let items: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..plan.outer_k).map(move |o| (g, o)))
        .collect();
    let flat: Vec<Result<MetricPair, String>> = items
        .par_iter()
        .map(|&(g, o)| {
            let ctx = FitContext::new(plan.seed, &label, o, Stage::Conventional { grid_index: g });
            score_fit(est, data, &plan.outer_train(o), &plan.outer_folds[o], &grid[g], &ctx)
        })
        .collect();
    let mut per_point = Vec::with_capacity(grid.len());
    let mut first_err = None;
    for chunk in flat.chunks(plan.outer_k) {
        let ok: Result<Vec<MetricPair>, String> = chunk.iter().cloned().collect();
        match ok {
            Ok(ms) => per_point.push(Some(aggregate_folds(&ms).expect("outer_k >= 2"))),
            Err(e) => {
                first_err.get_or_insert(e);
                per_point.push(None);
            }
        }
    }
    let scores: Vec<f64> = per_point
        .iter()
        .map(|m| m.map_or(f64::INFINITY, |m| metric.of(&m)))
        .collect();
    let g = select_index(&scores).ok_or_else(|| CvError::AllGridPointsFailed {
        model: label.clone(),
        outer: 0,
        first: first_err.unwrap_or_else(|| "non-finite scores".into()),
    })?;
    Ok(ConventionalResult {
        label,
        grid_index: g,
        point: grid[g].clone(),
        aggregate: per_point[g].expect("selected point has metrics"),
    })
}
