//! Instrumented estimator that records every row it is shown.
//!
//! [`LeakageProbe`] fits a constant (the training mean) but logs the row ids
//! of each training set it receives and of each set it is asked to predict,
//! together with the [`FitContext`]. [`LeakageProbe::violations`] then
//! checks the log against a [`FoldPlan`].

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use crate::cv::{Estimator, FitContext, FoldPlan, Stage};
use crate::data::Dataset;
use crate::regressors::{FitError, GridPoint, Regressor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Fit,
    Predict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub ctx: FitContext,
    pub kind: AccessKind,
    pub rows: Vec<usize>,
}

pub struct LeakageProbe {
    grid_size: usize,
    log: Arc<Mutex<Vec<Access>>>,
}

impl LeakageProbe {
    pub fn new(grid_size: usize) -> Self {
        Self {
            grid_size,
            log: Arc::default(),
        }
    }

    pub fn accesses(&self) -> Vec<Access> {
        self.log.lock().expect("probe log").clone()
    }

    /// Every access that breaks the fold plan:
    ///
    /// - inner fits and inner predictions may only see rows of the outer
    ///   fold's training set, and inner predictions only the inner fold;
    /// - refits may only train on the outer-training set.
    pub fn violations(&self, plan: &FoldPlan) -> Vec<String> {
        let tests: Vec<HashSet<usize>> = plan.outer_folds.iter().map(|f| f.iter().copied().collect()).collect();
        let mut out = Vec::new();
        for a in self.accesses() {
            let o = a.ctx.outer_fold;
            let leaked: Vec<usize> = a.rows.iter().copied().filter(|r| tests[o].contains(r)).collect();
            match (a.ctx.stage, a.kind) {
                (Stage::Inner { .. }, _) | (Stage::Refit { .. }, AccessKind::Fit) if !leaked.is_empty() => {
                    out.push(format!("{:?} {:?} on outer fold {o} saw test rows {leaked:?}", a.ctx.stage, a.kind));
                }
                _ => {}
            }
            if let (Stage::Inner { inner_fold, .. }, AccessKind::Predict) = (a.ctx.stage, a.kind) {
                let fold: HashSet<usize> = plan.inner_folds[o][inner_fold].iter().copied().collect();
                if a.rows.iter().any(|r| !fold.contains(r)) {
                    out.push(format!("inner prediction on outer fold {o} left inner fold {inner_fold}"));
                }
            }
        }
        out
    }
}

struct ProbeModel {
    value: f64,
    ctx: FitContext,
    log: Arc<Mutex<Vec<Access>>>,
}

impl Regressor for ProbeModel {
    fn predict_row(&self, _features: &[f64]) -> f64 {
        self.value
    }

    fn predict(&self, data: &Dataset) -> Vec<f64> {
        self.log.lock().expect("probe log").push(Access {
            ctx: self.ctx,
            kind: AccessKind::Predict,
            rows: data.row_ids().to_vec(),
        });
        vec![self.value; data.n()]
    }
}

impl Estimator for LeakageProbe {
    fn label(&self) -> String {
        "PROBE".into()
    }

    fn grid(&self) -> Vec<GridPoint> {
        (0..self.grid_size)
            .map(|g| GridPoint::default().with("point", g as f64))
            .collect()
    }

    fn fit(&self, train: &Dataset, _point: &GridPoint, ctx: &FitContext) -> Result<Box<dyn Regressor>, FitError> {
        self.log.lock().expect("probe log").push(Access {
            ctx: *ctx,
            kind: AccessKind::Fit,
            rows: train.row_ids().to_vec(),
        });
        let value = train.targets().iter().sum::<f64>() / train.n() as f64;
        Ok(Box::new(ProbeModel {
            value,
            ctx: *ctx,
            log: Arc::clone(&self.log),
        }))
    }
}
