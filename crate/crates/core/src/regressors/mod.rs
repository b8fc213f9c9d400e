//! The five model families behind one fit/predict contract.
//!
//! A family is fitted from a training [`Dataset`], one [`GridPoint`] of
//! hyperparameters and a seed. Families flagged `normalize_features` (SVR,
//! ANN) z-score their inputs with parameters fitted on that training set
//! only; the fitted [`FittedModel`] carries those parameters and applies
//! them at prediction time.

pub mod ann;
pub mod boosting;
pub mod forest;
pub mod svr;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, NormalizationParams};
use crate::tree::{TreeError, TreeParams};

pub use ann::{ann_fit, ann_predict, AnnModel, AnnParams};
pub use boosting::{boosted_predict, gbt_fit, obt_fit, BoostVariant, BoostedModel, ObtParams};
pub use forest::{rf_fit, rf_fit_with, ForestModel};
pub use svr::{svr_fit, svr_predict, SvrModel, SvrParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("unknown hyperparameter `{name}` for {family}")]
    UnknownHyperparam { family: String, name: String },
    #[error("missing hyperparameter `{0}`")]
    MissingHyperparam(String),
    #[error("hyperparameter `{name}`: {reason}")]
    InvalidHyperparam { name: String, reason: String },
    #[error("solver did not converge after {iterations} iterations (KKT violation {violation:.3e})")]
    NotConverged { iterations: usize, violation: f64 },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

impl From<DataError> for FitError {
    fn from(e: DataError) -> Self {
        FitError::InvalidData(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "SVR")]
    Svr,
    #[serde(rename = "CBR")]
    Cbr,
    #[serde(rename = "ANN")]
    Ann,
    #[serde(rename = "XGBR")]
    Xgbr,
    #[serde(rename = "RFR", alias = "RF")]
    Rf,
}

impl Family {
    /// Report order.
    pub const ALL: [Family; 5] = [Family::Svr, Family::Cbr, Family::Ann, Family::Xgbr, Family::Rf];

    pub fn label(self) -> &'static str {
        match self {
            Family::Svr => "SVR",
            Family::Cbr => "CBR",
            Family::Ann => "ANN",
            Family::Xgbr => "XGBR",
            Family::Rf => "RFR",
        }
    }

    pub fn normalizes_features(self) -> bool {
        matches!(self, Family::Svr | Family::Ann)
    }

    pub fn params(self) -> &'static [ParamDef] {
        match self {
            Family::Svr => SVR_PARAMS,
            Family::Cbr => CBR_PARAMS,
            Family::Ann => ANN_PARAMS,
            Family::Xgbr => XGBR_PARAMS,
            Family::Rf => RF_PARAMS,
        }
    }

    pub fn param(self, name: &str) -> Option<&'static ParamDef> {
        self.params().iter().find(|p| p.name == name)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown model family `{0}` (expected SVR, CBR, ANN, XGBR or RF)")]
pub struct UnknownFamily(pub String);

impl FromStr for Family {
    type Err = UnknownFamily;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SVR" => Ok(Family::Svr),
            "CBR" => Ok(Family::Cbr),
            "ANN" => Ok(Family::Ann),
            "XGBR" | "XGB" => Ok(Family::Xgbr),
            "RF" | "RFR" => Ok(Family::Rf),
            _ => Err(UnknownFamily(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Range {
    /// `x > 0`
    Positive,
    /// `x >= 0`
    NonNegative,
    /// `0 < x <= 1`
    UnitInterval,
    /// `lo <= x <= hi`
    Closed(f64, f64),
}

impl Range {
    fn contains(self, x: f64) -> bool {
        match self {
            Range::Positive => x > 0.0 && x.is_finite(),
            Range::NonNegative => x >= 0.0 && x.is_finite(),
            Range::UnitInterval => x > 0.0 && x <= 1.0,
            Range::Closed(lo, hi) => x >= lo && x <= hi,
        }
    }

    fn describe(self) -> String {
        match self {
            Range::Positive => "must be > 0".into(),
            Range::NonNegative => "must be >= 0".into(),
            Range::UnitInterval => "must lie in (0, 1]".into(),
            Range::Closed(lo, hi) => format!("must lie in [{lo}, {hi}]"),
        }
    }
}

/// One documented hyperparameter of a family.
#[derive(Debug)]
pub struct ParamDef {
    pub name: &'static str,
    pub integer: bool,
    pub range: Range,
    pub default_grid: &'static [f64],
    pub doc: &'static str,
}

impl ParamDef {
    pub fn check(&self, value: f64) -> Result<(), FitError> {
        let bad = |reason: String| {
            Err(FitError::InvalidHyperparam {
                name: self.name.into(),
                reason,
            })
        };
        if self.integer && value.fract() != 0.0 {
            return bad(format!("must be an integer, got {value}"));
        }
        if !self.range.contains(value) {
            return bad(format!("{}, got {value}", self.range.describe()));
        }
        Ok(())
    }
}

const fn p(name: &'static str, integer: bool, range: Range, default_grid: &'static [f64], doc: &'static str) -> ParamDef {
    ParamDef {
        name,
        integer,
        range,
        default_grid,
        doc,
    }
}

const SVR_PARAMS: &[ParamDef] = &[
    p("c", false, Range::Positive, &[1.0, 10.0, 100.0], "box constraint"),
    p("epsilon", false, Range::NonNegative, &[0.1, 1.0], "tube half-width, dB"),
    p("gamma", false, Range::Positive, &[0.1, 1.0 / 6.0], "RBF width"),
    p("tol", false, Range::Positive, &[1e-3], "KKT violation threshold"),
    p("max_iter", true, Range::NonNegative, &[0.0], "iteration cap, 0 = max(100000, 200 n)"),
];

const ANN_PARAMS: &[ParamDef] = &[
    p("hidden_units", true, Range::Closed(1.0, 4096.0), &[8.0, 16.0, 32.0], "hidden layer width"),
    p("learning_rate", false, Range::Positive, &[0.01], "Adam step size"),
    p("epochs", true, Range::NonNegative, &[200.0], "passes over the training set"),
    p("batch_size", true, Range::Closed(1.0, 1e9), &[32.0], "mini-batch size"),
];

const XGBR_PARAMS: &[ParamDef] = &[
    p("max_depth", true, Range::Closed(1.0, 64.0), &[3.0, 5.0, 7.0], "tree depth"),
    p("learning_rate", false, Range::UnitInterval, &[0.05, 0.1, 0.3], "shrinkage"),
    p("rounds", true, Range::Closed(1.0, 1e6), &[100.0, 300.0], "boosting rounds"),
    p("lambda", false, Range::NonNegative, &[1.0], "L2 leaf penalty"),
    p("gamma", false, Range::NonNegative, &[0.0], "minimum split gain"),
    p("min_samples_leaf", true, Range::Closed(1.0, 1e9), &[1.0], "rows per leaf"),
    p("feature_subsample", false, Range::UnitInterval, &[1.0], "features tried per split"),
];

const CBR_PARAMS: &[ParamDef] = &[
    p("depth", true, Range::Closed(1.0, 16.0), &[3.0, 5.0, 7.0], "oblivious tree depth"),
    p("learning_rate", false, Range::UnitInterval, &[0.05, 0.1, 0.3], "shrinkage"),
    p("rounds", true, Range::Closed(1.0, 1e6), &[100.0, 300.0], "boosting rounds"),
    p("lambda", false, Range::NonNegative, &[3.0], "L2 leaf penalty"),
    p(
        "ordered_min_rows",
        true,
        Range::NonNegative,
        &[256.0],
        "ordered boosting on training sets with at least this many rows, 0 = never",
    ),
];

const RF_PARAMS: &[ParamDef] = &[
    p("n_trees", true, Range::Closed(1.0, 1e6), &[100.0, 300.0], "forest size"),
    p("max_depth", true, Range::Closed(1.0, 64.0), &[32.0], "tree depth"),
    p("min_samples_leaf", true, Range::Closed(1.0, 1e9), &[1.0], "rows per leaf"),
    p("feature_subsample", false, Range::UnitInterval, &[0.8], "features tried per split"),
];

/// One hyperparameter assignment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridPoint(pub BTreeMap<String, f64>);

impl GridPoint {
    pub fn get(&self, name: &str) -> Result<f64, FitError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| FitError::MissingHyperparam(name.into()))
    }

    fn usize(&self, name: &str) -> Result<usize, FitError> {
        Ok(self.get(name)? as usize)
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.0.insert(name.into(), value);
        self
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Named axes of a search grid, in a fixed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub axes: Vec<(String, Vec<f64>)>,
}

impl HyperGrid {
    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product; the last axis varies fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = vec![GridPoint::default()];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|pt| values.iter().map(move |&v| pt.clone().with(name, v)))
                .collect();
        }
        if self.axes.iter().any(|(_, v)| v.is_empty()) {
            out.clear();
        }
        out
    }
}

/// A model family plus the grid it is tuned over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub family: Family,
    pub grid: HyperGrid,
    pub normalize_features: bool,
}

impl EstimatorSpec {
    /// The family's documented default grid.
    pub fn default_for(family: Family) -> Self {
        Self {
            family,
            grid: HyperGrid {
                axes: family
                    .params()
                    .iter()
                    .map(|p| (p.name.to_string(), p.default_grid.to_vec()))
                    .collect(),
            },
            normalize_features: family.normalizes_features(),
        }
    }

    pub fn label(&self) -> &'static str {
        self.family.label()
    }

    /// Replaces the values of one axis.
    pub fn set_axis(&mut self, name: &str, values: Vec<f64>) -> Result<(), FitError> {
        let def = self.family.param(name).ok_or_else(|| FitError::UnknownHyperparam {
            family: self.family.label().into(),
            name: name.into(),
        })?;
        if values.is_empty() {
            return Err(FitError::InvalidHyperparam {
                name: name.into(),
                reason: "empty value list".into(),
            });
        }
        for &v in &values {
            def.check(v)?;
        }
        let axis = self
            .grid
            .axes
            .iter_mut()
            .find(|(n, _)| n == name)
            .expect("default grid covers every parameter");
        axis.1 = values;
        Ok(())
    }

    /// Builder form of [`set_axis`](Self::set_axis).
    pub fn with_axis(mut self, name: &str, values: &[f64]) -> Result<Self, FitError> {
        self.set_axis(name, values.to_vec())?;
        Ok(self)
    }

    /// Checks every axis name and value against the family's documented set.
    pub fn validate(&self) -> Result<(), FitError> {
        for (name, values) in &self.grid.axes {
            let def = self.family.param(name).ok_or_else(|| FitError::UnknownHyperparam {
                family: self.family.label().into(),
                name: name.clone(),
            })?;
            if values.is_empty() {
                return Err(FitError::InvalidHyperparam {
                    name: name.clone(),
                    reason: "empty value list".into(),
                });
            }
            for &v in values {
                def.check(v)?;
            }
        }
        for def in self.family.params() {
            if !self.grid.axes.iter().any(|(n, _)| n == def.name) {
                return Err(FitError::MissingHyperparam(def.name.into()));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<GridPoint> {
        self.grid.points()
    }

    pub fn fit(&self, train: &Dataset, point: &GridPoint, seed: u64) -> Result<FittedModel, FitError> {
        fit_family(self.family, train, point, seed, self.normalize_features)
    }
}

/// Anything that maps one feature row to a prediction in dB.
pub trait Regressor: Send + Sync {
    fn predict_row(&self, features: &[f64]) -> f64;

    fn predict(&self, data: &Dataset) -> Vec<f64> {
        let mut row = vec![0.0; data.n_features()];
        (0..data.n())
            .map(|i| {
                data.fill_row(i, &mut row);
                self.predict_row(&row)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Svr(SvrModel),
    Ann(AnnModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
}

impl ModelParams {
    fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            ModelParams::Svr(m) => m.predict(x),
            ModelParams::Ann(m) => m.predict(x),
            ModelParams::Forest(m) => m.predict(x),
            ModelParams::Boosted(m) => m.predict(x),
        }
    }
}

/// A fitted family model with its optional input normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: Family,
    pub hyperparams: GridPoint,
    pub normalization: Option<NormalizationParams>,
    pub model: ModelParams,
}

impl FittedModel {
    /// Stable JSON form: family tag, hyperparameters, parameters or trees.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

impl Regressor for FittedModel {
    fn predict_row(&self, features: &[f64]) -> f64 {
        match &self.normalization {
            Some(norm) => {
                let mut x = features.to_vec();
                norm.apply_row(&mut x).expect("feature count fixed at fit time");
                self.model.predict_row(&x)
            }
            None => self.model.predict_row(features),
        }
    }

    fn predict(&self, data: &Dataset) -> Vec<f64> {
        let normalized;
        let data = match &self.normalization {
            Some(norm) => {
                normalized = norm.apply(data).expect("feature count fixed at fit time");
                &normalized
            }
            None => data,
        };
        let mut row = vec![0.0; data.n_features()];
        (0..data.n())
            .map(|i| {
                data.fill_row(i, &mut row);
                self.model.predict_row(&row)
            })
            .collect()
    }
}

/// Fits one family at one grid point.
pub fn fit_family(
    family: Family,
    train: &Dataset,
    point: &GridPoint,
    seed: u64,
    normalize: bool,
) -> Result<FittedModel, FitError> {
    for (name, &v) in &point.0 {
        family
            .param(name)
            .ok_or_else(|| FitError::UnknownHyperparam {
                family: family.label().into(),
                name: name.clone(),
            })?
            .check(v)?;
    }
    let normalization = normalize.then(|| NormalizationParams::fit(train));
    let normalized;
    let data = match &normalization {
        Some(norm) => {
            normalized = norm.apply(train)?;
            &normalized
        }
        None => train,
    };
    let model = match family {
        Family::Svr => ModelParams::Svr(svr_fit(
            data,
            &SvrParams {
                c: point.get("c")?,
                epsilon: point.get("epsilon")?,
                gamma: point.get("gamma")?,
                tol: point.get("tol")?,
                max_iter: point.usize("max_iter")?,
            },
        )?),
        Family::Ann => ModelParams::Ann(ann_fit(
            data,
            &AnnParams {
                hidden_units: point.usize("hidden_units")?,
                learning_rate: point.get("learning_rate")?,
                epochs: point.usize("epochs")?,
                batch_size: point.usize("batch_size")?,
            },
            seed,
        )?),
        Family::Xgbr => ModelParams::Boosted(gbt_fit(
            data,
            point.usize("rounds")?,
            point.get("learning_rate")?,
            &TreeParams {
                max_depth: point.usize("max_depth")?,
                min_samples_leaf: point.usize("min_samples_leaf")?,
                lambda: point.get("lambda")?,
                gamma: point.get("gamma")?,
                feature_subsample: point.get("feature_subsample")?,
                seed: 0,
            },
            seed,
        )?),
        Family::Cbr => ModelParams::Boosted(obt_fit(
            data,
            &ObtParams {
                rounds: point.usize("rounds")?,
                learning_rate: point.get("learning_rate")?,
                depth: point.usize("depth")?,
                lambda: point.get("lambda")?,
                ordered_min_rows: point.usize("ordered_min_rows")?,
            },
            seed,
        )?),
        Family::Rf => ModelParams::Forest(rf_fit(
            data,
            point.usize("n_trees")?,
            &TreeParams {
                max_depth: point.usize("max_depth")?,
                min_samples_leaf: point.usize("min_samples_leaf")?,
                lambda: 0.0,
                gamma: 0.0,
                feature_subsample: point.get("feature_subsample")?,
                seed: 0,
            },
            seed,
        )?),
    };
    Ok(FittedModel {
        family,
        hyperparams: point.clone(),
        normalization,
        model,
    })
}
