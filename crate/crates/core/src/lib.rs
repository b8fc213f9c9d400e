//! Path-loss regression toolkit.
//!
//! Five regressor families (kernel SVR, a tanh MLP, random forest, gradient
//! boosted trees and oblivious-tree boosting) evaluated under nested cross
//! validation: an inner fold loop picks hyperparameters, a disjoint outer
//! fold loop measures MAE and MSE.

pub mod audit;
pub mod cv;
pub mod data;
pub mod metrics;
pub mod regressors;
pub mod seed;
pub mod tree;

pub use cv::{make_fold_plan, run_benchmark, EvaluationReport, FoldPlan};
pub use data::{Dataset, NormalizationParams, SyntheticConfig};
pub use metrics::{MetricPair, PredictionSet};
pub use regressors::{EstimatorSpec, Family};
