//! Command-line benchmark of nested cross-validated path-loss regressors.

pub mod config;
pub mod render;
pub mod run;
