//! Mean absolute / mean squared error, fold aggregation and relative
//! differences between models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("actual has {actual} values, predicted has {predicted}")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("prediction set is empty")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("relative difference undefined: reference metric is {0}")]
    NonPositiveReference(f64),
    #[error("no folds to aggregate")]
    NoFolds,
}

/// Paired observed (`actual`) and predicted values, in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    actual: Vec<f64>,
    predicted: Vec<f64>,
}

impl PredictionSet {
    pub fn new(actual: Vec<f64>, predicted: Vec<f64>) -> Result<Self, MetricError> {
        if actual.len() != predicted.len() {
            return Err(MetricError::LengthMismatch {
                actual: actual.len(),
                predicted: predicted.len(),
            });
        }
        if actual.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(i) = actual
            .iter()
            .zip(&predicted)
            .position(|(a, p)| !a.is_finite() || !p.is_finite())
        {
            return Err(MetricError::NonFinite(i));
        }
        Ok(Self { actual, predicted })
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    pub fn actual(&self) -> &[f64] {
        &self.actual
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.actual.iter().zip(&self.predicted).map(|(y, p)| y - p)
    }

    pub fn metrics(&self) -> MetricPair {
        MetricPair {
            mae: mae(self),
            mse: mse(self),
        }
    }
}

pub fn mae(p: &PredictionSet) -> f64 {
    p.residuals().map(f64::abs).sum::<f64>() / p.len() as f64
}

pub fn mse(p: &PredictionSet) -> f64 {
    p.residuals().map(|r| r * r).sum::<f64>() / p.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    /// dB
    pub mae: f64,
    /// dB²
    pub mse: f64,
}

/// Fraction by which `best` undercuts `other`: `(other - best) / other`.
pub fn relative_difference(best: f64, other: f64) -> Result<f64, MetricError> {
    if !(other > 0.0) {
        return Err(MetricError::NonPositiveReference(other));
    }
    Ok((other - best) / other)
}

/// Unweighted mean of per-fold MAE and MSE.
pub fn aggregate_folds(per_fold: &[MetricPair]) -> Result<MetricPair, MetricError> {
    if per_fold.is_empty() {
        return Err(MetricError::NoFolds);
    }
    let k = per_fold.len() as f64;
    Ok(MetricPair {
        mae: per_fold.iter().map(|m| m.mae).sum::<f64>() / k,
        mse: per_fold.iter().map(|m| m.mse).sum::<f64>() / k,
    })
}

/// Rounds half away from zero to `decimals` places.
///
/// A relative slack of a few ulps absorbs binary representation error, so
/// `0.525` rounds to `0.53` even though its nearest double is a hair below.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x.abs() * scale;
    let r = (scaled + 0.5 + scaled * 4.0 * f64::EPSILON).floor() / scale;
    r.copysign(x)
}

/// Formats a value with at most `decimals` places, trimming trailing zeros
/// (`0.80` prints as `0.8`, `1.00` as `1`).
pub fn format_trimmed(x: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, x);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Display rule for relative differences.
///
/// The fraction is first rounded half-up to `coarse + 1` places and that
/// value is then rounded half-up to `coarse` places. When the coarse value
/// is zero but the fine one is not, the fine value is shown instead, so a
/// small but real gap never renders as `0`. With `coarse = 2` this maps
/// 0.52465 to `0.53`, 0.79605 to `0.8` and 0.00413 to `0.004`.
pub fn display_difference(fraction: f64, coarse: u32) -> String {
    let fine = round_half_up(fraction, coarse + 1);
    let shown = round_half_up(fine, coarse);
    if shown == 0.0 && fine != 0.0 {
        format_trimmed(fine, coarse as usize + 1)
    } else {
        format_trimmed(shown, coarse as usize)
    }
}

/// Relative difference as a percentage label, using the same two-stage
/// rounding as [`display_difference`] at whole-percent precision.
pub fn display_percent(fraction: f64) -> String {
    display_difference(fraction * 100.0, 0)
}
