//! Single-hidden-layer perceptron: `tanh` hidden units, identity output.
//!
//! Training minimizes mean squared error with Adam over seeded mini-batches.
//! Targets are standardized internally; the output layer is rescaled after
//! training so the stored weights act on raw dB.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::data::Dataset;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnParams {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for AnnParams {
    fn default() -> Self {
        Self {
            hidden_units: 16,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
        }
    }
}

/// `output = b2 + sum_h w2[h] * tanh(b1[h] + sum_j w1[h][j] x[j])`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnModel {
    pub n_inputs: usize,
    /// Row-major `hidden_units x n_inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    /// Mean training loss per epoch, in standardized target units.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

impl AnnModel {
    pub fn hidden_units(&self) -> usize {
        self.b1.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let p = self.n_inputs;
        let mut out = self.b2;
        for (h, (&b, &w)) in self.b1.iter().zip(&self.w2).enumerate() {
            let z: f64 = b + self.w1[h * p..(h + 1) * p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            out += w * z.tanh();
        }
        out
    }

    /// Flat parameter vector `[w1, b1, w2, b2]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(n_inputs: usize, hidden_units: usize, theta: &[f64]) -> Self {
        let (p, h) = (n_inputs, hidden_units);
        assert_eq!(theta.len(), n_params(p, h), "parameter vector length");
        Self {
            n_inputs: p,
            w1: theta[..h * p].to_vec(),
            b1: theta[h * p..h * p + h].to_vec(),
            w2: theta[h * p + h..h * p + 2 * h].to_vec(),
            b2: theta[h * p + 2 * h],
            loss_history: Vec::new(),
        }
    }
}

pub fn ann_predict(model: &AnnModel, features: &[f64]) -> f64 {
    model.predict(features)
}

pub fn n_params(n_inputs: usize, hidden_units: usize) -> usize {
    hidden_units * (n_inputs + 2) + 1
}

/// Mean squared error of the network `theta` on `(rows, y)` and its exact
/// gradient by backpropagation. Rows are accumulated in the given order.
pub fn loss_and_gradient(
    theta: &[f64],
    n_inputs: usize,
    hidden_units: usize,
    rows: &[&[f64]],
    y: &[f64],
) -> (f64, Vec<f64>) {
    let (p, h) = (n_inputs, hidden_units);
    let (w1, rest) = theta.split_at(h * p);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let b2 = b2[0];
    let mut grad = vec![0.0; theta.len()];
    let mut act = vec![0.0; h];
    let m = y.len() as f64;
    let mut loss = 0.0;
    for (x, &target) in rows.iter().zip(y) {
        let mut out = b2;
        for k in 0..h {
            let z: f64 = b1[k] + w1[k * p..(k + 1) * p].iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            act[k] = z.tanh();
            out += w2[k] * act[k];
        }
        let r = out - target;
        loss += r * r;
        let d_out = 2.0 * r / m;
        let (gw1, rest) = grad.split_at_mut(h * p);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h);
        gb2[0] += d_out;
        for k in 0..h {
            gw2[k] += d_out * act[k];
            let dz = d_out * w2[k] * (1.0 - act[k] * act[k]);
            gb1[k] += dz;
            for (g, &xj) in gw1[k * p..(k + 1) * p].iter_mut().zip(x.iter()) {
                *g += dz * xj;
            }
        }
    }
    (loss / m, grad)
}

/// The seeded starting point of [`ann_fit`]: `w1 ~ U(+-1/sqrt(p))`,
/// `w2 ~ U(+-1/sqrt(H))`, zero hidden bias, output bias at the target mean.
/// Returned in raw target units.
pub fn ann_init(train: &Dataset, params: &AnnParams, seed: u64) -> Result<AnnModel, FitError> {
    let (mean, scale) = target_moments(train.targets());
    let theta = initial_theta(train.n_features(), params.hidden_units, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(to_raw_units(AnnModel::from_flat(train.n_features(), params.hidden_units, &theta), mean, scale))
}

fn initial_theta(p: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut theta = vec![0.0; n_params(p, h)];
    let a1 = 1.0 / (p.max(1) as f64).sqrt();
    for w in &mut theta[..h * p] {
        *w = rng.random_range(-a1..a1);
    }
    let a2 = 1.0 / (h as f64).sqrt();
    for w in &mut theta[h * p + h..h * p + 2 * h] {
        *w = rng.random_range(-a2..a2);
    }
    theta
}

/// Target mean and population standard deviation. A constant target gives
/// std 0, so the rescaled network outputs exactly that constant.
fn target_moments(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn to_raw_units(mut m: AnnModel, mean: f64, scale: f64) -> AnnModel {
    for w in &mut m.w2 {
        *w *= scale;
    }
    m.b2 = mean + scale * m.b2;
    m
}

pub fn ann_fit(train: &Dataset, params: &AnnParams, seed: u64) -> Result<AnnModel, FitError> {
    if params.hidden_units < 1 {
        return Err(FitError::InvalidHyperparam {
            name: "hidden_units".into(),
            reason: "must be >= 1".into(),
        });
    }
    if params.batch_size < 1 {
        return Err(FitError::InvalidHyperparam {
            name: "batch_size".into(),
            reason: "must be >= 1".into(),
        });
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(FitError::InvalidHyperparam {
            name: "learning_rate".into(),
            reason: "must be > 0".into(),
        });
    }
    let (p, h, n) = (train.n_features(), params.hidden_units, train.n());
    let (mean, scale) = target_moments(train.targets());
    let divisor = if scale > 0.0 { scale } else { 1.0 };
    let ys: Vec<f64> = train.targets().iter().map(|v| (v - mean) / divisor).collect();
    let rows = train.rows();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = initial_theta(p, h, &mut rng);
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(params.epochs);
    let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(params.batch_size);
    let mut batch_y = Vec::with_capacity(params.batch_size);

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch_size) {
            batch_rows.clear();
            batch_y.clear();
            for &i in chunk {
                batch_rows.push(&rows[i]);
                batch_y.push(ys[i]);
            }
            let (loss, grad) = loss_and_gradient(&theta, p, h, &batch_rows, &batch_y);
            if !loss.is_finite() {
                return Err(FitError::Diverged { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for k in 0..theta.len() {
                m1[k] = BETA1 * m1[k] + (1.0 - BETA1) * grad[k];
                m2[k] = BETA2 * m2[k] + (1.0 - BETA2) * grad[k] * grad[k];
                theta[k] -= params.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + ADAM_EPS);
            }
        }
        let epoch_loss = epoch_loss / n as f64;
        if !epoch_loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(FitError::Diverged { epoch, loss: epoch_loss });
        }
        history.push(epoch_loss);
    }
    let mut model = to_raw_units(AnnModel::from_flat(p, h, &theta), mean, scale);
    model.loss_history = history;
    Ok(model)
}
