//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved in its 2n-variable form: `z = [alpha; alpha*]` with
//! signs `s_t = +1` for the first half and `-1` for the second,
//!
//! ```text
//! min  1/2 z'Qz + p'z   s.t.  sum_t s_t z_t = 0,  0 <= z_t <= C
//! Q_tu = s_t s_u K(x_i(t), x_i(u)),  p_t = epsilon - s_t y_i(t)
//! ```
//!
//! by sequential minimal optimization: each step picks the maximal violating
//! index `i` and the partner `j` with the largest second-order decrease,
//! solves the two-variable subproblem in closed form and updates the
//! gradient. The solver stops once the violation `m(z) - M(z)` falls below
//! `tol`. Predictions are `sum_i (alpha_i - alpha*_i) K(x_i, x) + b`.

use serde::{Deserialize, Serialize};

use super::FitError;
use crate::data::Dataset;

const TAU: f64 = 1e-12;

/// Above this many rows the kernel matrix is not cached.
const FULL_KERNEL_MAX_ROWS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// Box constraint.
    pub c: f64,
    /// Half-width of the insensitive tube, dB.
    pub epsilon: f64,
    /// RBF width: `K(a, b) = exp(-gamma |a - b|^2)`.
    pub gamma: f64,
    /// Convergence threshold on the maximal KKT violation.
    pub tol: f64,
    /// Iteration cap; 0 picks `max(100_000, 200 n)`.
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            gamma: 1.0 / 6.0,
            tol: 1e-3,
            max_iter: 0,
        }
    }
}

impl SvrParams {
    fn validate(&self) -> Result<(), FitError> {
        let bad = |name: &str, reason: &str| {
            Err(FitError::InvalidHyperparam {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c", "must be > 0");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", "must be >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be > 0");
        }
        if !(self.tol > 0.0) {
            return bad("tol", "must be > 0");
        }
        Ok(())
    }

    pub fn iteration_cap(&self, n: usize) -> usize {
        if self.max_iter > 0 {
            self.max_iter
        } else {
            (200 * n).max(100_000)
        }
    }
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Full dual solution, kept for diagnostics and tests.
#[derive(Clone, Debug)]
pub struct SvrSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    /// Value of `1/2 z'Qz + p'z` at the solution.
    pub objective: f64,
    pub iterations: usize,
    /// Final `m(z) - M(z)`.
    pub violation: f64,
}

impl SvrSolution {
    pub fn coefficients(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.alpha_star).map(|(a, s)| a - s).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i - alpha*_i` per support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub c: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
}

impl SvrModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, w)| w * rbf(sv, features, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

pub fn svr_predict(model: &SvrModel, features: &[f64]) -> f64 {
    model.predict(features)
}

enum Kernel<'a> {
    Cached { n: usize, k: Vec<f64> },
    OnDemand { rows: &'a [Vec<f64>], gamma: f64 },
}

impl<'a> Kernel<'a> {
    fn new(rows: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = rows.len();
        if n > FULL_KERNEL_MAX_ROWS {
            return Kernel::OnDemand { rows, gamma };
        }
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in 0..i {
                let v = rbf(&rows[i], &rows[j], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Kernel::Cached { n, k }
    }

    fn row<'b>(&'b self, i: usize, scratch: &'b mut Vec<f64>) -> &'b [f64] {
        match self {
            Kernel::Cached { n, k } => &k[i * n..(i + 1) * n],
            Kernel::OnDemand { rows, gamma } => {
                scratch.clear();
                scratch.extend(rows.iter().map(|r| rbf(&rows[i], r, *gamma)));
                scratch
            }
        }
    }
}

/// Solves the dual for row-major `rows` and targets `y`.
pub fn svr_solve(rows: &[Vec<f64>], y: &[f64], params: &SvrParams) -> Result<SvrSolution, FitError> {
    params.validate()?;
    let n = y.len();
    if n == 0 || rows.len() != n {
        return Err(FitError::InvalidData(format!("{} rows for {n} targets", rows.len())));
    }
    let c = params.c;
    let m = 2 * n;
    let kernel = Kernel::new(rows, params.gamma);
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let idx = |t: usize| if t < n { t } else { t - n };

    let p: Vec<f64> = (0..m).map(|t| params.epsilon - sign(t) * y[idx(t)]).collect();
    let mut z = vec![0.0; m];
    let mut grad = p.clone();
    let (mut scratch_i, mut scratch_j) = (Vec::new(), Vec::new());
    let cap = params.iteration_cap(n);
    let mut iterations = 0usize;
    let violation;

    loop {
        // i: maximal violator in I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            let v = if sign(t) > 0.0 {
                (z[t] < c).then(|| -grad[t])
            } else {
                (z[t] > 0.0).then_some(grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let k_i = i_sel.map(|i| kernel.row(idx(i), &mut scratch_i).to_vec());
        // j: best second-order partner in I_low.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..m {
            let (in_low, v) = if sign(t) > 0.0 { (z[t] > 0.0, grad[t]) } else { (z[t] < c, -grad[t]) };
            if !in_low {
                continue;
            }
            if v >= gmax2 {
                gmax2 = v;
            }
            let Some(k_i) = k_i.as_ref() else {
                continue;
            };
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = 1.0 + 1.0 - 2.0 * k_i[idx(t)];
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(diff * diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = Some(t);
                }
            }
        }
        let gap = gmax + gmax2;
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            violation = gap.max(0.0);
            break;
        };
        if gap < params.tol {
            violation = gap;
            break;
        }
        if iterations >= cap {
            return Err(FitError::NotConverged {
                iterations,
                violation: gap,
            });
        }
        iterations += 1;

        let k_i = k_i.expect("i selected");
        let k_j = kernel.row(idx(j), &mut scratch_j).to_vec();
        let (si, sj) = (sign(i), sign(j));
        let q_ij = si * sj * k_i[idx(j)];
        let (old_i, old_j) = (z[i], z[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if si != sj {
            let quad = 2.0 + 2.0 * q_ij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = 2.0 - 2.0 * q_ij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        z[i] = ai;
        z[j] = aj;
        let (di, dj) = (z[i] - old_i, z[j] - old_j);
        for t in 0..m {
            let st = sign(t);
            let r = idx(t);
            grad[t] += st * (si * k_i[r] * di + sj * k_j[r] * dj);
        }
    }

    // Bias from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..m {
        let yg = sign(t) * grad[t];
        let at_upper = z[t] >= c;
        let at_lower = z[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let objective = 0.5 * z.iter().zip(grad.iter().zip(&p)).map(|(zt, (g, pt))| zt * (g + pt)).sum::<f64>();
    Ok(SvrSolution {
        alpha: z[..n].to_vec(),
        alpha_star: z[n..].to_vec(),
        bias: -rho,
        objective,
        iterations,
        violation,
    })
}

/// Fits on a (normalized) training set and keeps rows with non-zero
/// coefficient as support vectors.
pub fn svr_fit(train: &Dataset, params: &SvrParams) -> Result<SvrModel, FitError> {
    let rows = train.rows();
    let sol = svr_solve(&rows, train.targets(), params)?;
    let coefs = sol.coefficients();
    let (support_vectors, dual_coefficients) = rows
        .into_iter()
        .zip(coefs)
        .filter(|(_, w)| *w != 0.0)
        .unzip();
    Ok(SvrModel {
        support_vectors,
        dual_coefficients,
        bias: sol.bias,
        gamma: params.gamma,
        epsilon: params.epsilon,
        c: params.c,
        iterations: sol.iterations,
        kkt_violation: sol.violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 1.0], vec![2.0, -1.0], vec![0.3, 0.3]],
            vec![1.0, 3.0, 0.5, 4.0, 1.2],
        )
    }

    #[test]
    fn constant_targets_inside_tube() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![131.0; 3];
        let sol = svr_solve(&rows, &y, &SvrParams::default()).unwrap();
        assert!(sol.coefficients().iter().all(|&c| c == 0.0));
        assert_eq!(sol.bias, 131.0);
        assert_eq!(sol.iterations, 0);
        let d = Dataset::from_rows(vec!["x".into()], &rows, y).unwrap();
        let m = svr_fit(&d, &SvrParams::default()).unwrap();
        assert!(m.support_vectors.is_empty());
        assert_eq!(m.predict(&[5.0]), 131.0);
    }

    #[test]
    fn feasibility_and_equality() {
        let (rows, y) = toy();
        for (c, eps) in [(0.5, 0.1), (10.0, 0.0), (100.0, 0.5)] {
            let params = SvrParams {
                c,
                epsilon: eps,
                gamma: 0.7,
                ..Default::default()
            };
            let sol = svr_solve(&rows, &y, &params).unwrap();
            assert!(sol.violation < params.tol);
            for (&a, &s) in sol.alpha.iter().zip(&sol.alpha_star) {
                assert!((0.0..=c).contains(&a) && (0.0..=c).contains(&s));
            }
            let sum: f64 = sol.coefficients().iter().sum();
            assert!(sum.abs() < 1e-9, "sum {sum}");
        }
    }

    #[test]
    fn lone_support_vector_prediction() {
        let m = SvrModel {
            support_vectors: vec![vec![0.5, -1.0]],
            dual_coefficients: vec![2.5],
            bias: 3.0,
            gamma: 0.3,
            epsilon: 0.1,
            c: 10.0,
            iterations: 0,
            kkt_violation: 0.0,
        };
        assert_eq!(m.predict(&[0.5, -1.0]), 5.5);
        let empty = SvrModel {
            support_vectors: vec![],
            dual_coefficients: vec![],
            ..m
        };
        assert_eq!(empty.predict(&[9.0, 9.0]), 3.0);
    }

    #[test]
    fn iteration_cap_reports() {
        let (rows, y) = toy();
        let params = SvrParams {
            c: 100.0,
            epsilon: 0.0,
            gamma: 0.7,
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(svr_solve(&rows, &y, &params), Err(FitError::NotConverged { iterations: 1, .. })));
    }

    #[test]
    fn rejects_bad_params() {
        let (rows, y) = toy();
        for p in [
            SvrParams { c: 0.0, ..Default::default() },
            SvrParams { epsilon: -1.0, ..Default::default() },
            SvrParams { gamma: 0.0, ..Default::default() },
        ] {
            assert!(matches!(svr_solve(&rows, &y, &p), Err(FitError::InvalidHyperparam { .. })));
        }
    }
}
