//! Independent reference computations for the numerical tests. Nothing in
//! here calls into the code under test.
#![allow(dead_code)]

/// Closed-form simple least squares `y = a + b x`. Returns `(a, b, max |residual|)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - a - b * xi).abs())
        .fold(0.0, f64::max);
    (a, b, r)
}

// ---------------------------------------------------------------- trees

/// Sum of squared deviations from the mean.
fn sse(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Every threshold an exact splitter could use on `rows` of column `col`.
fn thresholds(col: &[f64], rows: &[usize]) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
}

/// Lowest training SSE over all regression trees of depth at most `depth`
/// whose leaves hold at least `min_leaf` rows, by exhaustive enumeration.
pub fn global_min_sse(cols: &[Vec<f64>], y: &[f64], rows: &[usize], depth: usize, min_leaf: usize) -> f64 {
    let here: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let mut best = sse(&here);
    if depth == 0 {
        return best;
    }
    for col in cols {
        for t in thresholds(col, rows) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let total = global_min_sse(cols, y, &l, depth - 1, min_leaf) + global_min_sse(cols, y, &r, depth - 1, min_leaf);
            best = best.min(total);
        }
    }
    best
}

/// Training SSE of the tree obtained by choosing, at every node, the split
/// with the largest SSE reduction found by trying every (feature,
/// threshold); ties keep the first feature, then the lowest threshold.
pub fn nodewise_exhaustive_sse(cols: &[Vec<f64>], y: &[f64], rows: &[usize], depth: usize, min_leaf: usize) -> f64 {
    let here: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let parent = sse(&here);
    if depth == 0 || rows.len() < 2 * min_leaf {
        return parent;
    }
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for col in cols {
        for t in thresholds(col, rows) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let ly: Vec<f64> = l.iter().map(|&i| y[i]).collect();
            let ry: Vec<f64> = r.iter().map(|&i| y[i]).collect();
            let reduction = parent - sse(&ly) - sse(&ry);
            if reduction > 1e-9 * (1.0 + parent) && best.as_ref().is_none_or(|b| reduction > b.0 + 1e-12 * (1.0 + parent)) {
                best = Some((reduction, l, r));
            }
        }
    }
    match best {
        None => parent,
        Some((_, l, r)) => {
            nodewise_exhaustive_sse(cols, y, &l, depth - 1, min_leaf) + nodewise_exhaustive_sse(cols, y, &r, depth - 1, min_leaf)
        }
    }
}

// ---------------------------------------------------------------- SVR

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

/// Dual objective in the difference variables `beta = alpha - alpha*`:
/// `1/2 beta' K beta + eps sum |beta| - y' beta`.
pub fn svr_dual_objective(k: &[Vec<f64>], y: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let n = y.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += beta[i] * k[i][j] * beta[j];
        }
    }
    0.5 * q + eps * beta.iter().map(|b| b.abs()).sum::<f64>() - y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

pub struct SvrOracle {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
}

/// Minimizes the dual over `sum beta = 0, |beta_i| <= c` by a shrinking
/// grid search over the first `n - 1` coordinates (the last is implied).
/// The problem is convex, so zooming in on the best grid point converges.
pub fn svr_grid_oracle(x: &[Vec<f64>], y: &[f64], c: f64, eps: f64, gamma: f64) -> SvrOracle {
    let n = y.len();
    assert!((2..=4).contains(&n));
    let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| rbf(a, b, gamma)).collect()).collect();
    let d = n - 1;
    let steps = 24i64;
    let mut center = vec![0.0; d];
    let mut half = c;
    let mut best = (f64::INFINITY, vec![0.0; n]);
    for _ in 0..60 {
        let total = (2 * steps + 1).pow(d as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut beta = vec![0.0; n];
            let mut ok = true;
            for (j, b) in beta.iter_mut().take(d).enumerate() {
                let s = rem % (2 * steps + 1) - steps;
                rem /= 2 * steps + 1;
                *b = (center[j] + half * s as f64 / steps as f64).clamp(-c, c);
                if b.abs() > c {
                    ok = false;
                }
            }
            beta[d] = -beta[..d].iter().sum::<f64>();
            if !ok || beta[d].abs() > c {
                continue;
            }
            let obj = svr_dual_objective(&k, y, eps, &beta);
            if obj < best.0 {
                best = (obj, beta);
            }
        }
        center.copy_from_slice(&best.1[..d]);
        half *= 0.5;
        if half < 1e-12 {
            break;
        }
    }
    let beta = best.1;
    // Bias from coefficients strictly inside the box.
    let f: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * beta[j]).sum()).collect();
    let tol = 1e-7 * c.max(1.0);
    let free: Vec<f64> = (0..n)
        .filter_map(|i| {
            let b = beta[i];
            if b > tol && b < c - tol {
                Some(y[i] - eps - f[i])
            } else if b < -tol && b > -c + tol {
                Some(y[i] + eps - f[i])
            } else {
                None
            }
        })
        .collect();
    let bias = if free.is_empty() {
        // Interval of biases consistent with the KKT conditions.
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let b = beta[i];
            if b >= c - tol {
                hi = hi.min(y[i] - eps - f[i]);
            } else if b <= -c + tol {
                lo = lo.max(y[i] + eps - f[i]);
            } else {
                lo = lo.max(y[i] - eps - f[i]);
                hi = hi.min(y[i] + eps - f[i]);
            }
        }
        (lo + hi) / 2.0
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    SvrOracle {
        beta,
        bias,
        objective: best.0,
    }
}

// ---------------------------------------------------------------- ANN

/// Central finite difference of `f` at `theta` along every coordinate.
pub fn central_differences(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = f(&t);
            t[i] = orig - h;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Independent forward pass of a one-hidden-layer tanh network with flat
/// parameters `[w1 (h x p, row-major), b1, w2, b2]`, and its mean squared
/// error on `(x, y)`.
pub fn mlp_mse(theta: &[f64], p: usize, h: usize, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let out = |row: &[f64]| {
        let mut o = theta[h * p + 2 * h];
        for k in 0..h {
            let mut z = theta[h * p + k];
            for j in 0..p {
                z += theta[k * p + j] * row[j];
            }
            o += theta[h * p + h + k] * z.tanh();
        }
        o
    };
    x.iter().zip(y).map(|(r, t)| (out(r) - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
