//! Reference oracles for the test suites.
//!
//! Everything here is written in the most direct form possible: no fused
//! loops, no shared helpers with the engine, double precision throughout.
//! The engine crate only ever sees this crate as a dev-dependency.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("function is not finite near coordinate {0}")]
    NonFiniteFunction(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Finite-difference and tolerance settings.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub fd_step: f64,
    pub tolerance_rel: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            fd_step: 1e-5,
            tolerance_rel: 1e-4,
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F>(f: F, x: &[f64], cfg: &OracleConfig) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(cfg.fd_step > 0.0) {
        return Err(OracleError::BadStep(cfg.fd_step));
    }
    let h = cfg.fd_step;
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = point[i];
        point[i] = original + h;
        let plus = f(&point);
        point[i] = original - h;
        let minus = f(&point);
        point[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(OracleError::NonFiniteFunction(i));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error with a denominator floor, so coordinates whose true
/// gradient is (near) zero are compared on an absolute scale of `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// All-pairs AUC: mean of 1[p > n] + 0.5 * 1[p == n].
pub fn auc_bruteforce(scores_pos: &[f64], scores_neg: &[f64]) -> f64 {
    let mut credit = 0.0;
    for &p in scores_pos {
        for &n in scores_neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    credit / (scores_pos.len() * scores_neg.len()) as f64
}

/// Textbook softmax(Q Kᵀ · scale) V, one query row at a time.
pub fn reference_attention(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    scale: f64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    if keys.len() != values.len() || keys.is_empty() {
        return Err(OracleError::DimensionMismatch(format!(
            "{} keys vs {} values",
            keys.len(),
            values.len()
        )));
    }
    let key_dim = keys[0].len();
    let value_dim = values[0].len();
    if queries.iter().any(|q| q.len() != key_dim)
        || keys.iter().any(|k| k.len() != key_dim)
        || values.iter().any(|v| v.len() != value_dim)
    {
        return Err(OracleError::DimensionMismatch("ragged inputs".into()));
    }

    let mut outputs = Vec::with_capacity(queries.len());
    for q in queries {
        let mut logits = Vec::with_capacity(keys.len());
        for k in keys {
            let mut s = 0.0;
            for i in 0..key_dim {
                s += q[i] * k[i];
            }
            logits.push(s * scale);
        }
        let mut max = f64::NEG_INFINITY;
        for &l in &logits {
            if l > max {
                max = l;
            }
        }
        let mut weights = Vec::with_capacity(logits.len());
        let mut total = 0.0;
        for &l in &logits {
            let w = (l - max).exp();
            total += w;
            weights.push(w);
        }
        let mut out = vec![0.0; value_dim];
        for (j, v) in values.iter().enumerate() {
            let w = weights[j] / total;
            for i in 0..value_dim {
                out[i] += w * v[i];
            }
        }
        outputs.push(out);
    }
    Ok(outputs)
}

/// Plain logistic regression by full-batch gradient descent. Returns
/// `(weights, bias)`. Used as a baseline classifier on synthetic data.
pub fn logistic_regression(
    xs: &[Vec<f64>],
    ys: &[f64],
    lr: f64,
    iterations: usize,
) -> (Vec<f64>, f64) {
    let dim = xs.first().map(|x| x.len()).unwrap_or(0);
    let n = xs.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..iterations {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let mut z = b;
            for i in 0..dim {
                z += w[i] * x[i];
            }
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - y;
            for i in 0..dim {
                gw[i] += r * x[i];
            }
            gb += r;
        }
        for i in 0..dim {
            w[i] -= lr * gw[i] / n;
        }
        b -= lr * gb / n;
    }
    (w, b)
}

/// Accuracy of a linear classifier `w·x + b >= 0`.
pub fn linear_accuracy(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let mut z = b;
        for i in 0..w.len() {
            z += w[i] * x[i];
        }
        let pred = if z >= 0.0 { 1.0 } else { 0.0 };
        if pred == y {
            correct += 1;
        }
    }
    correct as f64 / xs.len() as f64
}
