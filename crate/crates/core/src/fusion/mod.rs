//! Reliability-gated, mask-aware attention over the four branch features
//! `[f_t, f_H, f_R, f_v]`, followed by a logistic classifier.
//!
//! Per branch k: `mu_k = sigmoid(w_mu . tanh(W_p f_k + b_p))`,
//! `g_k = mu_k f_k`, `e_k = (W_Q q_task) . (W_K g_k) / sqrt(d_h)`.
//! Attention weights are a softmax over the unmasked branches only, so a
//! masked branch has no influence at all. `f_final = sum_k alpha_k W_V g_k`
//! and `y_hat = sigmoid(W_c . f_final + b_c)`.

mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FusionDims;
use crate::linalg::{dot, sigmoid, Matrix};

pub use train::{read_banks, train, write_banks, EpochStats, LabeledBank, TrainConfig, TrainResult};

pub const BRANCHES: usize = 4;
pub const BRANCH_NAMES: [&str; BRANCHES] = ["text", "auth", "contra", "visual"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every branch is masked")]
    AllMasked,
    #[error("branch {0} is masked but its feature is not zero")]
    MaskedNonZero(usize),
    #[error("mask values must be 0 or 1")]
    BadMask,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("empty training set")]
    EmptyDataset,
    #[error("params file: {0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    pub features: [Vec<f64>; BRANCHES],
    pub masks: [u8; BRANCHES],
}

impl FeatureBank {
    pub fn new(features: [Vec<f64>; BRANCHES], masks: [u8; BRANCHES]) -> Result<Self, FusionError> {
        let bank = Self { features, masks };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let d = self.features[0].len();
        if self.features.iter().any(|f| f.len() != d) {
            return Err(FusionError::DimensionMismatch("branch features differ in length".into()));
        }
        if self.masks.iter().any(|m| *m > 1) {
            return Err(FusionError::BadMask);
        }
        for k in 0..BRANCHES {
            if self.masks[k] == 0 && self.features[k].iter().any(|x| *x != 0.0) {
                return Err(FusionError::MaskedNonZero(k));
            }
        }
        if self.masks.iter().all(|m| *m == 0) {
            return Err(FusionError::AllMasked);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..BRANCHES).filter(|k| self.masks[*k] == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub w_p: Matrix,
    pub b_p: Vec<f64>,
    pub w_mu: Vec<f64>,
    pub q_task: Vec<f64>,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_c: Vec<f64>,
    pub b_c: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    version: u32,
    dims: FusionDims,
    #[serde(flatten)]
    params: FusionParams,
}

const PARAMS_FORMAT: &str = "fusion-params";

impl FusionParams {
    pub fn zeros(dims: FusionDims) -> Self {
        let FusionDims { d, d_p, d_h } = dims;
        Self {
            w_p: Matrix::zeros(d_p, d),
            b_p: vec![0.0; d_p],
            w_mu: vec![0.0; d_p],
            q_task: vec![0.0; d],
            w_q: Matrix::zeros(d_h, d),
            w_k: Matrix::zeros(d_h, d),
            w_v: Matrix::zeros(d_h, d),
            w_c: vec![0.0; d_h],
            b_c: 0.0,
        }
    }

    pub fn dims(&self) -> FusionDims {
        FusionDims {
            d: self.w_p.cols(),
            d_p: self.w_p.rows(),
            d_h: self.w_q.rows(),
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let FusionDims { d, d_p, d_h } = self.dims();
        let shapes_ok = self.b_p.len() == d_p
            && self.w_mu.len() == d_p
            && self.q_task.len() == d
            && [&self.w_q, &self.w_k, &self.w_v].iter().all(|m| m.rows() == d_h && m.cols() == d)
            && self.w_c.len() == d_h;
        if !shapes_ok {
            return Err(FusionError::DimensionMismatch("fusion params are not mutually consistent".into()));
        }
        if !self.flatten().iter().all(|x| x.is_finite()) {
            return Err(FusionError::Params("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn check_dims(&self, dims: FusionDims) -> Result<(), FusionError> {
        if self.dims() != dims {
            return Err(FusionError::DimensionMismatch(format!(
                "params have {:?}, config wants {:?}",
                self.dims(),
                dims
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let FusionDims { d, d_p, d_h } = self.dims();
        d_p * d + 2 * d_p + d + 3 * d_h * d + d_h + 1
    }

    /// All entries in a fixed order: W_p, b_p, w_mu, q_task, W_Q, W_K, W_V, W_c, b_c.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w_p.as_slice());
        out.extend_from_slice(&self.b_p);
        out.extend_from_slice(&self.w_mu);
        out.extend_from_slice(&self.q_task);
        out.extend_from_slice(self.w_q.as_slice());
        out.extend_from_slice(self.w_k.as_slice());
        out.extend_from_slice(self.w_v.as_slice());
        out.extend_from_slice(&self.w_c);
        out.push(self.b_c);
        out
    }

    pub fn from_flat(dims: FusionDims, flat: &[f64]) -> Result<Self, FusionError> {
        let mut p = Self::zeros(dims);
        if flat.len() != p.num_params() {
            return Err(FusionError::DimensionMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                p.num_params()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(p.w_p.as_mut_slice());
        take(&mut p.b_p);
        take(&mut p.w_mu);
        take(&mut p.q_task);
        take(p.w_q.as_mut_slice());
        take(p.w_k.as_mut_slice());
        take(p.w_v.as_mut_slice());
        take(&mut p.w_c);
        let mut b = [0.0];
        take(&mut b);
        p.b_c = b[0];
        Ok(p)
    }

    /// `self += scale * other`, entry by entry.
    pub fn add_scaled(&mut self, other: &FusionParams, scale: f64) {
        let mut flat = self.flatten();
        for (a, b) in flat.iter_mut().zip(other.flatten()) {
            *a += scale * b;
        }
        *self = Self::from_flat(self.dims(), &flat).expect("same shape");
    }

    pub fn to_json(&self) -> String {
        let doc = ParamsFile {
            format: PARAMS_FORMAT.into(),
            version: 1,
            dims: self.dims(),
            params: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        let doc: ParamsFile = serde_json::from_str(text).map_err(|e| FusionError::Params(e.to_string()))?;
        if doc.format != PARAMS_FORMAT || doc.version != 1 {
            return Err(FusionError::Params(format!(
                "unsupported document {} v{}",
                doc.format, doc.version
            )));
        }
        doc.params.validate()?;
        doc.params.check_dims(doc.dims)?;
        Ok(doc.params)
    }

    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        std::fs::write(path, self.to_json()).map_err(|e| FusionError::Params(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let text = std::fs::read_to_string(path).map_err(|e| FusionError::Params(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))` for every weight
/// (vectors count as 1 x n); biases start at zero.
pub fn init_params(dims: FusionDims, seed: u64) -> FusionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = FusionParams::zeros(dims);
    let mut fill = |dst: &mut [f64], fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for x in dst {
            *x = rng.random_range(-a..a);
        }
    };
    let FusionDims { d, d_p, d_h } = dims;
    fill(p.w_p.as_mut_slice(), d, d_p);
    fill(&mut p.w_mu, d_p, 1);
    fill(&mut p.q_task, d, 1);
    fill(p.w_q.as_mut_slice(), d, d_h);
    fill(p.w_k.as_mut_slice(), d, d_h);
    fill(p.w_v.as_mut_slice(), d, d_h);
    fill(&mut p.w_c, d_h, 1);
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub y_hat: f64,
    pub alpha: [f64; BRANCHES],
    pub mu: [f64; BRANCHES],
    pub f_final: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
struct Tape {
    h: Vec<Vec<f64>>,
    mu: [f64; BRANCHES],
    gated: Vec<Vec<f64>>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    alpha: [f64; BRANCHES],
    f_final: Vec<f64>,
    y_hat: f64,
}

fn check(bank: &FeatureBank, params: &FusionParams) -> Result<(), FusionError> {
    bank.validate()?;
    params.validate()?;
    if bank.dim() != params.dims().d {
        return Err(FusionError::DimensionMismatch(format!(
            "features have dimension {}, params expect {}",
            bank.dim(),
            params.dims().d
        )));
    }
    Ok(())
}

fn run(bank: &FeatureBank, p: &FusionParams) -> Tape {
    let d_h = p.dims().d_h;
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut h = Vec::with_capacity(BRANCHES);
    let mut mu = [0.0; BRANCHES];
    let mut gated = Vec::with_capacity(BRANCHES);
    for (k, f) in bank.features.iter().enumerate() {
        let hk: Vec<f64> = p
            .w_p
            .matvec(f)
            .iter()
            .zip(&p.b_p)
            .map(|(z, b)| (z + b).tanh())
            .collect();
        mu[k] = sigmoid(dot(&p.w_mu, &hk));
        gated.push(f.iter().map(|x| mu[k] * x).collect::<Vec<f64>>());
        h.push(hk);
    }
    let q = p.w_q.matvec(&p.q_task);
    let keys: Vec<Vec<f64>> = gated.iter().map(|g| p.w_k.matvec(g)).collect();
    let values: Vec<Vec<f64>> = gated.iter().map(|g| p.w_v.matvec(g)).collect();

    let active: Vec<usize> = bank.active().collect();
    let mut logits = [0.0; BRANCHES];
    for &k in &active {
        logits[k] = dot(&q, &keys[k]) * scale;
    }
    let max = active.iter().map(|&k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
    let mut exps = [0.0; BRANCHES];
    let mut total = 0.0;
    for &k in &active {
        exps[k] = (logits[k] - max).exp();
        total += exps[k];
    }
    let mut alpha = [0.0; BRANCHES];
    let mut f_final = vec![0.0; d_h];
    for &k in &active {
        alpha[k] = exps[k] / total;
        for (o, v) in f_final.iter_mut().zip(&values[k]) {
            *o += alpha[k] * v;
        }
    }
    let y_hat = sigmoid(dot(&p.w_c, &f_final) + p.b_c);
    Tape {
        h,
        mu,
        gated,
        q,
        keys,
        values,
        alpha,
        f_final,
        y_hat,
    }
}

pub fn forward(bank: &FeatureBank, params: &FusionParams) -> Result<FusionOutput, FusionError> {
    check(bank, params)?;
    let t = run(bank, params);
    Ok(FusionOutput {
        y_hat: t.y_hat,
        alpha: t.alpha,
        mu: t.mu,
        f_final: t.f_final,
    })
}

/// Prediction computed with masked branches removed from the model
/// altogether: only the active branches are ever touched. Agrees with
/// [`forward`] bit for bit.
pub fn forward_subset(bank: &FeatureBank, params: &FusionParams) -> Result<f64, FusionError> {
    check(bank, params)?;
    let p = params;
    let scale = 1.0 / (p.dims().d_h as f64).sqrt();
    let q = p.w_q.matvec(&p.q_task);
    let mut logits = Vec::new();
    let mut values = Vec::new();
    for k in bank.active() {
        let f = &bank.features[k];
        let hk: Vec<f64> = p
            .w_p
            .matvec(f)
            .iter()
            .zip(&p.b_p)
            .map(|(z, b)| (z + b).tanh())
            .collect();
        let mu = sigmoid(dot(&p.w_mu, &hk));
        let g: Vec<f64> = f.iter().map(|x| mu * x).collect();
        logits.push(dot(&q, &p.w_k.matvec(&g)) * scale);
        values.push(p.w_v.matvec(&g));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut total = 0.0;
    for e in &exps {
        total += e;
    }
    let mut f_final = vec![0.0; p.dims().d_h];
    for (e, v) in exps.iter().zip(&values) {
        let a = e / total;
        for (o, x) in f_final.iter_mut().zip(v) {
            *o += a * x;
        }
    }
    Ok(sigmoid(dot(&p.w_c, &f_final) + p.b_c))
}

/// Optional convex blend of the text-only prediction with the full one,
/// `w * y_text + (1 - w) * y_full`. Inference only.
pub fn blended_prediction(
    bank: &FeatureBank,
    params: &FusionParams,
    text_weight: Option<f64>,
) -> Result<f64, FusionError> {
    let full = forward(bank, params)?.y_hat;
    let Some(w) = text_weight else { return Ok(full) };
    if bank.masks[0] == 0 {
        return Ok(full);
    }
    let text_only = FeatureBank {
        features: [
            bank.features[0].clone(),
            vec![0.0; bank.dim()],
            vec![0.0; bank.dim()],
            vec![0.0; bank.dim()],
        ],
        masks: [1, 0, 0, 0],
    };
    let y_text = forward(&text_only, params)?.y_hat;
    Ok(w * y_text + (1.0 - w) * full)
}

pub const LOSS_EPS: f64 = 1e-12;

/// Binary cross-entropy with `y_hat` clamped to `[eps, 1 - eps]`.
pub fn loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn batch_loss(pairs: &[(f64, u8)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(p, y)| loss(*p, *y)).sum::<f64>() / pairs.len() as f64
}

/// Analytic gradient of the per-sample loss with respect to every parameter.
pub fn backward(bank: &FeatureBank, params: &FusionParams, y: u8) -> Result<(FusionParams, FusionOutput), FusionError> {
    check(bank, params)?;
    let p = params;
    let t = run(bank, p);
    let FusionDims { d_h, .. } = p.dims();
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut g = FusionParams::zeros(p.dims());

    let dz = t.y_hat - f64::from(y);
    g.w_c = t.f_final.iter().map(|x| dz * x).collect();
    g.b_c = dz;
    let df_final: Vec<f64> = p.w_c.iter().map(|w| dz * w).collect();

    let active: Vec<usize> = bank.active().collect();
    let mut d_alpha = [0.0; BRANCHES];
    for &k in &active {
        d_alpha[k] = dot(&df_final, &t.values[k]);
    }
    let mean: f64 = active.iter().map(|&k| t.alpha[k] * d_alpha[k]).sum();
    let mut dq = vec![0.0; d_h];
    for &k in &active {
        let de = t.alpha[k] * (d_alpha[k] - mean);
        let dv: Vec<f64> = df_final.iter().map(|x| t.alpha[k] * x).collect();
        let dkey: Vec<f64> = t.q.iter().map(|x| de * x * scale).collect();
        for (a, kk) in dq.iter_mut().zip(&t.keys[k]) {
            *a += de * kk * scale;
        }
        g.w_k.add_outer(&dkey, &t.gated[k]);
        g.w_v.add_outer(&dv, &t.gated[k]);
        let d_gated: Vec<f64> = p
            .w_k
            .matvec_t(&dkey)
            .iter()
            .zip(p.w_v.matvec_t(&dv))
            .map(|(a, b)| a + b)
            .collect();
        let f = &bank.features[k];
        let d_mu = dot(&d_gated, f);
        let ds = d_mu * t.mu[k] * (1.0 - t.mu[k]);
        let hk = &t.h[k];
        for (a, h) in g.w_mu.iter_mut().zip(hk) {
            *a += ds * h;
        }
        let d_pre: Vec<f64> = p.w_mu.iter().zip(hk).map(|(w, h)| ds * w * (1.0 - h * h)).collect();
        g.w_p.add_outer(&d_pre, f);
        for (a, x) in g.b_p.iter_mut().zip(&d_pre) {
            *a += x;
        }
    }
    g.w_q.add_outer(&dq, &p.q_task);
    g.q_task = p.w_q.matvec_t(&dq);

    Ok((
        g,
        FusionOutput {
            y_hat: t.y_hat,
            alpha: t.alpha,
            mu: t.mu,
            f_final: t.f_final,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use veracity_mathcheck::{fd_gradient, reference_attention, relative_error, OracleConfig};

    const DIMS: FusionDims = FusionDims { d: 6, d_p: 4, d_h: 3 };

    fn random_bank(rng: &mut ChaCha8Rng, d: usize, masks: [u8; 4]) -> FeatureBank {
        let features = std::array::from_fn(|k| {
            if masks[k] == 1 {
                (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
            } else {
                vec![0.0; d]
            }
        });
        FeatureBank::new(features, masks).unwrap()
    }

    #[test]
    fn single_survivor_gets_all_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(DIMS, 3);
        let out = forward(&random_bank(&mut rng, 6, [1, 0, 0, 0]), &p).unwrap();
        assert_eq!(out.alpha, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_params_give_uniform_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = forward(&random_bank(&mut rng, 6, [1; 4]), &FusionParams::zeros(DIMS)).unwrap();
        assert_eq!(out.mu, [0.5; 4]);
        assert_eq!(out.alpha, [0.25; 4]);
        assert_eq!(out.y_hat, 0.5);
    }

    #[test]
    fn signed_zero_visual_feature_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(DIMS, 5);
        let a = random_bank(&mut rng, 6, [1, 1, 1, 0]);
        let mut b = a.clone();
        b.features[3] = vec![-0.0; 6];
        assert_eq!(forward(&a, &p).unwrap().y_hat.to_bits(), forward(&b, &p).unwrap().y_hat.to_bits());
    }

    #[test]
    fn bank_validation() {
        assert_eq!(
            FeatureBank::new([vec![1.0], vec![0.0], vec![0.0], vec![0.5]], [1, 1, 1, 0]),
            Err(FusionError::MaskedNonZero(3))
        );
        assert_eq!(
            FeatureBank::new([vec![0.0], vec![0.0], vec![0.0], vec![0.0]], [0; 4]),
            Err(FusionError::AllMasked)
        );
        assert!(matches!(
            FeatureBank::new([vec![0.0], vec![0.0, 1.0], vec![0.0], vec![0.0]], [1; 4]),
            Err(FusionError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn loss_values() {
        assert!((loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss(1.0 - 1e-12, 1) - 1e-12).abs() < 1e-15);
        assert!((loss(0.9, 0) - 10f64.ln()).abs() < 1e-12);
        assert!(loss(0.0, 1).is_finite());
    }

    #[test]
    fn bias_gradient_is_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params(DIMS, 8);
        let bank = random_bank(&mut rng, 6, [1, 1, 0, 1]);
        for y in [0, 1] {
            let (g, out) = backward(&bank, &p, y).unwrap();
            assert_eq!(g.b_c, out.y_hat - f64::from(y));
        }
    }

    #[test]
    fn single_branch_query_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = init_params(DIMS, 9);
        let (g, _) = backward(&random_bank(&mut rng, 6, [1, 0, 0, 0]), &p, 1).unwrap();
        assert!(g.q_task.iter().all(|x| *x == 0.0));
        assert!(g.w_q.as_slice().iter().all(|x| *x == 0.0));
        assert!(g.w_k.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = init_params(DIMS, 7);
        let bank = random_bank(&mut rng, 6, [1, 1, 1, 0]);
        let (g, _) = backward(&bank, &p, 1).unwrap();
        let cfg = OracleConfig::default();
        let numeric = fd_gradient(
            |x| {
                let q = FusionParams::from_flat(DIMS, x).unwrap();
                loss(forward(&bank, &q).unwrap().y_hat, 1)
            },
            &p.flatten(),
            &cfg,
        )
        .unwrap();
        for (a, n) in g.flatten().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-3) <= 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn attention_path_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = init_params(FusionDims { d: 8, d_p: 4, d_h: 8 }, 11);
        let bank = random_bank(&mut rng, 8, [1; 4]);
        let out = forward(&bank, &p).unwrap();
        let gated: Vec<Vec<f64>> = (0..4)
            .map(|k| bank.features[k].iter().map(|x| out.mu[k] * x).collect())
            .collect();
        let q = vec![p.w_q.matvec(&p.q_task)];
        let keys: Vec<Vec<f64>> = gated.iter().map(|g| p.w_k.matvec(g)).collect();
        let values: Vec<Vec<f64>> = gated.iter().map(|g| p.w_v.matvec(g)).collect();
        let reference = reference_attention(&q, &keys, &values, 1.0 / 8f64.sqrt()).unwrap();
        for (a, b) in out.f_final.iter().zip(&reference[0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn init_is_bounded_and_reproducible() {
        let dims = FusionDims { d: 10, d_p: 4, d_h: 6 };
        let a = init_params(dims, 1);
        assert_eq!(a, init_params(dims, 1));
        assert_ne!(a, init_params(dims, 2));
        assert!(a.b_p.iter().all(|x| *x == 0.0) && a.b_c == 0.0);
        let bound = (6.0f64 / 14.0).sqrt();
        assert!(a.w_p.as_slice().iter().all(|x| x.abs() <= bound));
        let bound_v = (6.0f64 / 16.0).sqrt();
        assert!(a.w_v.as_slice().iter().all(|x| x.abs() <= bound_v));
    }

    #[test]
    fn params_json_round_trip() {
        let p = init_params(DIMS, 4);
        let text = p.to_json();
        assert!(text.contains("\"format\": \"fusion-params\""));
        assert_eq!(FusionParams::from_json(&text).unwrap(), p);
        assert_eq!(FusionParams::from_flat(DIMS, &p.flatten()).unwrap(), p);
        let broken = text.replace("fusion-params", "other");
        assert!(FusionParams::from_json(&broken).is_err());
    }

    #[test]
    fn blend_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_params(DIMS, 5);
        let bank = random_bank(&mut rng, 6, [1; 4]);
        let full = blended_prediction(&bank, &p, None).unwrap();
        let text = blended_prediction(&bank, &p, Some(1.0)).unwrap();
        let mix = blended_prediction(&bank, &p, Some(0.4)).unwrap();
        assert!((mix - (0.4 * text + 0.6 * full)).abs() < 1e-15);
    }

    fn mask_strategy() -> impl Strategy<Value = [u8; 4]> {
        proptest::array::uniform4(0u8..=1).prop_filter("one branch active", |m| m.iter().any(|x| *x == 1))
    }

    proptest! {
        #[test]
        fn alpha_is_a_distribution_over_active_branches(seed in 0u64..5000, masks in mask_strategy()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = init_params(DIMS, seed);
            let out = forward(&random_bank(&mut rng, 6, masks), &p).unwrap();
            let total: f64 = out.alpha.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for k in 0..4 {
                prop_assert!(out.alpha[k] >= 0.0);
                if masks[k] == 0 { prop_assert_eq!(out.alpha[k], 0.0); }
                prop_assert!(out.mu[k] > 0.0 && out.mu[k] < 1.0);
            }
        }

        #[test]
        fn masked_branches_have_zero_influence(seed in 0u64..5000, masks in mask_strategy()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = init_params(DIMS, seed ^ 0x55);
            let bank = random_bank(&mut rng, 6, masks);
            prop_assert_eq!(forward(&bank, &p).unwrap().y_hat.to_bits(), forward_subset(&bank, &p).unwrap().to_bits());
        }

        #[test]
        fn branch_order_does_not_matter(seed in 0u64..5000, masks in mask_strategy(), shift in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = init_params(DIMS, seed);
            let bank = random_bank(&mut rng, 6, masks);
            let perm = FeatureBank {
                features: std::array::from_fn(|k| bank.features[(k + shift) % 4].clone()),
                masks: std::array::from_fn(|k| bank.masks[(k + shift) % 4]),
            };
            let a = forward(&bank, &p).unwrap().y_hat;
            let b = forward(&perm, &p).unwrap().y_hat;
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
