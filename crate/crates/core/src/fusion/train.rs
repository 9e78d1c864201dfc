use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backward, batch_loss, forward, FeatureBank, FusionError, FusionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// 0 gives plain SGD.
    pub momentum: f64,
    /// Share of the data held out for early stopping.
    pub val_fraction: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Compute per-sample gradients on the rayon pool. The reduction order
    /// is fixed, so results do not depend on this flag.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            momentum: 0.0,
            val_fraction: 0.2,
            patience: 5,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: FusionParams,
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainResult {
    pub fn curve_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_loss", "val_acc"]).expect("in-memory csv");
        for s in &self.curve {
            w.write_record([
                s.epoch.to_string(),
                s.train_loss.to_string(),
                s.val_loss.to_string(),
                s.val_acc.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

/// Mean loss and accuracy (`y_hat >= 0.5` predicts fake) over a subset.
pub fn evaluate_subset(
    data: &[(FeatureBank, u8)],
    idx: &[usize],
    params: &FusionParams,
) -> Result<(f64, f64), FusionError> {
    let mut pairs = Vec::with_capacity(idx.len());
    let mut correct = 0usize;
    for &i in idx {
        let (bank, y) = &data[i];
        let p = forward(bank, params)?.y_hat;
        if u8::from(p >= 0.5) == *y {
            correct += 1;
        }
        pairs.push((p, *y));
    }
    let acc = if idx.is_empty() { 0.0 } else { correct as f64 / idx.len() as f64 };
    Ok((batch_loss(&pairs), acc))
}

fn batch_gradient(
    data: &[(FeatureBank, u8)],
    batch: &[usize],
    params: &FusionParams,
    parallel: bool,
) -> Result<FusionParams, FusionError> {
    let grads: Vec<Vec<f64>> = if parallel {
        batch
            .par_iter()
            .map(|&i| backward(&data[i].0, params, data[i].1).map(|(g, _)| g.flatten()))
            .collect::<Result<_, _>>()?
    } else {
        batch
            .iter()
            .map(|&i| backward(&data[i].0, params, data[i].1).map(|(g, _)| g.flatten()))
            .collect::<Result<_, _>>()?
    };
    let mut total = vec![0.0; params.num_params()];
    for g in &grads {
        for (t, x) in total.iter_mut().zip(g) {
            *t += x;
        }
    }
    let n = batch.len() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    FusionParams::from_flat(params.dims(), &total)
}

/// Mini-batch gradient descent on the mean cross-entropy with early
/// stopping on a held-out split. Deterministic for a given seed.
pub fn train(
    data: &[(FeatureBank, u8)],
    init: &FusionParams,
    cfg: &TrainConfig,
) -> Result<TrainResult, FusionError> {
    init.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainResult {
            params: init.clone(),
            curve: Vec::new(),
            best_epoch: 0,
            train_indices: Vec::new(),
            val_indices: Vec::new(),
        });
    }
    if data.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() >= 2 {
        ((data.len() as f64 * cfg.val_fraction).round() as usize).min(data.len() - 1)
    } else {
        0
    };
    let (train_part, val_part) = order.split_at(data.len() - n_val);
    let mut train_idx = train_part.to_vec();
    let val_idx = if val_part.is_empty() { train_idx.clone() } else { val_part.to_vec() };

    let mut params = init.clone();
    let mut velocity = vec![0.0; params.num_params()];
    let (mut best_loss, _) = evaluate_subset(data, &val_idx, &params)?;
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut curve = Vec::new();
    let batch_size = cfg.batch_size.max(1);

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(batch_size) {
            let g = batch_gradient(data, batch, &params, cfg.parallel)?.flatten();
            let mut flat = params.flatten();
            for ((p, v), gi) in flat.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = cfg.momentum * *v + gi;
                *p -= cfg.lr * *v;
            }
            params = FusionParams::from_flat(params.dims(), &flat)?;
        }
        let (train_loss, _) = evaluate_subset(data, &train_idx, &params)?;
        let (val_loss, val_acc) = evaluate_subset(data, &val_idx, &params)?;
        if !train_loss.is_finite() || !val_loss.is_finite() || !params.flatten().iter().all(|x| x.is_finite()) {
            return Err(FusionError::DivergenceDetected { epoch, loss: train_loss });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_acc:.4}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainResult {
        params: best,
        curve,
        best_epoch,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// One line of a bank file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBank {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(flatten)]
    pub bank: FeatureBank,
    pub label: u8,
}

pub fn read_banks(path: &Path) -> Result<Vec<LabeledBank>, FusionError> {
    let file = std::fs::File::open(path).map_err(|e| FusionError::Params(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FusionError::Params(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let b: LabeledBank = serde_json::from_str(&line)
            .map_err(|e| FusionError::Params(format!("{} line {}: {e}", path.display(), n + 1)))?;
        b.bank.validate()?;
        if b.label > 1 {
            return Err(FusionError::Params(format!("line {}: label must be 0 or 1", n + 1)));
        }
        out.push(b);
    }
    Ok(out)
}

pub fn write_banks(path: &Path, banks: &[LabeledBank]) -> Result<(), FusionError> {
    let mut f = std::fs::File::create(path).map_err(|e| FusionError::Params(e.to_string()))?;
    for b in banks {
        let line = serde_json::to_string(b).expect("bank serialize");
        writeln!(f, "{line}").map_err(|e| FusionError::Params(e.to_string()))?;
    }
    Ok(())
}
