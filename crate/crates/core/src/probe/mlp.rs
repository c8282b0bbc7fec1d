use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, roc_auc_macro, MetricReport};
use super::{EmbeddingDataset, SplitData};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::train::{adam_step, bce_grad, bce_loss, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub weight_decay: f64,
    /// Exponential rise from `lr_start` to `lr_max`.
    pub rise_epochs: usize,
    /// Final linear decay to `lr_floor`.
    pub decay_epochs: usize,
    pub lr_start: f64,
    pub lr_floor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            dropout: 0.5,
            batch_size: 128,
            epochs: 30,
            lr_max: 1e-3,
            weight_decay: 1e-3,
            rise_epochs: 10,
            decay_epochs: 10,
            lr_start: 1e-7,
            lr_floor: 1e-7,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "hidden, batch_size and epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.lr_max > 0.0 && self.lr_start > 0.0 && self.lr_floor >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Rise and decay each take at most a third of a short run.
pub fn probe_lr_at(epoch: f64, cfg: &ProbeConfig) -> f64 {
    let total = cfg.epochs as f64;
    let rise = (cfg.rise_epochs as f64).min(total / 3.0);
    let decay = (cfg.decay_epochs as f64).min(total / 3.0);
    let decay_start = total - decay;
    if epoch < rise {
        let f = epoch / rise;
        cfg.lr_max.powf(f) * cfg.lr_start.powf(1.0 - f)
    } else if epoch <= decay_start {
        cfg.lr_max
    } else if epoch < total {
        cfg.lr_max + (cfg.lr_floor - cfg.lr_max) * (epoch - decay_start) / decay
    } else {
        cfg.lr_floor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWeights {
    pub fc1: Linear<f32>,
    pub fc2: Linear<f32>,
}

impl ProbeWeights {
    /// Uniform `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, n_labels: usize, rng: &mut R) -> Self {
        let mut layer = |i: usize, o: usize| {
            let a = 1.0 / (i as f32).sqrt();
            let mut l = Linear::zeros(i, o);
            l.weight
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-a..a));
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-a..a));
            l
        };
        let fc1 = layer(d_in, hidden);
        let fc2 = layer(hidden, n_labels);
        Self { fc1, fc2 }
    }

    /// Logits with dropout disabled.
    pub fn predict(&self, x: &[f32], rows: usize) -> Vec<f64> {
        let mut h = self.fc1.forward(x, rows);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.fc2
            .forward(&h, rows)
            .into_iter()
            .map(|v| v as f64)
            .collect()
    }

    fn slots_mut(&mut self) -> Vec<&mut Vec<f32>> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    fn slots(&self) -> Vec<&Vec<f32>> {
        vec![
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }

    fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_roc_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ProbeFit {
    pub weights: ProbeWeights,
    pub best_epoch: usize,
    pub valid_roc_auc: f64,
    pub test: MetricReport,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub history: Vec<EpochRecord>,
}

fn mean_loss(w: &ProbeWeights, d: &SplitData, n_labels: usize) -> Result<f64> {
    let logits = w.predict(&d.x, d.len());
    let mut total = 0.0;
    for i in 0..d.len() {
        let y: Vec<f32> = d.y[i * n_labels..(i + 1) * n_labels]
            .iter()
            .map(|&v| v as f32)
            .collect();
        total += bce_loss(&logits[i * n_labels..(i + 1) * n_labels], &y)?;
    }
    Ok(total / d.len().max(1) as f64)
}

fn valid_auc(w: &ProbeWeights, d: &SplitData, n_labels: usize) -> Option<f64> {
    let scores = w.predict(&d.x, d.len());
    if scores.iter().any(|s| !s.is_finite()) {
        return None;
    }
    roc_auc_macro(&scores, &d.y, n_labels).ok().map(|m| m.value)
}

/// Trains from `init`; keeps the epoch with the highest validation ROC-AUC
/// (earliest on ties) and reports test metrics for it.
pub fn mlp_fit_from(
    ds: &EmbeddingDataset,
    cfg: &ProbeConfig,
    init: ProbeWeights,
    seed: u64,
) -> Result<ProbeFit> {
    cfg.validate()?;
    ds.require_splits()?;
    let (dim, nl) = (ds.dim, ds.n_labels);
    if init.fc1.d_in != dim
        || init.fc2.d_out != nl
        || init.fc1.d_out != cfg.hidden
        || init.fc2.d_in != cfg.hidden
    {
        return Err(Error::Shape(format!(
            "probe maps {} -> {}, dataset has {dim} features and {nl} labels",
            init.fc1.d_in, init.fc2.d_out
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = init;
    let initial_loss = mean_loss(&w, &ds.train, nl)?;
    let mut adam = AdamState::<f32>::for_shapes(w.slots().iter().map(|s| s.len()));
    let mut grads = ProbeWeights {
        fc1: Linear::zeros(dim, cfg.hidden),
        fc2: Linear::zeros(cfg.hidden, nl),
    };
    let n = ds.train.len();
    let steps = n.div_ceil(cfg.batch_size);
    let keep = 1.0 - cfg.dropout;
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, usize, ProbeWeights)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let rows = idx.len();
            let x: Vec<f32> = idx
                .iter()
                .flat_map(|&i| ds.train.row(i, dim).iter().copied())
                .collect();
            let z = w.fc1.forward(&x, rows);
            let mut h: Vec<f32> = z.iter().map(|v| v.max(0.0)).collect();
            let mask: Vec<f32> = (0..h.len())
                .map(|_| {
                    if cfg.dropout == 0.0 || rng.random::<f64>() < keep {
                        (1.0 / keep) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            let logits = w.fc2.forward(&h, rows);
            let mut dlogits = Vec::with_capacity(logits.len());
            for (r, &i) in idx.iter().enumerate() {
                let y: Vec<f32> = ds.train.y[i * nl..(i + 1) * nl]
                    .iter()
                    .map(|&v| v as f32)
                    .collect();
                let zl = &logits[r * nl..(r + 1) * nl];
                loss_sum += bce_loss(zl, &y)?;
                dlogits.extend(bce_grad(zl, &y)?.into_iter().map(|g| g / rows as f32));
            }
            grads.fc1.weight.fill(0.0);
            grads.fc1.bias.fill(0.0);
            grads.fc2.weight.fill(0.0);
            grads.fc2.bias.fill(0.0);
            let mut dh = w.fc2.backward(&h, &dlogits, rows, &mut grads.fc2);
            for ((g, m), zv) in dh.iter_mut().zip(&mask).zip(&z) {
                *g = if *zv > 0.0 { *g * m } else { 0.0 };
            }
            w.fc1.backward_params(&x, &dh, rows, &mut grads.fc1);
            let lr = probe_lr_at(epoch as f64 + step as f64 / steps as f64, cfg);
            let g = grads.slots();
            adam_step(&mut w.slots_mut(), &g, &mut adam, lr, cfg.weight_decay)?;
            if !w.is_finite() {
                history.push(EpochRecord {
                    epoch: epoch + 1,
                    train_loss: f64::NAN,
                    valid_roc_auc: None,
                });
                break 'epochs;
            }
        }
        let auc = valid_auc(&w, &ds.valid, nl);
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            valid_roc_auc: auc,
        });
        if let Some(a) = auc {
            if best.as_ref().is_none_or(|(b, _, _)| a > *b) {
                best = Some((a, epoch + 1, w.clone()));
            }
        }
    }
    let (valid_roc_auc, best_epoch, weights) =
        best.ok_or_else(|| Error::Numerics("probe produced no usable validation score".into()))?;
    let scores = weights.predict(&ds.test.x, ds.test.len());
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerics("non-finite probe scores on test".into()));
    }
    let test = evaluate(&scores, &ds.test.y, nl)?;
    Ok(ProbeFit {
        weights,
        best_epoch,
        valid_roc_auc,
        test,
        initial_loss,
        history,
    })
}

pub fn mlp_fit(ds: &EmbeddingDataset, cfg: &ProbeConfig, seed: u64) -> Result<ProbeFit> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let init = ProbeWeights::init(ds.dim, cfg.hidden, ds.n_labels, &mut rng);
    mlp_fit_from(ds, cfg, init, seed)
}

/// Hyper-parameter axes; every other field comes from the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeGrid {
    pub batch_size: Vec<usize>,
    pub epochs: Vec<usize>,
    pub dropout: Vec<f64>,
    pub lr_max: Vec<f64>,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            batch_size: vec![64, 128, 256],
            epochs: vec![30, 40, 50, 60, 70, 80],
            dropout: vec![0.5, 0.75],
            lr_max: vec![1e-3, 5e-4, 1e-4, 1e-5],
        }
    }
}

impl ProbeGrid {
    pub fn single(cfg: &ProbeConfig) -> Self {
        Self {
            batch_size: vec![cfg.batch_size],
            epochs: vec![cfg.epochs],
            dropout: vec![cfg.dropout],
            lr_max: vec![cfg.lr_max],
        }
    }

    pub fn configs(&self, base: &ProbeConfig) -> Vec<ProbeConfig> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_size {
            for &epochs in &self.epochs {
                for &dropout in &self.dropout {
                    for &lr_max in &self.lr_max {
                        out.push(ProbeConfig {
                            batch_size,
                            epochs,
                            dropout,
                            lr_max,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: ProbeConfig,
    pub seed: u64,
    pub valid_roc_auc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub test: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl GridResult {
    pub fn winner(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Cell `i` trains with seed `seed + i`; cells run in parallel.
pub fn grid_search(
    ds: &EmbeddingDataset,
    base: &ProbeConfig,
    grid: &ProbeGrid,
    seed: u64,
) -> Result<GridResult> {
    ds.require_splits()?;
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::Config("empty probe grid".into()));
    }
    let rows: Vec<GridRow> = configs
        .into_par_iter()
        .enumerate()
        .map(|(i, config)| {
            let s = seed.wrapping_add(i as u64);
            match mlp_fit(ds, &config, s) {
                Ok(fit) => GridRow {
                    config,
                    seed: s,
                    valid_roc_auc: Some(fit.valid_roc_auc),
                    best_epoch: Some(fit.best_epoch),
                    test: Some(fit.test),
                    error: None,
                },
                Err(e) => GridRow {
                    config,
                    seed: s,
                    valid_roc_auc: None,
                    best_epoch: None,
                    test: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.valid_roc_auc.map(|a| (i, a)))
        .fold(None, |acc: Option<(usize, f64)>, (i, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((i, a)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerics("no grid cell produced a validation score".into()))?;
    Ok(GridResult { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = ProbeConfig::default();
        assert!((probe_lr_at(0.0, &cfg) - 1e-7).abs() < 1e-20);
        assert!((probe_lr_at(5.0, &cfg) - (1e-3f64 * 1e-7).sqrt()).abs() < 1e-15);
        assert_eq!(probe_lr_at(10.0, &cfg), 1e-3);
        assert_eq!(probe_lr_at(20.0, &cfg), 1e-3);
        assert!((probe_lr_at(25.0, &cfg) - (1e-3 + 1e-7) / 2.0).abs() < 1e-15);
        assert_eq!(probe_lr_at(30.0, &cfg), 1e-7);
        // log-linear during the rise
        let l = |e: f64| probe_lr_at(e, &cfg).ln();
        assert!(((l(2.0) - l(1.0)) - (l(7.0) - l(6.0))).abs() < 1e-9);
    }

    #[test]
    fn grid_cardinality() {
        assert_eq!(
            ProbeGrid::default().configs(&ProbeConfig::default()).len(),
            144
        );
        assert_eq!(
            ProbeGrid::single(&ProbeConfig::default())
                .configs(&ProbeConfig::default())
                .len(),
            1
        );
    }
}
