//! Supervised training: BCE over multi-hot tags with mixup, SpecAugment,
//! balanced sampling, Adam with decoupled decay and SWA.

mod augment;
mod optim;
mod sampler;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{
    apply_masks, draw_masks, mixup, mixup_with, sample_lambda, spec_augment, Mixed, SpecAugConfig,
    SpecAugMasks,
};
pub use optim::{
    adam_step, lr_at, swa_update, AdamState, LrSchedule, SwaState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use sampler::{balanced_sample, LabelStats};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::melfront::{compute_stats, normalize, MelSpectrogram, NormStats, SpectrogramStore};
use crate::model::{ModelConfig, ModelWeights};
use crate::patchgrid::{slice_patches, PatchoutSpec};
use crate::probe::metrics::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub mixup_alpha: f64,
    pub specaug: SpecAugConfig,
    pub patchout: PatchoutSpec,
    /// Tracks drawn per epoch by the balanced sampler.
    pub epoch_sample: usize,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub swa_start: usize,
    pub swa_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 130,
            schedule: LrSchedule::default(),
            weight_decay: 1e-4,
            mixup_alpha: 0.3,
            specaug: SpecAugConfig::default(),
            patchout: PatchoutSpec::training(3, 90),
            epoch_sample: 200_000,
            batch_size: 16,
            segment_frames: 1874,
            swa_start: 50,
            swa_interval: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.epochs == 0
            || self.batch_size == 0
            || self.epoch_sample == 0
            || self.segment_frames == 0
        {
            return Err(Error::Config(
                "epochs, batch_size, epoch_sample and segment_frames must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 || self.mixup_alpha < 0.0 {
            return Err(Error::Config(
                "weight_decay and mixup_alpha must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// `mean_l max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_loss<T: Scalar>(logits: &[T], targets: &[f32]) -> Result<f64> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(z, &y)| {
            let z = z.as_f64();
            z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Ok(sum / logits.len() as f64)
}

/// `d bce_loss / dz = (σ(z) − y) / L`.
pub fn bce_grad<T: Scalar>(logits: &[T], targets: &[f32]) -> Result<Vec<T>> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let l = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(z, &y)| T::from_f64((sigmoid(z.as_f64()) - y as f64) / l))
        .collect())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn multi_hot(labels: &[u32], n_labels: usize) -> Vec<f32> {
    let mut v = vec![0.0; n_labels];
    for &l in labels {
        if let Some(x) = v.get_mut(l as usize) {
            *x = 1.0;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    pub spec: MelSpectrogram,
    pub labels: Vec<u32>,
}

/// Training and validation tracks held in memory with their normalization stats.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Track>,
    pub valid: Vec<Track>,
    pub stats: NormStats,
    pub n_labels: usize,
}

impl Corpus {
    /// Stats default to those of the training tracks.
    pub fn from_store(
        store: &SpectrogramStore,
        train_ids: &[String],
        valid_ids: &[String],
        stats: Option<NormStats>,
    ) -> Result<Self> {
        if train_ids.is_empty() {
            return Err(Error::EmptyInput("no training tracks".into()));
        }
        let load = |ids: &[String]| -> Result<Vec<Track>> {
            ids.iter()
                .map(|id| {
                    Ok(Track {
                        id: id.clone(),
                        spec: store.read(id)?,
                        labels: store.labels(id)?.to_vec(),
                    })
                })
                .collect()
        };
        let stats = match stats {
            Some(s) => s,
            None => compute_stats(store, train_ids)?,
        };
        Ok(Self {
            train: load(train_ids)?,
            valid: load(valid_ids)?,
            stats,
            n_labels: store.label_count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_roc_auc: Option<f64>,
    pub val_map: Option<f64>,
    pub swa: bool,
}

pub fn write_metrics_log<W: Write>(out: &mut W, log: &[EpochMetrics]) -> Result<()> {
    for m in log {
        let line = serde_json::to_string(m).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub final_weights: ModelWeights<f32>,
    pub swa_weights: Option<ModelWeights<f32>>,
    pub log: Vec<EpochMetrics>,
}

/// Centered window of `len` frames, zero-padded when the track is shorter.
pub fn center_segment(spec: &MelSpectrogram, len: usize) -> MelSpectrogram {
    let start = spec.frame_count.saturating_sub(len) / 2;
    spec.frames(start, len)
}

/// Logits for the centered segment of each track, row-major `[tracks × labels]`.
pub fn predict_logits<T: Scalar>(
    weights: &ModelWeights<T>,
    tracks: &[Track],
    stats: &NormStats,
    segment_frames: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tracks.len() * weights.cfg.n_labels);
    for t in tracks {
        let seg = normalize(&center_segment(&t.spec, segment_frames), stats)?;
        let grid = slice_patches(&seg, &weights.cfg.patch)?;
        let keep = PatchoutSpec::none().kept_deterministic(grid.dims)?;
        let (logits, _) = weights.forward_train(&grid, &keep)?;
        out.extend(logits.iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

pub fn label_matrix(tracks: &[Track], n_labels: usize) -> Vec<u8> {
    tracks
        .iter()
        .flat_map(|t| multi_hot(&t.labels, n_labels).into_iter().map(|v| v as u8))
        .collect()
}

fn random_segment<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    len: usize,
    rng: &mut R,
) -> MelSpectrogram {
    let start = if spec.frame_count > len {
        rng.random_range(0..=spec.frame_count - len)
    } else {
        0
    };
    spec.frames(start, len)
}

/// Trains from `init` (or a seeded random initialization) and returns the
/// last-epoch weights, the SWA average and one metrics row per epoch.
pub fn fit(
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<ModelWeights<f32>>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitOutput> {
    cfg.validate()?;
    model_cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyInput("no training tracks".into()));
    }
    if corpus.n_labels > model_cfg.n_labels {
        return Err(Error::Config(format!(
            "corpus uses {} labels, model head has {}",
            corpus.n_labels, model_cfg.n_labels
        )));
    }
    let n_labels = model_cfg.n_labels;
    let (bands, hop_ms) = (corpus.train[0].spec.band_count, corpus.train[0].spec.hop_ms);
    if let Some(t) = corpus.train.iter().find(|t| t.spec.band_count != bands) {
        return Err(Error::Shape(format!(
            "track {} has {} bands, expected {bands}",
            t.id, t.spec.band_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = match init {
        Some(w) => {
            if w.cfg != *model_cfg {
                return Err(Error::Config(
                    "initial weights do not match the model config".into(),
                ));
            }
            w
        }
        None => ModelWeights::<f32>::init_random(model_cfg, &mut rng)?,
    };
    let mut grads = ModelWeights::<f32>::zeros(model_cfg)?;
    let mut adam = AdamState::<f32>::for_shapes(weights.slots().iter().map(|s| s.len()));
    let mut swa = SwaState::new(cfg.swa_start, cfg.swa_interval);

    let label_sets: Vec<&[u32]> = corpus.train.iter().map(|t| t.labels.as_slice()).collect();
    let label_stats = LabelStats::from_label_sets(&label_sets, n_labels)?;
    let per_epoch = cfg.epoch_sample.min(corpus.train.len());
    let steps = per_epoch.div_ceil(cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = balanced_sample(&label_sets, &label_stats, per_epoch, &mut rng)?;
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let track = &corpus.train[i];
                let seg = random_segment(&track.spec, cfg.segment_frames, &mut rng);
                let seg = normalize(&seg, &corpus.stats)?;
                let seg = spec_augment(&seg, &cfg.specaug, &mut rng);
                xs.push(seg.data);
                ys.push(multi_hot(&track.labels, n_labels));
            }
            let mixed = if cfg.mixup_alpha > 0.0 {
                mixup(&xs, &ys, cfg.mixup_alpha, &mut rng)?
            } else {
                mixup_with(&xs, &ys, 1.0, &(0..xs.len()).collect::<Vec<_>>())?
            };
            grads.fill_zero();
            let scale = 1.0 / chunk.len() as f64;
            for (x, y) in mixed.x.into_iter().zip(&mixed.y) {
                let spec = MelSpectrogram::new(x, bands, cfg.segment_frames, hop_ms)?;
                let grid = slice_patches(&spec, &model_cfg.patch)?;
                let keep = cfg.patchout.kept(grid.dims, &mut rng)?;
                let (logits, tape) = weights.forward_train(&grid, &keep)?;
                loss_sum += bce_loss(&logits, y)?;
                let dl: Vec<f32> = bce_grad(&logits, y)?
                    .into_iter()
                    .map(|g| (g as f64 * scale) as f32)
                    .collect();
                weights.backward(&tape, &dl, &mut grads)?;
            }
            lr = cfg
                .schedule
                .lr_at(epoch as f64 + step as f64 / steps as f64);
            let g = grads.slots();
            adam_step(
                &mut weights.slots_mut(),
                &g,
                &mut adam,
                lr,
                cfg.weight_decay,
            )?;
        }
        weights.check_finite()?;
        let done = epoch + 1;
        let swa_now = swa.due(done);
        if swa_now {
            swa_update(&mut swa, &weights)?;
        }
        let (val_roc_auc, val_map) = if corpus.valid.is_empty() {
            (None, None)
        } else {
            let scores =
                predict_logits(&weights, &corpus.valid, &corpus.stats, cfg.segment_frames)?;
            match evaluate(&scores, &label_matrix(&corpus.valid, n_labels), n_labels) {
                Ok(r) => (Some(r.roc_auc), Some(r.map)),
                Err(Error::DegenerateMetric) => (None, None),
                Err(e) => return Err(e),
            }
        };
        let m = EpochMetrics {
            epoch: done,
            lr,
            train_loss: loss_sum / per_epoch as f64,
            val_roc_auc,
            val_map,
            swa: swa_now,
        };
        on_epoch(&m);
        log.push(m);
    }
    Ok(FitOutput {
        swa_weights: swa.weights(),
        final_weights: weights,
        log,
    })
}
