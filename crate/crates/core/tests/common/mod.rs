//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numeric kernels: tensors are read
//! by canonical name and every product is an explicit loop.

#![allow(dead_code)]

use std::collections::HashMap;

use maest::model::{ModelConfig, ModelWeights};
use maest::patchgrid::{GridDims, PatchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Tensors(pub HashMap<String, Vec<f64>>);

impl Tensors {
    pub fn from_weights(w: &ModelWeights<f64>) -> Self {
        Tensors(
            w.named()
                .into_iter()
                .map(|(n, _, v)| (n, v.to_vec()))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> &[f64] {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("no tensor {name}"))
    }
}

fn layer_norm(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let d = w.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-6).sqrt();
        for i in 0..d {
            out.push((row[i] - mean) * inv * w[i] + b[i]);
        }
    }
    out
}

fn affine(x: &[f64], rows: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let d_out = b.len();
    let d_in = w.len() / d_out;
    let mut y = vec![0.0; rows * d_out];
    for r in 0..rows {
        for o in 0..d_out {
            let mut s = b[o];
            for i in 0..d_in {
                s += x[r * d_in + i] * w[i * d_out + o];
            }
            y[r * d_out + o] = s;
        }
    }
    y
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Reference block: per-head loops over queries and keys.
pub fn naive_block(t: &Tensors, i: usize, x: &[f64], n: usize, d: usize, heads: usize) -> Vec<f64> {
    let p = format!("blocks.{i}");
    let g = |s: &str| t.get(&format!("{p}.{s}"));
    let h1 = layer_norm(x, g("norm1.weight"), g("norm1.bias"));
    let qkv = affine(&h1, n, g("attn.qkv.weight"), g("attn.qkv.bias"));
    let dh = d / heads;
    let mut o = vec![0.0; n * d];
    for h in 0..heads {
        for qi in 0..n {
            let mut scores = vec![0.0; n];
            for kj in 0..n {
                let mut s = 0.0;
                for c in 0..dh {
                    s += qkv[qi * 3 * d + h * dh + c] * qkv[kj * 3 * d + d + h * dh + c];
                }
                scores[kj] = s / (dh as f64).sqrt();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                let mut acc = 0.0;
                for kj in 0..n {
                    acc += e[kj] / z * qkv[kj * 3 * d + 2 * d + h * dh + c];
                }
                o[qi * d + h * dh + c] = acc;
            }
        }
    }
    let a = affine(&o, n, g("attn.proj.weight"), g("attn.proj.bias"));
    let u: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
    let h2 = layer_norm(&u, g("norm2.weight"), g("norm2.bias"));
    let z = affine(&h2, n, g("mlp.fc1.weight"), g("mlp.fc1.bias"));
    let gz: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
    let m = affine(&gz, n, g("mlp.fc2.weight"), g("mlp.fc2.bias"));
    u.iter().zip(&m).map(|(u, m)| u + m).collect()
}

/// Logits and per-block outputs for tokens `[cls, dist, patches…]`.
pub fn naive_forward(t: &Tensors, cfg: &ModelConfig, k0: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = cfg.d;
    let n = k0.len() / d;
    let mut x = k0.to_vec();
    let mut outs = Vec::new();
    for i in 0..cfg.n_blocks {
        x = naive_block(t, i, &x, n, d, cfg.n_heads);
        outs.push(x.clone());
    }
    let c: Vec<f64> = (0..d).map(|j| 0.5 * (x[j] + x[d + j])).collect();
    let hn = layer_norm(&c, t.get("norm.weight"), t.get("norm.bias"));
    (
        affine(&hn, 1, t.get("head.weight"), t.get("head.bias")),
        outs,
    )
}

/// Reference input assembly: `proj(x) + te[t] + fe[f]` one patch at a time.
pub fn naive_tokens(t: &Tensors, d: usize, patches: &[(usize, usize, Vec<f32>)]) -> Vec<f64> {
    let w = t.get("patch_embed.proj.weight");
    let b = t.get("patch_embed.proj.bias");
    let te = t.get("pos_embed.time");
    let fe = t.get("pos_embed.freq");
    let mut out = Vec::new();
    out.extend_from_slice(t.get("cls_token"));
    out.extend_from_slice(t.get("dist_token"));
    for (f, tt, x) in patches {
        for j in 0..d {
            let mut s = b[j];
            for (i, &v) in x.iter().enumerate() {
                s += v as f64 * w[i * d + j];
            }
            out.push(s + te[tt * d + j] + fe[f * d + j]);
        }
    }
    out
}

pub fn toy_config(
    d: usize,
    blocks: usize,
    heads: usize,
    grid: GridDims,
    labels: usize,
) -> ModelConfig {
    ModelConfig {
        d,
        n_blocks: blocks,
        n_heads: heads,
        mlp_ratio: 4,
        n_labels: labels,
        patch: PatchConfig::default(),
        max_grid: grid,
        dropout: 0.0,
    }
}

/// Random weights with every tensor (norms and biases included) perturbed
/// well away from its initialization.
pub fn random_weights(cfg: &ModelConfig, seed: u64, scale: f64) -> ModelWeights<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::<f64>::init_random(cfg, &mut rng).unwrap();
    for s in w.slots_mut() {
        for v in s.iter_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
    w
}

pub fn random_spectrogram(
    bands: usize,
    frames: usize,
    seed: u64,
) -> maest::melfront::MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..bands * frames)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    maest::melfront::MelSpectrogram::new(data, bands, frames, 16).unwrap()
}

pub const TOY_SEGMENT: usize = 96;

/// Width 32, two blocks, 9×9 grid (96-frame segments), four labels.
pub fn toy_model() -> ModelConfig {
    toy_config(32, 2, 4, GridDims { freq: 9, time: 9 }, 4)
}

pub fn toy_train_config(epochs: usize, seed: u64) -> maest::train::TrainConfig {
    use maest::patchgrid::PatchoutSpec;
    use maest::train::{LrSchedule, SpecAugConfig, TrainConfig};
    TrainConfig {
        epochs,
        schedule: LrSchedule {
            warmup_epochs: 2.0,
            plateau_end_epoch: 12.0,
            decay_epochs: 8.0,
            lr_peak: 1e-3,
            lr_floor: 1e-7,
        },
        specaug: SpecAugConfig {
            max_t_groups: 2,
            t_width: 8,
            max_f_groups: 2,
            f_width: 8,
        },
        patchout: PatchoutSpec::training(2, 2),
        batch_size: 16,
        segment_frames: TOY_SEGMENT,
        swa_start: 10,
        swa_interval: 2,
        seed,
        ..TrainConfig::default()
    }
}

/// Synthetic four-class store in a temporary directory, split 80/10/10.
pub struct ToyData {
    pub dir: tempfile::TempDir,
    pub store: maest::melfront::SpectrogramStore,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

pub fn toy_data(n_clips: usize, seed: u64) -> ToyData {
    use maest::synth::{build_toy_store, split_ids, ToyCorpusConfig};
    let dir = tempfile::tempdir().unwrap();
    let cfg = ToyCorpusConfig {
        n_clips,
        seed,
        ..ToyCorpusConfig::default()
    };
    let store = build_toy_store(dir.path(), &cfg, &Default::default()).unwrap();
    let (train, valid, test) = split_ids(store.track_ids(), cfg.n_classes);
    ToyData {
        dir,
        store,
        train,
        valid,
        test,
    }
}
