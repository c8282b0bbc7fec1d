//! The spectrogram transformer: weights, encoder, classifier head, token
//! capture and embedding extraction.
//!
//! Canonical tensor names (block indices are zero-based in names):
//!
//! | name | shape |
//! |------|-------|
//! | `patch_embed.proj.weight` | `[patch_len, d]` |
//! | `patch_embed.proj.bias` | `[d]` |
//! | `pos_embed.time` | `[max_time, d]` |
//! | `pos_embed.freq` | `[max_freq, d]` |
//! | `cls_token`, `dist_token` | `[d]` |
//! | `blocks.{i}.norm1.weight`, `.bias` | `[d]` |
//! | `blocks.{i}.attn.qkv.weight` | `[d, 3d]` |
//! | `blocks.{i}.attn.qkv.bias` | `[3d]` |
//! | `blocks.{i}.attn.proj.weight` | `[d, d]` |
//! | `blocks.{i}.attn.proj.bias` | `[d]` |
//! | `blocks.{i}.norm2.weight`, `.bias` | `[d]` |
//! | `blocks.{i}.mlp.fc1.weight` | `[d, mlp_ratio·d]` |
//! | `blocks.{i}.mlp.fc1.bias` | `[mlp_ratio·d]` |
//! | `blocks.{i}.mlp.fc2.weight` | `[mlp_ratio·d, d]` |
//! | `blocks.{i}.mlp.fc2.bias` | `[d]` |
//! | `norm.weight`, `norm.bias` | `[d]` |
//! | `head.weight` | `[d, n_labels]` |
//! | `head.bias` | `[n_labels]` |
//!
//! Every matrix is stored input-major, so a layer computes `y = x W + b`.
//! The fused `qkv` output columns are `[q | k | v]`, each split into heads of
//! `d / n_heads` consecutive columns.

mod archive;
mod embed;
mod encoder;

pub use archive::{weights_load, weights_save, NamedTensor, NamedTensors};
pub use embed::{extract_embedding, Embedding, EmbeddingSpec, TokenKind};
pub use encoder::{BlockCapture, ForwardOutput, Tape};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::nn::{LayerNorm, Linear};
use crate::patchgrid::{GridDims, PatchConfig, PositionalTables};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub n_labels: usize,
    pub patch: PatchConfig,
    pub max_grid: GridDims,
    /// Dropout inside blocks. Only 0 is accepted.
    pub dropout: f64,
}

impl Default for ModelConfig {
    /// Paper-scale configuration for 30 s segments.
    fn default() -> Self {
        Self {
            d: 768,
            n_blocks: 12,
            n_heads: 12,
            mlp_ratio: 4,
            n_labels: 400,
            patch: PatchConfig::default(),
            max_grid: GridDims { freq: 9, time: 186 },
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        if self.d == 0 || self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if self.n_blocks == 0 || self.mlp_ratio == 0 || self.n_labels == 0 {
            return Err(Error::Config(
                "n_blocks, mlp_ratio and n_labels must be >= 1".into(),
            ));
        }
        if self.max_grid.freq == 0 || self.max_grid.time == 0 {
            return Err(Error::Config("max_grid must be non-empty".into()));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config(
                "block dropout is not supported; set dropout = 0".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn hidden(&self) -> usize {
        self.d * self.mlp_ratio
    }

    /// Canonical tensor names and shapes, in archive order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, h) = (self.d, self.hidden());
        let mut v = vec![
            (
                "patch_embed.proj.weight".to_string(),
                vec![self.patch.patch_len(), d],
            ),
            ("patch_embed.proj.bias".to_string(), vec![d]),
            ("pos_embed.time".to_string(), vec![self.max_grid.time, d]),
            ("pos_embed.freq".to_string(), vec![self.max_grid.freq, d]),
            ("cls_token".to_string(), vec![d]),
            ("dist_token".to_string(), vec![d]),
        ];
        for i in 0..self.n_blocks {
            let p = format!("blocks.{i}");
            v.extend([
                (format!("{p}.norm1.weight"), vec![d]),
                (format!("{p}.norm1.bias"), vec![d]),
                (format!("{p}.attn.qkv.weight"), vec![d, 3 * d]),
                (format!("{p}.attn.qkv.bias"), vec![3 * d]),
                (format!("{p}.attn.proj.weight"), vec![d, d]),
                (format!("{p}.attn.proj.bias"), vec![d]),
                (format!("{p}.norm2.weight"), vec![d]),
                (format!("{p}.norm2.bias"), vec![d]),
                (format!("{p}.mlp.fc1.weight"), vec![d, h]),
                (format!("{p}.mlp.fc1.bias"), vec![h]),
                (format!("{p}.mlp.fc2.weight"), vec![h, d]),
                (format!("{p}.mlp.fc2.bias"), vec![d]),
            ]);
        }
        v.extend([
            ("norm.weight".to_string(), vec![d]),
            ("norm.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, self.n_labels]),
            ("head.bias".to_string(), vec![self.n_labels]),
        ]);
        v
    }
}

/// Exact number of trainable scalars.
pub fn count_params(cfg: &ModelConfig) -> usize {
    cfg.layout()
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub norm1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> BlockWeights<T> {
    fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::zeros(d),
            qkv: Linear::zeros(d, 3 * d),
            proj: Linear::zeros(d, d),
            norm2: LayerNorm::zeros(d),
            fc1: Linear::zeros(d, hidden),
            fc2: Linear::zeros(hidden, d),
        }
    }
}

/// All parameters of one model, generic over the numeric width.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub cfg: ModelConfig,
    pub patch_embed: Linear<T>,
    pub pos: PositionalTables<T>,
    pub cls: Vec<T>,
    pub dist: Vec<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Every tensor zero, including norm scales. Used for gradient buffers.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        Ok(Self {
            cfg: *cfg,
            patch_embed: Linear::zeros(cfg.patch.patch_len(), d),
            pos: PositionalTables::zeros(cfg.max_grid, d),
            cls: vec![T::zero(); d],
            dist: vec![T::zero(); d],
            blocks: (0..cfg.n_blocks)
                .map(|_| BlockWeights::zeros(d, cfg.hidden()))
                .collect(),
            norm: LayerNorm::zeros(d),
            head: Linear::zeros(d, cfg.n_labels),
        })
    }

    /// Zero weights with identity layer norms: every block is the identity map.
    pub fn identity_init(cfg: &ModelConfig) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        for b in &mut w.blocks {
            b.norm1 = LayerNorm::identity(cfg.d);
            b.norm2 = LayerNorm::identity(cfg.d);
        }
        w.norm = LayerNorm::identity(cfg.d);
        Ok(w)
    }

    /// ViT-style initialization: truncated normal (σ = 0.02, cut at 2σ) for
    /// matrices, tokens and positional tables; zero biases; identity norms.
    pub fn init_random<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut w = Self::identity_init(cfg)?;
        let normal = Normal::new(0.0f64, 0.02).unwrap();
        let mut fill = |v: &mut Vec<T>| {
            for x in v.iter_mut() {
                let s = loop {
                    let s = normal.sample(rng);
                    if s.abs() <= 0.04 {
                        break s;
                    }
                };
                *x = T::from_f64(s);
            }
        };
        fill(&mut w.patch_embed.weight);
        fill(&mut w.pos.time);
        fill(&mut w.pos.freq);
        fill(&mut w.cls);
        fill(&mut w.dist);
        for b in &mut w.blocks {
            fill(&mut b.qkv.weight);
            fill(&mut b.proj.weight);
            fill(&mut b.fc1.weight);
            fill(&mut b.fc2.weight);
        }
        fill(&mut w.head.weight);
        Ok(w)
    }

    /// Tensors in [`ModelConfig::layout`] order.
    pub fn slots(&self) -> Vec<&Vec<T>> {
        let mut v = vec![
            &self.patch_embed.weight,
            &self.patch_embed.bias,
            &self.pos.time,
            &self.pos.freq,
            &self.cls,
            &self.dist,
        ];
        for b in &self.blocks {
            v.extend([
                &b.norm1.weight,
                &b.norm1.bias,
                &b.qkv.weight,
                &b.qkv.bias,
                &b.proj.weight,
                &b.proj.bias,
                &b.norm2.weight,
                &b.norm2.bias,
                &b.fc1.weight,
                &b.fc1.bias,
                &b.fc2.weight,
                &b.fc2.bias,
            ]);
        }
        v.extend([
            &self.norm.weight,
            &self.norm.bias,
            &self.head.weight,
            &self.head.bias,
        ]);
        v
    }

    pub fn slots_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = vec![
            &mut self.patch_embed.weight,
            &mut self.patch_embed.bias,
            &mut self.pos.time,
            &mut self.pos.freq,
            &mut self.cls,
            &mut self.dist,
        ];
        for b in &mut self.blocks {
            v.extend([
                &mut b.norm1.weight,
                &mut b.norm1.bias,
                &mut b.qkv.weight,
                &mut b.qkv.bias,
                &mut b.proj.weight,
                &mut b.proj.bias,
                &mut b.norm2.weight,
                &mut b.norm2.bias,
                &mut b.fc1.weight,
                &mut b.fc1.bias,
                &mut b.fc2.weight,
                &mut b.fc2.bias,
            ]);
        }
        v.extend([
            &mut self.norm.weight,
            &mut self.norm.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]);
        v
    }

    /// `(name, shape, values)` for every tensor.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[T])> {
        self.cfg
            .layout()
            .into_iter()
            .zip(self.slots())
            .map(|((n, s), v)| (n, s, v.as_slice()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|v| v.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for s in self.slots_mut() {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Converts to another numeric width.
    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        let mut out = ModelWeights::<U>::zeros(&self.cfg).expect("config already validated");
        for (dst, src) in out.slots_mut().into_iter().zip(self.slots()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::from_f64(s.as_f64());
            }
        }
        out
    }

    /// Checks that every value is finite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, _, v) in self.named() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerics(format!(
                    "tensor {name} holds non-finite values"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(d: usize, blocks: usize, heads: usize, grid: GridDims, labels: usize) -> ModelConfig {
        ModelConfig {
            d,
            n_blocks: blocks,
            n_heads: heads,
            n_labels: labels,
            max_grid: grid,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn full_size_parameter_count() {
        let n = count_params(&ModelConfig::default());
        // projector + tables + tokens + 12 blocks + final norm + head
        let per_block = 2 * 768
            + (768 * 2304 + 2304)
            + (768 * 768 + 768)
            + 2 * 768
            + (768 * 3072 + 3072)
            + (3072 * 768 + 768);
        let expected = (256 * 768 + 768)
            + 186 * 768
            + 9 * 768
            + 2 * 768
            + 12 * per_block
            + 2 * 768
            + (768 * 400 + 400);
        assert_eq!(n, expected);
        assert!((85_000_000..=89_000_000).contains(&n), "{n}");
    }

    #[test]
    fn toy_parameter_count_closed_form() {
        let cfg = toy(16, 1, 2, GridDims { freq: 1, time: 1 }, 2);
        // 256*16+16 | 16 + 16 | 16 + 16 | block: 4*16 + 16*48+48 + 16*16+16 + 16*64+64 + 64*16+16 | 32 | 16*2+2
        let expected = 4112 + 16 + 16 + 32 + (64 + 816 + 272 + 1088 + 1040) + 32 + 34;
        assert_eq!(count_params(&cfg), expected);
        assert_eq!(
            ModelWeights::<f32>::zeros(&cfg).unwrap().param_count(),
            expected
        );
    }

    #[test]
    fn block_count_is_linear() {
        let one = toy(32, 1, 4, GridDims { freq: 3, time: 5 }, 3);
        let two = ModelConfig { n_blocks: 2, ..one };
        let four = ModelConfig { n_blocks: 4, ..one };
        let per_block = count_params(&two) - count_params(&one);
        assert_eq!(count_params(&four) - count_params(&two), 2 * per_block);
    }

    #[test]
    fn layout_matches_slots() {
        let cfg = toy(8, 2, 2, GridDims { freq: 2, time: 3 }, 5);
        let w = ModelWeights::<f32>::zeros(&cfg).unwrap();
        for ((name, shape), slot) in cfg.layout().iter().zip(w.slots()) {
            assert_eq!(shape.iter().product::<usize>(), slot.len(), "{name}");
        }
        assert_eq!(cfg.layout().len(), w.slots().len());
    }

    #[test]
    fn invalid_configs() {
        assert!(toy(10, 1, 3, GridDims { freq: 1, time: 1 }, 2)
            .validate()
            .is_err());
        assert!(toy(12, 0, 3, GridDims { freq: 1, time: 1 }, 2)
            .validate()
            .is_err());
        let with_dropout = ModelConfig {
            dropout: 0.1,
            ..ModelConfig::default()
        };
        assert!(with_dropout.validate().is_err());
    }
}
