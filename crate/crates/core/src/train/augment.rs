//! Mixup and SpecAugment.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melfront::MelSpectrogram;

/// Mixed batch together with the coefficient and pairing that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub x: Vec<Vec<f32>>,
    pub y: Vec<Vec<f32>>,
    pub lambda: f64,
    pub perm: Vec<usize>,
}

pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta =
        Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `x' = λx + (1−λ)x[perm]`, likewise for `y`.
pub fn mixup_with(x: &[Vec<f32>], y: &[Vec<f32>], lambda: f64, perm: &[usize]) -> Result<Mixed> {
    if x.len() != y.len() || perm.len() != x.len() {
        return Err(Error::Shape(format!(
            "mixup over {} inputs, {} targets, {} pairings",
            x.len(),
            y.len(),
            perm.len()
        )));
    }
    let mix = |rows: &[Vec<f32>]| -> Result<Vec<Vec<f32>>> {
        rows.iter()
            .zip(perm)
            .map(|(a, &j)| {
                let b = rows
                    .get(j)
                    .ok_or_else(|| Error::Index(format!("pairing index {j}")))?;
                if a.len() != b.len() {
                    return Err(Error::Shape(format!(
                        "rows of length {} and {}",
                        a.len(),
                        b.len()
                    )));
                }
                Ok(a.iter()
                    .zip(b)
                    .map(|(&u, &v)| (lambda * u as f64 + (1.0 - lambda) * v as f64) as f32)
                    .collect())
            })
            .collect()
    };
    Ok(Mixed {
        x: mix(x)?,
        y: mix(y)?,
        lambda,
        perm: perm.to_vec(),
    })
}

/// Batches of one pass through unchanged.
pub fn mixup<R: Rng + ?Sized>(
    x: &[Vec<f32>],
    y: &[Vec<f32>],
    alpha: f64,
    rng: &mut R,
) -> Result<Mixed> {
    if x.len() < 2 {
        return mixup_with(x, y, 1.0, &(0..x.len()).collect::<Vec<_>>());
    }
    let lambda = sample_lambda(alpha, rng)?;
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.shuffle(rng);
    mixup_with(x, y, lambda, &perm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugConfig {
    pub max_t_groups: usize,
    pub t_width: usize,
    pub max_f_groups: usize,
    pub f_width: usize,
}

impl Default for SpecAugConfig {
    fn default() -> Self {
        Self {
            max_t_groups: 20,
            t_width: 8,
            max_f_groups: 5,
            f_width: 8,
        }
    }
}

/// Start offsets of the masked spans; each span is `width` cells wide.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpecAugMasks {
    pub time_starts: Vec<usize>,
    pub t_width: usize,
    pub freq_starts: Vec<usize>,
    pub f_width: usize,
}

impl SpecAugMasks {
    pub fn time_masked(&self, frame: usize) -> bool {
        self.time_starts
            .iter()
            .any(|&s| frame >= s && frame < s + self.t_width)
    }

    pub fn freq_masked(&self, band: usize) -> bool {
        self.freq_starts
            .iter()
            .any(|&s| band >= s && band < s + self.f_width)
    }
}

/// Group counts are uniform on `{0..=max}`; starts are uniform over valid offsets.
pub fn draw_masks<R: Rng + ?Sized>(
    bands: usize,
    frames: usize,
    cfg: &SpecAugConfig,
    rng: &mut R,
) -> SpecAugMasks {
    let t_width = cfg.t_width.min(frames);
    let f_width = cfg.f_width.min(bands);
    let n_t = rng.random_range(0..=cfg.max_t_groups);
    let n_f = rng.random_range(0..=cfg.max_f_groups);
    let time_starts = if t_width == 0 {
        Vec::new()
    } else {
        (0..n_t)
            .map(|_| rng.random_range(0..=frames - t_width))
            .collect()
    };
    let freq_starts = if f_width == 0 {
        Vec::new()
    } else {
        (0..n_f)
            .map(|_| rng.random_range(0..=bands - f_width))
            .collect()
    };
    SpecAugMasks {
        time_starts,
        t_width,
        freq_starts,
        f_width,
    }
}

/// Sets every masked cell to 0, the mean after normalization.
pub fn apply_masks(spec: &MelSpectrogram, masks: &SpecAugMasks) -> MelSpectrogram {
    let mut out = spec.clone();
    for b in 0..out.band_count {
        let band_masked = masks.freq_masked(b);
        for t in 0..out.frame_count {
            if band_masked || masks.time_masked(t) {
                out.set(b, t, 0.0);
            }
        }
    }
    out
}

pub fn spec_augment<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    cfg: &SpecAugConfig,
    rng: &mut R,
) -> MelSpectrogram {
    let masks = draw_masks(spec.band_count, spec.frame_count, cfg, rng);
    apply_masks(spec, &masks)
}
