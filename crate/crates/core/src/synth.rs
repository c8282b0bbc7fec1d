//! Synthetic tagged audio for smoke tests and demos.
//!
//! Class `c` of `n` is a sum of random-phase sinusoids drawn inside the `c`-th
//! of `n` equal slices of the mel axis, over a faint broadband floor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melfront::{
    hz_to_mel, mel_to_hz, AudioClip, MelConfig, MelExtractor, SpectrogramStore, SAMPLE_RATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    pub n_clips: usize,
    pub n_classes: usize,
    pub clip_seconds: f64,
    pub partials: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_clips: 200,
            n_classes: 4,
            clip_seconds: 2.0,
            partials: 24,
            seed: 0,
        }
    }
}

/// Middle 60% of the class's slice of the mel axis, in Hz.
pub fn class_band_hz(class: usize, n_classes: usize) -> (f64, f64) {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    let w = top / n_classes as f64;
    let lo = w * (class as f64 + 0.2);
    let hi = w * (class as f64 + 0.8);
    (mel_to_hz(lo), mel_to_hz(hi))
}

pub fn toy_clip<R: Rng + ?Sized>(class: usize, cfg: &ToyCorpusConfig, rng: &mut R) -> AudioClip {
    let n = (cfg.clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let (lo, hi) = class_band_hz(class, cfg.n_classes);
    let gain = rng.random_range(0.3..1.0) / cfg.partials.max(1) as f64;
    let tones: Vec<(f64, f64)> = (0..cfg.partials)
        .map(|_| {
            let f = rng.random_range(lo..hi);
            (
                2.0 * std::f64::consts::PI * f / SAMPLE_RATE as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let samples = (0..n)
        .map(|i| {
            let s: f64 = tones.iter().map(|&(w, p)| (w * i as f64 + p).sin()).sum();
            (gain * s + rng.random_range(-1e-3..1e-3)) as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

pub fn toy_track_id(i: usize) -> String {
    format!("toy_{i:04}")
}

/// Writes `n_clips` spectrograms with single labels `i mod n_classes`.
pub fn build_toy_store(
    root: impl AsRef<Path>,
    cfg: &ToyCorpusConfig,
    mel: &MelConfig,
) -> Result<SpectrogramStore> {
    if cfg.n_classes == 0 || cfg.n_clips == 0 {
        return Err(Error::Config("toy corpus needs clips and classes".into()));
    }
    let mut store = SpectrogramStore::open(root)?;
    let ex = MelExtractor::new(*mel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..cfg.n_clips {
        let class = i % cfg.n_classes;
        let spec = ex.compute(&toy_clip(class, cfg, &mut rng))?;
        store.write(&spec, &toy_track_id(i), &[class as u32])?;
    }
    Ok(store)
}

/// Deterministic 80/10/10 split over consecutive groups of `group` ids:
/// group `g` goes to valid when `g mod 10 = 8` and to test when it is 9.
/// With `group = n_classes` every split sees every class.
pub fn split_ids(ids: &[String], group: usize) -> (Vec<String>, Vec<String>, Vec<String>) {
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (i, id) in ids.iter().enumerate() {
        match (i / group.max(1)) % 10 {
            8 => va.push(id.clone()),
            9 => te.push(id.clone()),
            _ => tr.push(id.clone()),
        }
    }
    (tr, va, te)
}
