//! Audio front end: PCM to log-compressed mel-spectrograms, normalization
//! statistics and the half-precision spectrogram store.
//!
//! The representation is 96 mel bands computed from 32 ms Hann windows with a
//! 16 ms hop at 16 kHz, compressed with `log10(1 + 10000 x)`. Filters follow the
//! HTK mel formula and are applied to the power spectrum.

mod store;
mod wav;

pub use store::{decode_record, encode_record, quantize_f16, IndexEntry, SpectrogramStore};
pub use wav::{read_wav, write_wav};

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every clip must have after ingestion.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Rejects clips shorter than `min_seconds` (training-corpus ingestion rule).
    pub fn require_duration(&self, min_seconds: f64) -> Result<()> {
        if self.duration_s() < min_seconds {
            return Err(Error::InputTooShort(format!(
                "clip lasts {:.2} s, at least {min_seconds} s required",
                self.duration_s()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_bands: usize,
    pub window_ms: u32,
    pub hop_ms: u32,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_bands: 96,
            window_ms: 32,
            hop_ms: 16,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bands == 0 {
            return Err(Error::Config("n_bands must be at least 1".into()));
        }
        if self.hop_ms == 0 || self.window_ms <= self.hop_ms {
            return Err(Error::Config(format!(
                "need window > hop > 0, got window {} ms, hop {} ms",
                self.window_ms, self.hop_ms
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (SAMPLE_RATE as usize * self.window_ms as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (SAMPLE_RATE as usize * self.hop_ms as usize) / 1000
    }

    /// Frames produced for a clip of `len` samples (no padding).
    pub fn frame_count(&self, len: usize) -> usize {
        let win = self.window_samples();
        if len < win {
            0
        } else {
            (len - win) / self.hop_samples() + 1
        }
    }
}

/// Log-compressed mel energies stored bands-major: `data[band * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f32>,
    pub band_count: usize,
    pub frame_count: usize,
    pub hop_ms: u16,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, band_count: usize, frame_count: usize, hop_ms: u16) -> Result<Self> {
        if data.len() != band_count * frame_count {
            return Err(Error::Shape(format!(
                "{} values for a {band_count}x{frame_count} spectrogram",
                data.len()
            )));
        }
        Ok(Self {
            data,
            band_count,
            frame_count,
            hop_ms,
        })
    }

    pub fn zeros(band_count: usize, frame_count: usize, hop_ms: u16) -> Self {
        Self {
            data: vec![0.0; band_count * frame_count],
            band_count,
            frame_count,
            hop_ms,
        }
    }

    #[inline]
    pub fn get(&self, band: usize, frame: usize) -> f32 {
        self.data[band * self.frame_count + frame]
    }

    #[inline]
    pub fn set(&mut self, band: usize, frame: usize, v: f32) {
        self.data[band * self.frame_count + frame] = v;
    }

    /// Copies frames `[start, start + len)`, zero-padding past the end.
    pub fn frames(&self, start: usize, len: usize) -> MelSpectrogram {
        let mut out = MelSpectrogram::zeros(self.band_count, len, self.hop_ms);
        let avail = self.frame_count.saturating_sub(start).min(len);
        for b in 0..self.band_count {
            let src = &self.data[b * self.frame_count + start..][..avail];
            out.data[b * len..b * len + avail].copy_from_slice(src);
        }
        out
    }
}

/// `log10(1 + 10000 x)`.
pub fn log_compress(x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!(
            "log compression of negative value {x}"
        )));
    }
    Ok((1.0 + 10_000.0 * x).log10())
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK filterbank, `[n_bands × (n_fft/2 + 1)]` row-major.
pub fn mel_filterbank(n_bands: usize, n_fft: usize, sample_rate: u32) -> Vec<f64> {
    let n_freqs = n_fft / 2 + 1;
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = vec![0.0; n_bands * n_freqs];
    for b in 0..n_bands {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..n_freqs {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[b * n_freqs + k] = w;
        }
    }
    fb
}

/// Reusable STFT + filterbank state for one [`MelConfig`].
pub struct MelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let filters = mel_filterbank(cfg.n_bands, n, SAMPLE_RATE);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "expected {SAMPLE_RATE} Hz audio, got {} Hz",
                clip.sample_rate
            )));
        }
        let win = self.cfg.window_samples();
        let hop = self.cfg.hop_samples();
        if clip.samples.len() < win {
            return Err(Error::InputTooShort(format!(
                "{} samples, one window needs {win}",
                clip.samples.len()
            )));
        }
        let frames = self.cfg.frame_count(clip.samples.len());
        let bands = self.cfg.n_bands;
        let n_freqs = win / 2 + 1;
        let mut out = MelSpectrogram::zeros(bands, frames, self.cfg.hop_ms as u16);
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut power = vec![0.0f64; n_freqs];
        for t in 0..frames {
            let frame = &clip.samples[t * hop..t * hop + win];
            for ((c, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *c = Complex::new(s as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for b in 0..bands {
                let row = &self.filters[b * n_freqs..(b + 1) * n_freqs];
                let energy: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                out.set(b, t, log_compress(energy.max(0.0))? as f32);
            }
        }
        Ok(out)
    }
}

/// One-shot mel extraction; builds the FFT plan and filterbank every call.
pub fn compute_mel(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(*cfg)?.compute(clip)
}

/// Keeps at most `seconds` of audio taken from the center of the clip.
pub fn center_crop(clip: &AudioClip, seconds: f64) -> AudioClip {
    let target = (seconds * clip.sample_rate as f64).round() as usize;
    let len = clip.samples.len();
    if len <= target {
        return clip.clone();
    }
    let start = (len - target) / 2;
    AudioClip::new(
        clip.samples[start..start + target].to_vec(),
        clip.sample_rate,
    )
}

pub fn center_crop_30s(clip: &AudioClip) -> AudioClip {
    center_crop(clip, 30.0)
}

/// Corpus-level normalization statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
    };
}

/// Single streaming pass over cells: count, sum and sum of squares.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    count: u64,
    sum: f64,
    sum_sq: f64,
}

impl StatsAccumulator {
    pub fn push_all(&mut self, values: &[f32]) {
        for &v in values {
            let v = v as f64;
            self.count += 1;
            self.sum += v;
            self.sum_sq += v * v;
        }
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.count == 0 {
            return Err(Error::EmptyInput("no spectrogram cells".into()));
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        // Rounding in sum_sq/n - mean^2 leaves ~1e-16 relative residue on constant data.
        if var <= 1e-12 * mean.abs().max(1.0).powi(2) {
            return Err(Error::DegenerateStats(format!(
                "variance {var:e} over {} cells",
                self.count
            )));
        }
        Ok(NormStats {
            mean,
            std: var.sqrt(),
        })
    }
}

pub fn compute_stats(store: &SpectrogramStore, subset: &[String]) -> Result<NormStats> {
    if subset.is_empty() {
        return Err(Error::EmptyInput("empty track subset".into()));
    }
    let mut acc = StatsAccumulator::default();
    for id in subset {
        acc.push_all(&store.read(id)?.data);
    }
    acc.finish()
}

pub fn normalize(spec: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram> {
    if !(stats.std > 0.0) {
        return Err(Error::DegenerateStats(format!("std {}", stats.std)));
    }
    let mut out = spec.clone();
    let (m, s) = (stats.mean, stats.std);
    for v in &mut out.data {
        *v = ((*v as f64 - m) / s) as f32;
    }
    Ok(out)
}

pub fn denormalize(spec: &MelSpectrogram, stats: &NormStats) -> MelSpectrogram {
    let mut out = spec.clone();
    for v in &mut out.data {
        *v = (*v as f64 * stats.std + stats.mean) as f32;
    }
    out
}
