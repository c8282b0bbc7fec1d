//! Patch slicing, split time/frequency positional tables, structured patchout
//! and assembly of the input token sequence.
//!
//! A spectrogram is cut into overlapping `patch_h × patch_w` windows on a
//! `stride_h × stride_w` grid. Each patch is addressed by its frequency row
//! `f` and time column `t`; its input token is
//! `proj(patch) + time_table[t] + freq_table[f]`. Patchout removes whole rows
//! and/or columns of that grid before the encoder ever sees them.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::melfront::MelSpectrogram;
use crate::nn::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_h: 16,
            patch_w: 16,
            stride_h: 10,
            stride_w: 10,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride_h == 0
            || self.stride_w == 0
            || self.stride_h > self.patch_h
            || self.stride_w > self.patch_w
        {
            return Err(Error::Config(format!(
                "need 0 < stride <= patch on both axes, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// Grid produced by a `bands × frames` spectrogram; partial edge patches are dropped.
    pub fn grid_dims(&self, bands: usize, frames: usize) -> Result<GridDims> {
        if bands < self.patch_h || frames < self.patch_w {
            return Err(Error::InputTooShort(format!(
                "{bands}x{frames} spectrogram is smaller than one {}x{} patch",
                self.patch_h, self.patch_w
            )));
        }
        Ok(GridDims {
            freq: (bands - self.patch_h) / self.stride_h + 1,
            time: (frames - self.patch_w) / self.stride_w + 1,
        })
    }

    /// Frames needed for a grid with `time` columns.
    pub fn frames_for(&self, time: usize) -> usize {
        (time - 1) * self.stride_w + self.patch_w
    }
}

/// Patch-grid extent: `freq` rows by `time` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub freq: usize,
    pub time: usize,
}

impl GridDims {
    pub fn count(&self) -> usize {
        self.freq * self.time
    }
}

/// Flattened patches, row-major over (freq row, time column).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub dims: GridDims,
    pub cfg: PatchConfig,
    /// `dims.count() × patch_len` values; inside a patch, frequency-major.
    pub patches: Vec<f32>,
}

impl PatchGrid {
    pub fn patch(&self, freq: usize, time: usize) -> &[f32] {
        let len = self.cfg.patch_len();
        let i = freq * self.dims.time + time;
        &self.patches[i * len..(i + 1) * len]
    }

    /// Top-left (band, frame) of a patch in the source spectrogram.
    pub fn origin(&self, freq: usize, time: usize) -> (usize, usize) {
        (freq * self.cfg.stride_h, time * self.cfg.stride_w)
    }
}

pub fn slice_patches(spec: &MelSpectrogram, cfg: &PatchConfig) -> Result<PatchGrid> {
    cfg.validate()?;
    let dims = cfg.grid_dims(spec.band_count, spec.frame_count)?;
    let mut patches = Vec::with_capacity(dims.count() * cfg.patch_len());
    for f in 0..dims.freq {
        for t in 0..dims.time {
            let (b0, t0) = (f * cfg.stride_h, t * cfg.stride_w);
            for b in b0..b0 + cfg.patch_h {
                let row = b * spec.frame_count;
                patches.extend_from_slice(&spec.data[row + t0..row + t0 + cfg.patch_w]);
            }
        }
    }
    Ok(PatchGrid {
        dims,
        cfg: *cfg,
        patches,
    })
}

/// Kept patch coordinates `(freq, time)`, sorted row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeptPatches {
    pub dims: GridDims,
    pub indices: Vec<(usize, usize)>,
}

impl KeptPatches {
    pub fn all(dims: GridDims) -> Self {
        Self::from_rows_cols(
            dims,
            &(0..dims.freq).collect::<Vec<_>>(),
            &(0..dims.time).collect::<Vec<_>>(),
        )
    }

    /// Cartesian product of kept rows and kept columns.
    pub fn from_rows_cols(dims: GridDims, rows: &[usize], cols: &[usize]) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * cols.len());
        for &f in rows {
            for &t in cols {
                indices.push((f, t));
            }
        }
        indices.sort_unstable();
        Self { dims, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn rows(&self) -> BTreeSet<usize> {
        self.indices.iter().map(|&(f, _)| f).collect()
    }

    pub fn cols(&self) -> BTreeSet<usize> {
        self.indices.iter().map(|&(_, t)| t).collect()
    }

    pub fn intersect(&self, other: &KeptPatches) -> KeptPatches {
        let theirs: BTreeSet<_> = other.indices.iter().copied().collect();
        KeptPatches {
            dims: self.dims,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|p| theirs.contains(p))
                .collect(),
        }
    }
}

/// Training patchout: removes `f_drop` random frequency rows and `t_drop` random time columns.
pub fn training_patchout<R: Rng + ?Sized>(
    dims: GridDims,
    f_drop: usize,
    t_drop: usize,
    rng: &mut R,
) -> Result<KeptPatches> {
    if f_drop >= dims.freq || t_drop >= dims.time {
        return Err(Error::Config(format!(
            "cannot drop {f_drop} of {} rows and {t_drop} of {} columns",
            dims.freq, dims.time
        )));
    }
    let mut rows: Vec<usize> = sample(rng, dims.freq, dims.freq - f_drop).into_vec();
    let mut cols: Vec<usize> = sample(rng, dims.time, dims.time - t_drop).into_vec();
    rows.sort_unstable();
    cols.sort_unstable();
    Ok(KeptPatches::from_rows_cols(dims, &rows, &cols))
}

/// Temporal patchout for a segment of `segment_s` seconds, scaled linearly from
/// `base_t_drop` columns at 5 s.
pub fn scale_temporal_patchout(base_t_drop: usize, segment_s: f64) -> Result<usize> {
    if !(segment_s > 0.0) {
        return Err(Error::Config(format!("segment length {segment_s} s")));
    }
    Ok((base_t_drop as f64 * segment_s / 5.0).round() as usize)
}

/// Keeps time columns `phase, phase + T, phase + 2T, …` and every frequency row.
pub fn inference_patchout_time(dims: GridDims, t_keep: usize, phase: usize) -> Result<KeptPatches> {
    if t_keep < 1 {
        return Err(Error::Config("t_keep must be at least 1".into()));
    }
    if phase >= t_keep || phase >= dims.time {
        return Err(Error::Config(format!(
            "phase {phase} invalid for T={t_keep}"
        )));
    }
    let cols: Vec<usize> = (phase..dims.time).step_by(t_keep).collect();
    let rows: Vec<usize> = (0..dims.freq).collect();
    Ok(KeptPatches::from_rows_cols(dims, &rows, &cols))
}

/// Frequency rows removed by the edge-row rule: 3 drops the first and the two
/// last rows, 4 drops the two first and the two last.
pub fn edge_rows(freq: usize, n_rows: usize) -> Result<Vec<usize>> {
    if n_rows == 0 {
        return Ok(Vec::new());
    }
    if freq <= n_rows {
        return Err(Error::Config(format!(
            "cannot drop {n_rows} of {freq} rows"
        )));
    }
    let leading = n_rows / 2;
    let trailing = n_rows - leading;
    let mut rows: Vec<usize> = (0..leading).collect();
    rows.extend(freq - trailing..freq);
    Ok(rows)
}

pub fn inference_patchout_freq(dims: GridDims, n_rows: usize) -> Result<KeptPatches> {
    let dropped = edge_rows(dims.freq, n_rows)?;
    drop_rows(dims, &dropped)
}

/// Removes an explicit set of frequency rows.
pub fn drop_rows(dims: GridDims, dropped: &[usize]) -> Result<KeptPatches> {
    if let Some(&r) = dropped.iter().find(|&&r| r >= dims.freq) {
        return Err(Error::Index(format!(
            "row {r} outside grid of {} rows",
            dims.freq
        )));
    }
    let rows: Vec<usize> = (0..dims.freq).filter(|r| !dropped.contains(r)).collect();
    let cols: Vec<usize> = (0..dims.time).collect();
    Ok(KeptPatches::from_rows_cols(dims, &rows, &cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchoutMode {
    #[default]
    None,
    TrainingRandom,
    InferenceTimeKeep,
    InferenceFreqDrop,
}

/// Patchout settings as they appear under `[patchout]` in run configs.
///
/// Both inference modes honor `t_keep` and `f_rows` together, so a single
/// spec can express a combined time/frequency setting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchoutSpec {
    pub mode: PatchoutMode,
    pub f_drop: usize,
    pub t_drop: usize,
    pub t_keep: usize,
    pub f_rows: Vec<usize>,
    pub phase: usize,
}

impl Default for PatchoutSpec {
    fn default() -> Self {
        Self {
            mode: PatchoutMode::None,
            f_drop: 0,
            t_drop: 0,
            t_keep: 1,
            f_rows: Vec::new(),
            phase: 0,
        }
    }
}

impl PatchoutSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn training(f_drop: usize, t_drop: usize) -> Self {
        Self {
            mode: PatchoutMode::TrainingRandom,
            f_drop,
            t_drop,
            ..Self::default()
        }
    }

    pub fn inference(t_keep: usize, f_rows: Vec<usize>) -> Self {
        let mode = if f_rows.is_empty() {
            PatchoutMode::InferenceTimeKeep
        } else {
            PatchoutMode::InferenceFreqDrop
        };
        Self {
            mode,
            t_keep,
            f_rows,
            ..Self::default()
        }
    }

    /// Resolves the kept patch set for a grid. Only the training mode consumes randomness.
    pub fn kept<R: Rng + ?Sized>(&self, dims: GridDims, rng: &mut R) -> Result<KeptPatches> {
        match self.mode {
            PatchoutMode::None => Ok(KeptPatches::all(dims)),
            PatchoutMode::TrainingRandom => training_patchout(dims, self.f_drop, self.t_drop, rng),
            PatchoutMode::InferenceTimeKeep | PatchoutMode::InferenceFreqDrop => {
                let time = inference_patchout_time(dims, self.t_keep, self.phase)?;
                let freq = drop_rows(dims, &self.f_rows)?;
                Ok(time.intersect(&freq))
            }
        }
    }

    /// Kept set for deterministic modes; training mode is rejected.
    pub fn kept_deterministic(&self, dims: GridDims) -> Result<KeptPatches> {
        if self.mode == PatchoutMode::TrainingRandom {
            return Err(Error::Config("training patchout needs an rng".into()));
        }
        self.kept(
            dims,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )
    }
}

/// Split positional encodings: one table indexed by time column and one by frequency row.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalTables<T> {
    /// `[time_rows × d]`
    pub time: Vec<T>,
    /// `[freq_rows × d]`
    pub freq: Vec<T>,
    pub d: usize,
}

impl<T: Scalar> PositionalTables<T> {
    pub fn zeros(max: GridDims, d: usize) -> Self {
        Self {
            time: vec![T::zero(); max.time * d],
            freq: vec![T::zero(); max.freq * d],
            d,
        }
    }

    pub fn time_rows(&self) -> usize {
        self.time.len() / self.d
    }

    pub fn freq_rows(&self) -> usize {
        self.freq.len() / self.d
    }
}

/// Linear resampling of a `[src_rows × d]` table to `dst_rows` rows over the
/// normalized coordinate `[0, 1]`. Endpoint rows are copied exactly.
pub fn interpolate_positional<T: Scalar>(table: &[T], d: usize, dst_rows: usize) -> Result<Vec<T>> {
    if d == 0 || !table.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "table of {} values is not a multiple of d={d}",
            table.len()
        )));
    }
    let src_rows = table.len() / d;
    if src_rows < 2 {
        return Err(Error::Config(format!(
            "need at least 2 source rows, got {src_rows}"
        )));
    }
    if dst_rows < 1 {
        return Err(Error::Config("need at least 1 target row".into()));
    }
    if dst_rows == src_rows {
        return Ok(table.to_vec());
    }
    let mut out = Vec::with_capacity(dst_rows * d);
    for i in 0..dst_rows {
        let pos = if dst_rows == 1 {
            0.0
        } else {
            (i * (src_rows - 1)) as f64 / (dst_rows - 1) as f64
        };
        let lo = pos.floor() as usize;
        let w = pos - lo as f64;
        if w == 0.0 {
            out.extend_from_slice(&table[lo * d..(lo + 1) * d]);
        } else {
            let (a, b) = (
                &table[lo * d..(lo + 1) * d],
                &table[(lo + 1) * d..(lo + 2) * d],
            );
            let w = T::from_f64(w);
            out.extend(a.iter().zip(b).map(|(&a, &b)| a + (b - a) * w));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenTag {
    Cls,
    Dist,
    Patch { freq: usize, time: usize },
}

/// Ordered `d`-dimensional tokens. Positions 0 and 1 hold CLS and DIST.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub d: usize,
    /// `[len × d]` row-major
    pub data: Vec<T>,
    pub tags: Vec<TokenTag>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn token(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Index of the first patch token (2 for well-formed sequences).
    pub fn patch_start(&self) -> usize {
        self.tags
            .iter()
            .position(|t| matches!(t, TokenTag::Patch { .. }))
            .unwrap_or(self.tags.len())
    }

    /// Mean of the patch tokens, excluding CLS and DIST.
    pub fn patch_mean(&self) -> Vec<T> {
        let mut acc = vec![T::zero(); self.d];
        let mut n = 0usize;
        for (i, tag) in self.tags.iter().enumerate() {
            if matches!(tag, TokenTag::Patch { .. }) {
                for (a, &v) in acc.iter_mut().zip(self.token(i)) {
                    *a += v;
                }
                n += 1;
            }
        }
        if n > 0 {
            let inv = T::one() / T::from_f64(n as f64);
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        acc
    }

    /// Checks the CLS/DIST layout invariant.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.tags.len() * self.d {
            return Err(Error::Shape(format!(
                "{} values for {} tokens of width {}",
                self.data.len(),
                self.tags.len(),
                self.d
            )));
        }
        let cls = self.tags.iter().filter(|t| **t == TokenTag::Cls).count();
        let dist = self.tags.iter().filter(|t| **t == TokenTag::Dist).count();
        if cls != 1 || dist != 1 || self.tags[0] != TokenTag::Cls || self.tags[1] != TokenTag::Dist
        {
            return Err(Error::Shape(
                "CLS and DIST must sit at positions 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the input sequence: `[cls, dist, proj(x_ft) + time[t] + freq[f] …]`
/// over the kept patches in row-major order.
pub fn assemble_k0<T: Scalar>(
    grid: &PatchGrid,
    keep: &KeptPatches,
    proj: &Linear<T>,
    tables: &PositionalTables<T>,
    cls: &[T],
    dist: &[T],
) -> Result<TokenSequence<T>> {
    let d = proj.d_out;
    let plen = grid.cfg.patch_len();
    if proj.d_in != plen || tables.d != d || cls.len() != d || dist.len() != d {
        return Err(Error::Shape(format!(
            "projector {}→{}, tables d={}, cls {}, dist {} for patch length {plen}",
            proj.d_in,
            proj.d_out,
            tables.d,
            cls.len(),
            dist.len()
        )));
    }
    if grid.dims.time > tables.time_rows() || grid.dims.freq > tables.freq_rows() {
        return Err(Error::Shape(format!(
            "grid {:?} exceeds positional tables ({} freq × {} time rows)",
            grid.dims,
            tables.freq_rows(),
            tables.time_rows()
        )));
    }
    if let Some(&(f, t)) = keep
        .indices
        .iter()
        .find(|&&(f, t)| f >= grid.dims.freq || t >= grid.dims.time)
    {
        return Err(Error::Index(format!(
            "patch ({f}, {t}) outside grid {:?}",
            grid.dims
        )));
    }
    let n = keep.len();
    let mut x = Vec::with_capacity(n * plen);
    for &(f, t) in &keep.indices {
        x.extend(grid.patch(f, t).iter().map(|&v| T::from_f32(v)));
    }
    let projected = proj.forward(&x, n);
    let mut data = Vec::with_capacity((n + 2) * d);
    data.extend_from_slice(cls);
    data.extend_from_slice(dist);
    let mut tags = vec![TokenTag::Cls, TokenTag::Dist];
    for (i, &(f, t)) in keep.indices.iter().enumerate() {
        let p = &projected[i * d..(i + 1) * d];
        let te = &tables.time[t * d..(t + 1) * d];
        let fe = &tables.freq[f * d..(f + 1) * d];
        data.extend((0..d).map(|j| p[j] + te[j] + fe[j]));
        tags.push(TokenTag::Patch { freq: f, time: t });
    }
    Ok(TokenSequence { d, data, tags })
}
