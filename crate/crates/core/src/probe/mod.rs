//! Downstream evaluation: track-level embeddings from half-overlapped
//! segments, a single-hidden-layer MLP probe and tagging metrics.

pub mod metrics;
mod mlp;
mod sweep;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{evaluate, map_macro, roc_auc_macro, MacroMetric, MetricReport};
pub use mlp::{
    grid_search, mlp_fit, mlp_fit_from, probe_lr_at, EpochRecord, GridResult, GridRow, ProbeConfig,
    ProbeFit, ProbeGrid, ProbeWeights,
};
pub use sweep::{combination_name, sweep_blocks, sweep_espec, token_combinations, SweepMatrix};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::melfront::{normalize, MelSpectrogram, NormStats, SpectrogramStore};
use crate::model::{extract_embedding, Embedding, EmbeddingSpec, ModelWeights};
use crate::patchgrid::PatchoutSpec;
use crate::train::multi_hot;

/// Segment starts with hop `floor(seg/2)`; a track shorter than one segment
/// yields a single offset and is zero-padded on the right.
pub fn segment_offsets(frames: usize, seg_frames: usize) -> Vec<usize> {
    let seg = seg_frames.max(1);
    if frames <= seg {
        return vec![0];
    }
    let hop = (seg / 2).max(1);
    (0..)
        .map(|i| i * hop)
        .take_while(|&o| o + seg <= frames)
        .collect()
}

/// Frames seen by the model: the span of its positional time table.
pub fn model_segment_frames<T: Scalar>(weights: &ModelWeights<T>) -> usize {
    weights.cfg.patch.frames_for(weights.cfg.max_grid.time)
}

/// Mean of the segment embeddings of an already normalized spectrogram.
pub fn track_embedding<T: Scalar>(
    spec: &MelSpectrogram,
    weights: &ModelWeights<T>,
    espec: &EmbeddingSpec,
    patchout: &PatchoutSpec,
) -> Result<Embedding> {
    if spec.frame_count == 0 || spec.band_count == 0 {
        return Err(Error::EmptyInput("empty spectrogram".into()));
    }
    let seg = model_segment_frames(weights);
    let offsets = segment_offsets(spec.frame_count, seg);
    let mut acc = vec![0.0f64; espec.output_dim(weights.cfg.d)];
    for &o in &offsets {
        let e = extract_embedding(&spec.frames(o, seg), weights, espec, patchout)?;
        for (a, v) in acc.iter_mut().zip(&e.values) {
            *a += *v as f64;
        }
    }
    let n = offsets.len() as f64;
    Ok(Embedding {
        values: acc.into_iter().map(|v| (v / n) as f32).collect(),
        spec: espec.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Row-major features and multi-hot labels for one split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitData {
    pub ids: Vec<String>,
    pub x: Vec<f32>,
    pub y: Vec<u8>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize, dim: usize) -> &[f32] {
        &self.x[i * dim..(i + 1) * dim]
    }

    /// Keeps only the given feature columns.
    pub fn select_columns(&self, dim: usize, cols: &[usize]) -> SplitData {
        let x = (0..self.len())
            .flat_map(|i| {
                let r = self.row(i, dim);
                cols.iter().map(move |&c| r[c])
            })
            .collect();
        SplitData {
            ids: self.ids.clone(),
            x,
            y: self.y.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub espec: String,
    pub model_id: String,
    pub dim: usize,
    pub n_labels: usize,
    pub counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub espec: EmbeddingSpec,
    pub model_id: String,
    pub dim: usize,
    pub n_labels: usize,
    pub train: SplitData,
    pub valid: SplitData,
    pub test: SplitData,
}

impl EmbeddingDataset {
    pub fn split(&self, s: Split) -> &SplitData {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in Split::ALL {
            let d = self.split(s);
            if d.x.len() != d.len() * self.dim || d.y.len() != d.len() * self.n_labels {
                return Err(Error::Shape(format!(
                    "{} split sizes are inconsistent",
                    s.name()
                )));
            }
            for id in &d.ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Config(format!(
                        "track {id} appears in more than one split"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn require_splits(&self) -> Result<()> {
        for s in Split::ALL {
            if self.split(s).is_empty() {
                return Err(Error::Config(format!(
                    "embedding dataset has no {} split",
                    s.name()
                )));
            }
        }
        Ok(())
    }

    pub fn select_columns(&self, cols: &[usize]) -> EmbeddingDataset {
        EmbeddingDataset {
            espec: self.espec.clone(),
            model_id: self.model_id.clone(),
            dim: cols.len(),
            n_labels: self.n_labels,
            train: self.train.select_columns(self.dim, cols),
            valid: self.valid.select_columns(self.dim, cols),
            test: self.test.select_columns(self.dim, cols),
        }
    }

    /// Writes `manifest.json`, `<split>.f32`, `<split>.labels` and `<split>.ids`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = DatasetManifest {
            espec: self.espec.to_string(),
            model_id: self.model_id.clone(),
            dim: self.dim,
            n_labels: self.n_labels,
            counts: Split::ALL.map(|s| self.split(s).len()),
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text)?;
        for s in Split::ALL {
            let d = self.split(s);
            let bytes: Vec<u8> = d.x.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(format!("{}.f32", s.name())), bytes)?;
            fs::write(dir.join(format!("{}.labels", s.name())), &d.y)?;
            let mut ids = d.ids.join("\n");
            if !ids.is_empty() {
                ids.push('\n');
            }
            fs::write(dir.join(format!("{}.ids", s.name())), ids)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<u8>> {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(p.display().to_string()),
                _ => Error::Io(e),
            })
        };
        let manifest: DatasetManifest = serde_json::from_slice(&read("manifest.json")?)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let mut splits = Vec::new();
        for (k, s) in Split::ALL.iter().enumerate() {
            let raw = read(&format!("{}.f32", s.name()))?;
            if raw.len() % 4 != 0 {
                return Err(Error::Format(format!(
                    "{}.f32 is not a whole number of floats",
                    s.name()
                )));
            }
            let x: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let y = read(&format!("{}.labels", s.name()))?;
            let ids_text = String::from_utf8(read(&format!("{}.ids", s.name()))?)
                .map_err(|_| Error::Format("track ids are not UTF-8".into()))?;
            let ids: Vec<String> = ids_text.lines().map(str::to_owned).collect();
            if ids.len() != manifest.counts[k] {
                return Err(Error::Format(format!(
                    "{} split lists {} ids, manifest says {}",
                    s.name(),
                    ids.len(),
                    manifest.counts[k]
                )));
            }
            splits.push(SplitData { ids, x, y });
        }
        let test = splits.pop().unwrap_or_default();
        let valid = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        let ds = EmbeddingDataset {
            espec: manifest.espec.parse()?,
            model_id: manifest.model_id,
            dim: manifest.dim,
            n_labels: manifest.n_labels,
            train,
            valid,
            test,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Track-level embeddings for each split, extracted in parallel per track.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset<T: Scalar>(
    store: &SpectrogramStore,
    splits: [&[String]; 3],
    weights: &ModelWeights<T>,
    espec: &EmbeddingSpec,
    patchout: &PatchoutSpec,
    stats: &NormStats,
    n_labels: usize,
    model_id: &str,
) -> Result<EmbeddingDataset> {
    espec.validate(weights.cfg.n_blocks)?;
    let dim = espec.output_dim(weights.cfg.d);
    let build = |ids: &[String]| -> Result<SplitData> {
        let rows = ids
            .par_iter()
            .map(|id| {
                let spec = normalize(&store.read(id)?, stats)?;
                let e = track_embedding(&spec, weights, espec, patchout)?;
                let y: Vec<u8> = multi_hot(store.labels(id)?, n_labels)
                    .into_iter()
                    .map(|v| v as u8)
                    .collect();
                Ok((e.values, y))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = SplitData {
            ids: ids.to_vec(),
            ..Default::default()
        };
        for (x, y) in rows {
            out.x.extend(x);
            out.y.extend(y);
        }
        Ok(out)
    };
    let ds = EmbeddingDataset {
        espec: espec.clone(),
        model_id: model_id.to_owned(),
        dim,
        n_labels,
        train: build(splits[0])?,
        valid: build(splits[1])?,
        test: build(splits[2])?,
    };
    ds.validate()?;
    Ok(ds)
}
