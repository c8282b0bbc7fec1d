//! Extraction throughput under inference patchout, with optional frozen-probe
//! accuracy per setting.
//!
//! Throughput is audio-seconds encoded per wall-clock second. Only orderings
//! and ratios between settings are meaningful across machines.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::melfront::MelSpectrogram;
use crate::model::{EmbeddingSpec, ModelWeights};
use crate::patchgrid::{
    assemble_k0, edge_rows, slice_patches, KeptPatches, PatchGrid, PatchoutSpec,
};
use crate::probe::{map_macro, mlp_fit, track_embedding, EmbeddingDataset, ProbeConfig, SplitData};

/// Keep every `t_keep`-th time column and drop `f_rows` edge frequency rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSetting {
    pub t_keep: usize,
    pub f_rows: usize,
}

impl BenchSetting {
    pub fn label(&self) -> String {
        format!("T{}-F{}", self.t_keep, self.f_rows)
    }

    pub fn patchout(&self, freq: usize) -> Result<PatchoutSpec> {
        let rows = if self.f_rows == 0 {
            Vec::new()
        } else {
            edge_rows(freq, self.f_rows)?
        };
        Ok(PatchoutSpec::inference(self.t_keep, rows))
    }

    pub fn kept(&self, grid: &PatchGrid) -> Result<KeptPatches> {
        self.patchout(grid.dims.freq)?.kept_deterministic(grid.dims)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub t_keep: Vec<usize>,
    pub freq_rows: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    /// Recorded with every row; the timed kernels run on the calling thread.
    pub threads: usize,
    /// Batches are enlarged until one repetition takes at least this long.
    pub min_rep_seconds: f64,
    pub max_batch: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            t_keep: vec![1, 2, 3, 5, 10],
            freq_rows: vec![0, 3, 4],
            repetitions: 5,
            warmup: 1,
            threads: 1,
            min_rep_seconds: 0.05,
            max_batch: 256,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 3 || self.warmup < 1 {
            return Err(Error::Config(
                "bench needs repetitions >= 3 and warmup >= 1".into(),
            ));
        }
        if self.t_keep.is_empty() || self.freq_rows.is_empty() || self.t_keep.contains(&0) {
            return Err(Error::Config(
                "bench grid needs positive t_keep values and freq_rows".into(),
            ));
        }
        if self.max_batch == 0 {
            return Err(Error::Config("max_batch must be positive".into()));
        }
        Ok(())
    }

    /// Settings ordered by frequency rows, then `t_keep`.
    pub fn settings(&self) -> Vec<BenchSetting> {
        self.freq_rows
            .iter()
            .flat_map(|&f_rows| {
                self.t_keep
                    .iter()
                    .map(move |&t_keep| BenchSetting { t_keep, f_rows })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub setting: String,
    pub t_keep: usize,
    pub f_rows: usize,
    /// Kept patches plus the CLS and DIST tokens.
    pub kept_tokens: usize,
    pub batch: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub throughput_median: f64,
    pub throughput_iqr: f64,
    pub map: Option<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn encode_once<T: Scalar>(
    weights: &ModelWeights<T>,
    grid: &PatchGrid,
    keep: &KeptPatches,
) -> Result<()> {
    let k0 = assemble_k0(
        grid,
        keep,
        &weights.patch_embed,
        &weights.pos,
        &weights.cls,
        &weights.dist,
    )?;
    let (x, _) = weights.encode(&k0, weights.cfg.n_blocks, &[])?;
    std::hint::black_box(x);
    Ok(())
}

/// Times token assembly plus every encoder block for one patch grid.
/// `audio_seconds` is the duration the grid represents.
pub fn measure_throughput<T: Scalar>(
    weights: &ModelWeights<T>,
    grid: &PatchGrid,
    audio_seconds: f64,
    setting: BenchSetting,
    cfg: &BenchConfig,
) -> Result<BenchRow> {
    cfg.validate()?;
    let keep = setting.kept(grid)?;
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "setting {} keeps no patches",
            setting.label()
        )));
    }
    let mut single = f64::INFINITY;
    for _ in 0..cfg.warmup {
        let t0 = Instant::now();
        encode_once(weights, grid, &keep)?;
        single = single.min(t0.elapsed().as_secs_f64());
    }
    let batch = if single >= cfg.min_rep_seconds {
        1
    } else {
        ((cfg.min_rep_seconds / single.max(1e-9)).ceil() as usize).clamp(1, cfg.max_batch)
    };
    let mut rates = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let t0 = Instant::now();
        for _ in 0..batch {
            encode_once(weights, grid, &keep)?;
        }
        let secs = t0.elapsed().as_secs_f64().max(1e-12);
        rates.push(audio_seconds * batch as f64 / secs);
    }
    rates.sort_by(f64::total_cmp);
    Ok(BenchRow {
        setting: setting.label(),
        t_keep: setting.t_keep,
        f_rows: setting.f_rows,
        kept_tokens: keep.len() + 2,
        batch,
        repetitions: cfg.repetitions,
        threads: cfg.threads,
        throughput_median: quantile(&rates, 0.5),
        throughput_iqr: quantile(&rates, 0.75) - quantile(&rates, 0.25),
        map: None,
    })
}

/// Normalized spectrograms with multi-hot labels for the frozen-probe check.
#[derive(Debug, Clone)]
pub struct ProbeBench {
    pub train: Vec<(MelSpectrogram, Vec<u8>)>,
    pub valid: Vec<(MelSpectrogram, Vec<u8>)>,
    pub test: Vec<(MelSpectrogram, Vec<u8>)>,
    pub n_labels: usize,
    pub espec: EmbeddingSpec,
    pub probe: ProbeConfig,
    pub seed: u64,
}

fn embed_split<T: Scalar>(
    tracks: &[(MelSpectrogram, Vec<u8>)],
    weights: &ModelWeights<T>,
    espec: &EmbeddingSpec,
    patchout: &PatchoutSpec,
) -> Result<SplitData> {
    let mut out = SplitData::default();
    for (i, (spec, y)) in tracks.iter().enumerate() {
        out.ids.push(format!("t{i}"));
        out.x
            .extend(track_embedding(spec, weights, espec, patchout)?.values);
        out.y.extend_from_slice(y);
    }
    Ok(out)
}

/// One row per setting. With a probe set, the probe is trained once on
/// unpatched embeddings and then scored, frozen, on test embeddings
/// re-extracted under each setting.
pub fn sweep<T: Scalar>(
    weights: &ModelWeights<T>,
    input: &MelSpectrogram,
    cfg: &BenchConfig,
    probe: Option<&ProbeBench>,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let grid = slice_patches(input, &weights.cfg.patch)?;
    let audio_seconds = input.frame_count as f64 * input.hop_ms as f64 / 1000.0;
    let frozen = match probe {
        Some(p) => {
            let none = PatchoutSpec::none();
            let ds = EmbeddingDataset {
                espec: p.espec.clone(),
                model_id: "bench".into(),
                dim: p.espec.output_dim(weights.cfg.d),
                n_labels: p.n_labels,
                train: embed_split(&p.train, weights, &p.espec, &none)?,
                valid: embed_split(&p.valid, weights, &p.espec, &none)?,
                test: embed_split(&p.test, weights, &p.espec, &none)?,
            };
            Some((p, mlp_fit(&ds, &p.probe, p.seed)?.weights))
        }
        None => None,
    };
    let mut rows = Vec::new();
    for setting in cfg.settings() {
        let mut row = measure_throughput(weights, &grid, audio_seconds, setting, cfg)?;
        if let Some((p, w)) = &frozen {
            let test_grid = p
                .test
                .first()
                .map(|(s, _)| slice_patches(s, &weights.cfg.patch))
                .transpose()?;
            let freq = test_grid.map_or(grid.dims.freq, |g| g.dims.freq);
            let test = embed_split(&p.test, weights, &p.espec, &setting.patchout(freq)?)?;
            let scores = w.predict(&test.x, test.len());
            row.map = Some(map_macro(&scores, &test.y, p.n_labels)?.value);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn emit_report(
    rows: &[BenchRow],
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no bench rows".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> BenchRow {
        BenchRow {
            setting: format!("T{i}-F0"),
            t_keep: i,
            f_rows: 0,
            kept_tokens: 100 / i + 2,
            batch: 3,
            repetitions: 5,
            threads: 1,
            throughput_median: 123.456789 * i as f64 + 1e-9,
            throughput_iqr: 0.1 / 3.0,
            map: if i.is_multiple_of(2) {
                Some(0.25 + 1.0 / 7.0)
            } else {
                None
            },
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn settings_cover_grid() {
        let cfg = BenchConfig::default();
        let s = cfg.settings();
        assert_eq!(s.len(), 15);
        assert_eq!(
            s[1],
            BenchSetting {
                t_keep: 2,
                f_rows: 0
            }
        );
        assert_eq!(s[1].label(), "T2-F0");
        let bad = BenchConfig {
            repetitions: 2,
            ..BenchConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<BenchRow> = (1..=15).map(row).collect();
        let (csv_path, json_path) = emit_report(&rows, dir.path(), "bench").unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 16);
        assert!(text.starts_with(
            "setting,t_keep,f_rows,kept_tokens,batch,repetitions,threads,throughput_median,throughput_iqr,map"
        ));
        assert_eq!(read_report_csv(&csv_path).unwrap(), rows);
        let back: Vec<BenchRow> =
            serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(back, rows);
        assert!(matches!(
            emit_report(&[], dir.path(), "x"),
            Err(Error::EmptyInput(_))
        ));
    }
}
