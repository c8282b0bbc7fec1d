mod common;

use common::{random_spectrogram, random_weights, toy_config};
use maest::benchkit::{measure_throughput, sweep, BenchConfig, BenchSetting};
use maest::melfront::MelSpectrogram;
use maest::model::ModelWeights;
use maest::patchgrid::{edge_rows, slice_patches, GridDims, PatchConfig};

fn quick() -> BenchConfig {
    BenchConfig {
        repetitions: 3,
        min_rep_seconds: 0.005,
        ..BenchConfig::default()
    }
}

fn brute_force_tokens(dims: GridDims, s: BenchSetting) -> usize {
    let dropped = edge_rows(dims.freq, s.f_rows).unwrap();
    let mut n = 0;
    for f in 0..dims.freq {
        for t in 0..dims.time {
            if !dropped.contains(&f) && t % s.t_keep == 0 {
                n += 1;
            }
        }
    }
    n + 2
}

#[test]
fn full_grid_token_counts() {
    // 30 s at 16 ms hop
    let spec = MelSpectrogram::zeros(96, 1874, 16);
    let grid = slice_patches(&spec, &PatchConfig::default()).unwrap();
    assert_eq!(grid.dims, GridDims { freq: 9, time: 186 });
    let s = |t, f| BenchSetting {
        t_keep: t,
        f_rows: f,
    };
    assert_eq!(s(2, 0).kept(&grid).unwrap().len() + 2, 839);
    assert_eq!(s(1, 0).kept(&grid).unwrap().len() + 2, 1676);
    for setting in BenchConfig::default().settings() {
        assert_eq!(
            setting.kept(&grid).unwrap().len() + 2,
            brute_force_tokens(grid.dims, setting)
        );
    }
}

#[test]
fn sweep_rows_follow_the_settings() {
    let dims = GridDims { freq: 9, time: 20 };
    let cfg = toy_config(16, 1, 2, dims, 2);
    let w: ModelWeights<f32> = random_weights(&cfg, 1, 0.1).cast();
    let spec = random_spectrogram(96, cfg.patch.frames_for(dims.time), 2);
    let rows = sweep(&w, &spec, &quick(), None).unwrap();
    assert_eq!(rows.len(), 15);
    for r in &rows {
        let setting = BenchSetting {
            t_keep: r.t_keep,
            f_rows: r.f_rows,
        };
        assert_eq!(r.kept_tokens, brute_force_tokens(dims, setting));
        assert_eq!(r.setting, setting.label());
        assert!(r.throughput_median > 0.0 && r.throughput_iqr >= 0.0);
        assert!(r.map.is_none());
        assert_eq!(r.repetitions, 3);
    }
    for f in [0, 3, 4] {
        let tokens: Vec<usize> = rows
            .iter()
            .filter(|r| r.f_rows == f)
            .map(|r| r.kept_tokens)
            .collect();
        assert!(tokens.windows(2).all(|p| p[1] < p[0]), "{tokens:?}");
    }
}

#[test]
fn short_repetitions_are_batched() {
    let dims = GridDims { freq: 2, time: 3 };
    let cfg = toy_config(8, 1, 2, dims, 2);
    let w: ModelWeights<f32> = random_weights(&cfg, 1, 0.1).cast();
    let spec = random_spectrogram(26, 36, 1);
    let grid = slice_patches(&spec, &cfg.patch).unwrap();
    let bc = BenchConfig {
        min_rep_seconds: 0.01,
        max_batch: 64,
        ..quick()
    };
    let row = measure_throughput(
        &w,
        &grid,
        0.576,
        BenchSetting {
            t_keep: 1,
            f_rows: 0,
        },
        &bc,
    )
    .unwrap();
    assert!(row.batch > 1 && row.batch <= 64);
}

#[test]
fn settings_that_keep_nothing_fail() {
    let dims = GridDims { freq: 3, time: 4 };
    let cfg = toy_config(8, 1, 2, dims, 2);
    let w: ModelWeights<f32> = random_weights(&cfg, 1, 0.1).cast();
    let spec = random_spectrogram(36, 46, 1);
    let bc = BenchConfig {
        freq_rows: vec![3],
        ..quick()
    };
    assert!(sweep(&w, &spec, &bc, None).is_err());
}
