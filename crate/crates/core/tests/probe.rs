mod common;

use common::{random_spectrogram, random_weights, toy_config};
use maest::melfront::MelSpectrogram;
use maest::model::{extract_embedding, EmbeddingSpec};
use maest::patchgrid::{GridDims, PatchoutSpec};
use maest::probe::{
    grid_search, map_macro, mlp_fit, mlp_fit_from, roc_auc_macro, track_embedding,
    EmbeddingDataset, ProbeConfig, ProbeGrid, ProbeWeights, SplitData,
};
use maest::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn auc_oracle(s: &[f64], y: &[bool]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

fn ap_oracle(s: &[f64], y: &[bool]) -> Option<f64> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return None;
    }
    let mut total = 0.0;
    for i in (0..s.len()).filter(|&i| y[i]) {
        let above = (0..s.len()).filter(|&k| s[k] >= s[i]).count();
        let hits = (0..s.len()).filter(|&k| s[k] >= s[i] && y[k]).count();
        total += hits as f64 / above as f64;
    }
    Some(total / pos as f64)
}

fn macro_oracle(
    scores: &[f64],
    labels: &[u8],
    l: usize,
    f: fn(&[f64], &[bool]) -> Option<f64>,
) -> Option<f64> {
    let vals: Vec<f64> = (0..l)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().skip(c).step_by(l).copied().collect();
            let y: Vec<bool> = labels.iter().skip(c).step_by(l).map(|&v| v != 0).collect();
            f(&s, &y)
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_pairwise_oracles(seed in 0u64..10_000, n in 1usize..120, l in 1usize..6, levels in 2u32..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // few distinct levels force ties
        let scores: Vec<f64> = (0..n * l).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n * l).map(|_| rng.random_range(0..2)).collect();
        match (roc_auc_macro(&scores, &labels, l), macro_oracle(&scores, &labels, l, auc_oracle)) {
            (Ok(m), Some(o)) => prop_assert!((m.value - o).abs() <= 1e-9),
            (Err(Error::DegenerateMetric), None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
        match (map_macro(&scores, &labels, l), macro_oracle(&scores, &labels, l, ap_oracle)) {
            (Ok(m), Some(o)) => prop_assert!((m.value - o).abs() <= 1e-9),
            (Err(Error::DegenerateMetric), None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps(seed in 0u64..10_000, n in 2usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        let a = roc_auc_macro(&scores, &labels, 1);
        let b = roc_auc_macro(&squashed, &labels, 1);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a.value - b.value).abs() < 1e-12);
        }
    }
}

#[test]
fn track_embedding_is_the_mean_over_half_overlapped_segments() {
    let dims = GridDims { freq: 2, time: 5 };
    let cfg = toy_config(8, 2, 2, dims, 2);
    let w = random_weights(&cfg, 3, 0.3);
    let seg = 56;
    let spec = random_spectrogram(26, 150, 4);
    let espec: EmbeddingSpec = "1:cls,2:avg".parse().unwrap();
    let none = PatchoutSpec::none();
    let got = track_embedding(&spec, &w, &espec, &none).unwrap();
    let mut want = vec![0.0f64; 16];
    for o in [0, 28, 56, 84] {
        let e = extract_embedding(&spec.frames(o, seg), &w, &espec, &none).unwrap();
        want.iter_mut()
            .zip(&e.values)
            .for_each(|(a, v)| *a += *v as f64 / 4.0);
    }
    for (a, b) in got.values.iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }

    // shorter than one segment: one zero-padded segment
    let short = random_spectrogram(26, 30, 5);
    let mut padded = MelSpectrogram::zeros(26, seg, 16);
    for b in 0..26 {
        for f in 0..30 {
            padded.set(b, f, short.get(b, f));
        }
    }
    let got = track_embedding(&short, &w, &espec, &none).unwrap();
    let want = extract_embedding(&padded, &w, &espec, &none).unwrap();
    assert_eq!(got.values, want.values);
}

/// Gaussian blobs, one per label, `n` rows per split.
fn blobs(n: [usize; 3], dim: usize, n_labels: usize, sep: f32, seed: u64) -> EmbeddingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |name: &str, rows: usize| {
        let mut d = SplitData::default();
        for i in 0..rows {
            let class = i % n_labels;
            d.ids.push(format!("{name}{i}"));
            for k in 0..dim {
                let centre = if k % n_labels == class { sep } else { 0.0 };
                d.x.push(centre + rng.random_range(-0.5..0.5));
            }
            d.y.extend((0..n_labels).map(|c| (c == class) as u8));
        }
        d
    };
    EmbeddingDataset {
        espec: "1:avg".parse().unwrap(),
        model_id: "blobs".into(),
        dim,
        n_labels,
        train: split("tr", n[0]),
        valid: split("va", n[1]),
        test: split("te", n[2]),
    }
}

fn quick() -> ProbeConfig {
    ProbeConfig {
        hidden: 32,
        epochs: 12,
        batch_size: 16,
        rise_epochs: 3,
        decay_epochs: 3,
        ..ProbeConfig::default()
    }
}

#[test]
fn separable_blobs_are_learned() {
    let ds = blobs([90, 30, 30], 6, 3, 2.0, 1);
    let fit = mlp_fit(&ds, &quick(), 0).unwrap();
    assert_eq!(fit.test.roc_auc, 1.0);
    assert_eq!(fit.test.map, 1.0);
    assert!(fit.valid_roc_auc >= 0.99);
    assert_eq!(fit.history.len(), 12);
    let best = fit.history[fit.best_epoch - 1].valid_roc_auc.unwrap();
    assert_eq!(best, fit.valid_roc_auc);
    assert!(fit.history.iter().all(|h| h.valid_roc_auc.unwrap() <= best));
}

#[test]
fn zero_output_layer_starts_at_log_two() {
    let ds = blobs([40, 10, 10], 5, 4, 1.0, 2);
    let cfg = quick();
    let mut init = ProbeWeights::init(5, cfg.hidden, 4, &mut ChaCha8Rng::seed_from_u64(0));
    init.fc2.weight.iter_mut().for_each(|v| *v = 0.0);
    init.fc2.bias.iter_mut().for_each(|v| *v = 0.0);
    let fit = mlp_fit_from(&ds, &cfg, init, 0).unwrap();
    assert!((fit.initial_loss - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn probe_is_reproducible_for_a_seed() {
    let ds = blobs([60, 20, 20], 4, 2, 0.6, 3);
    let a = mlp_fit(&ds, &quick(), 5).unwrap();
    let b = mlp_fit(&ds, &quick(), 5).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.history, b.history);
    let c = mlp_fit(&ds, &quick(), 6).unwrap();
    assert_ne!(a.weights, c.weights);
}

#[test]
fn missing_split_is_rejected() {
    let mut ds = blobs([20, 10, 10], 4, 2, 1.0, 4);
    ds.valid = SplitData::default();
    assert!(matches!(mlp_fit(&ds, &quick(), 0), Err(Error::Config(_))));
}

#[test]
fn grid_search_prefers_the_sane_learning_rate() {
    let ds = blobs([200, 100, 100], 2, 2, 0.3, 5);
    let grid = ProbeGrid {
        batch_size: vec![16],
        epochs: vec![12],
        dropout: vec![0.5],
        lr_max: vec![1e30, 1e-2],
    };
    let res = grid_search(&ds, &quick(), &grid, 0).unwrap();
    assert_eq!(res.rows.len(), 2);
    assert_eq!(res.winner().config.lr_max, 1e-2);
    assert!(res.rows[0].valid_roc_auc.is_none_or(|v| v < 0.6));
    assert_eq!(res.rows[1].seed, 1);
}

#[test]
fn full_grid_runs_every_cell() {
    let ds = blobs([24, 8, 8], 3, 2, 1.0, 6);
    let base = ProbeConfig {
        hidden: 8,
        ..ProbeConfig::default()
    };
    let res = grid_search(&ds, &base, &ProbeGrid::default(), 0).unwrap();
    assert_eq!(res.rows.len(), 144);
    let best = res.winner().valid_roc_auc.unwrap();
    let first_best = res
        .rows
        .iter()
        .position(|r| r.valid_roc_auc == Some(best))
        .unwrap();
    assert_eq!(res.best, first_best);
    assert!(res
        .rows
        .iter()
        .all(|r| r.valid_roc_auc.is_none_or(|v| v <= best)));
}

#[test]
fn dataset_files_round_trip() {
    let ds = blobs([7, 3, 2], 5, 3, 1.0, 7);
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(EmbeddingDataset::load(dir.path()).unwrap(), ds);
    std::fs::remove_file(dir.path().join("test.ids")).unwrap();
    assert!(matches!(
        EmbeddingDataset::load(dir.path()),
        Err(Error::NotFound(_))
    ));

    let mut dup = ds.clone();
    dup.test.ids[0] = dup.train.ids[0].clone();
    assert!(dup.save(tempfile::tempdir().unwrap().path()).is_err());
}
