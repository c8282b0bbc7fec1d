mod common;

use common::{toy_config, toy_data, toy_model, toy_train_config};
use maest::model::ModelWeights;
use maest::patchgrid::GridDims;
use maest::train::{
    adam_step, balanced_sample, bce_grad, bce_loss, fit, mixup, swa_update, write_metrics_log,
    AdamState, Corpus, LabelStats, SwaState, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_corpus() -> (common::ToyData, Corpus) {
    let data = toy_data(40, 5);
    let corpus = Corpus::from_store(&data.store, &data.train, &data.valid, None).unwrap();
    (data, corpus)
}

#[test]
fn fit_is_reproducible_for_a_seed() {
    let (_data, corpus) = small_corpus();
    let cfg = TrainConfig {
        epoch_sample: 16,
        swa_start: 1,
        swa_interval: 1,
        ..toy_train_config(2, 9)
    };
    let run = |cfg: &TrainConfig| fit(&corpus, &toy_model(), cfg, None, |_| {}).unwrap();
    let (a, b) = (run(&cfg), run(&cfg));
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    write_metrics_log(&mut la, &a.log).unwrap();
    write_metrics_log(&mut lb, &b.log).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.final_weights, b.final_weights);
    assert_eq!(a.swa_weights, b.swa_weights);

    let c = run(&TrainConfig { seed: 10, ..cfg });
    assert_ne!(a.final_weights, c.final_weights);
}

#[test]
fn zero_head_starts_at_log_two() {
    let (_data, corpus) = small_corpus();
    let model = toy_model();
    let mut init =
        ModelWeights::<f32>::init_random(&model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    init.head.weight.iter_mut().for_each(|v| *v = 0.0);
    init.head.bias.iter_mut().for_each(|v| *v = 0.0);
    // one step per epoch, taken at lr_at(0) = 0
    let cfg = TrainConfig {
        epoch_sample: 16,
        batch_size: 16,
        ..toy_train_config(1, 3)
    };
    let out = fit(&corpus, &model, &cfg, Some(init.clone()), |_| {}).unwrap();
    assert!((out.log[0].train_loss - std::f64::consts::LN_2).abs() < 1e-6);
    assert_eq!(out.log[0].lr, 0.0);
    assert_eq!(out.final_weights, init);
}

#[test]
fn fit_rejects_mismatched_inputs() {
    let (_data, corpus) = small_corpus();
    let narrow = toy_config(32, 2, 4, GridDims { freq: 9, time: 9 }, 2);
    assert!(fit(&corpus, &narrow, &toy_train_config(1, 0), None, |_| {}).is_err());
    let other = toy_config(16, 1, 2, GridDims { freq: 9, time: 9 }, 4);
    let w = ModelWeights::<f32>::zeros(&other).unwrap();
    assert!(fit(
        &corpus,
        &toy_model(),
        &toy_train_config(1, 0),
        Some(w),
        |_| {}
    )
    .is_err());
}

#[test]
fn metrics_callback_sees_every_epoch() {
    let (_data, corpus) = small_corpus();
    let cfg = TrainConfig {
        epoch_sample: 16,
        swa_start: 2,
        swa_interval: 2,
        ..toy_train_config(3, 1)
    };
    let mut seen = Vec::new();
    let out = fit(&corpus, &toy_model(), &cfg, None, |m| seen.push(m.clone())).unwrap();
    assert_eq!(seen, out.log);
    assert_eq!(
        seen.iter().map(|m| m.epoch).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    assert_eq!(
        seen.iter().map(|m| m.swa).collect::<Vec<_>>(),
        vec![false, true, false]
    );
    assert!(seen.iter().all(|m| m.val_roc_auc.is_some()));
}

fn tiny() -> maest::model::ModelConfig {
    toy_config(4, 1, 2, GridDims { freq: 1, time: 2 }, 2)
}

fn filled(v: f64) -> ModelWeights<f64> {
    let mut w = ModelWeights::<f64>::zeros(&tiny()).unwrap();
    w.slots_mut()
        .into_iter()
        .for_each(|s| s.iter_mut().for_each(|x| *x = v));
    w
}

#[test]
fn swa_examples() {
    let mut s = SwaState::new(1, 1);
    for _ in 0..3 {
        swa_update(&mut s, &filled(0.7)).unwrap();
    }
    assert_eq!(s.avg.as_ref().unwrap(), &filled(0.7));

    let mut s = SwaState::new(1, 1);
    swa_update(&mut s, &filled(1.0)).unwrap();
    swa_update(&mut s, &filled(3.0)).unwrap();
    assert_eq!(s.avg.as_ref().unwrap(), &filled(2.0));
    assert_eq!(s.n_models, 2);

    let other =
        ModelWeights::<f64>::zeros(&toy_config(8, 1, 2, GridDims { freq: 1, time: 2 }, 2)).unwrap();
    assert!(swa_update(&mut s, &other).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn swa_equals_batch_mean(seed in 0u64..1000, n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snaps: Vec<ModelWeights<f64>> = (0..n)
            .map(|_| {
                let mut w = filled(0.0);
                w.slots_mut().into_iter().for_each(|s| s.iter_mut().for_each(|x| *x = rng.random_range(-5.0..5.0)));
                w
            })
            .collect();
        let mut s = SwaState::new(1, 1);
        for w in &snaps {
            swa_update(&mut s, w).unwrap();
        }
        let avg = s.avg.unwrap();
        for (ti, slot) in avg.slots().into_iter().enumerate() {
            for (j, &v) in slot.iter().enumerate() {
                let mean = snaps.iter().map(|w| w.slots()[ti][j]).sum::<f64>() / n as f64;
                prop_assert!((v - mean).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn sampler_never_repeats(seed in 0u64..1000, n_tracks in 1usize..60, n_labels in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Vec<u32>> = (0..n_tracks)
            .map(|_| (0..rng.random_range(0..3)).map(|_| rng.random_range(0..n_labels as u32)).collect())
            .collect();
        let stats = LabelStats::from_label_sets(&labels, n_labels).unwrap();
        let n = rng.random_range(0..=n_tracks);
        let picked = balanced_sample(&labels, &stats, n, &mut rng).unwrap();
        prop_assert_eq!(picked.len(), n);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n);
        prop_assert!(picked.iter().all(|&i| i < n_tracks));
    }

    #[test]
    fn mixup_is_convex(seed in 0u64..1000, batch in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f32>> = (0..batch).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f32>> = (0..batch).map(|_| (0..3).map(|_| rng.random_range(0..2) as f32).collect()).collect();
        let m = mixup(&x, &y, 0.3, &mut rng).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.lambda));
        let l = m.lambda as f32;
        for i in 0..batch {
            let j = m.perm[i];
            for k in 0..5 {
                prop_assert!((m.x[i][k] - (l * x[i][k] + (1.0 - l) * x[j][k])).abs() < 1e-6);
            }
            for k in 0..3 {
                prop_assert!((0.0..=1.0).contains(&m.y[i][k]));
            }
        }
    }
}

#[test]
fn adam_on_a_logistic_toy_decreases_the_loss() {
    // one-feature logistic regression, labels y = [x > 0]
    let xs: Vec<f64> = (0..40).map(|i| (i as f64 - 19.5) / 10.0).collect();
    let ys: Vec<f32> = xs.iter().map(|&x| (x > 0.0) as u8 as f32).collect();
    let mut w = vec![0.0f64];
    let mut b = vec![0.0f64];
    let mut state = AdamState::<f64>::for_shapes([1, 1]);
    let loss = |w: f64, b: f64| {
        let z: Vec<f64> = xs.iter().map(|x| w * x + b).collect();
        bce_loss(&z, &ys).unwrap()
    };
    let mut prev = loss(w[0], b[0]);
    assert!((prev - std::f64::consts::LN_2).abs() < 1e-12);
    for _ in 0..200 {
        let z: Vec<f64> = xs.iter().map(|x| w[0] * x + b[0]).collect();
        let g = bce_grad(&z, &ys).unwrap();
        let gw = vec![g.iter().zip(&xs).map(|(g, x)| g * x).sum::<f64>()];
        let gb = vec![g.iter().sum::<f64>()];
        adam_step(&mut [&mut w, &mut b], &[&gw, &gb], &mut state, 1e-2, 0.0).unwrap();
        let now = loss(w[0], b[0]);
        assert!(now < prev, "{now} >= {prev}");
        prev = now;
    }
    assert!(prev < 0.3);
}
