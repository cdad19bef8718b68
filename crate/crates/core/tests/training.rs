use ndarray::{Array2, Array3, ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};
use num_complex::Complex32;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widebnet::geometry::GridSpec;
use widebnet::io::SampleData;
use widebnet::model::WideBNetConfig;
use widebnet::tensornet::Parameters;
use widebnet::training::*;

fn random_grid(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0..1.0))
}

#[test]
fn delta_smooths_to_a_discrete_gaussian() {
    let spec = LossSpec::default();
    assert_eq!(spec.radius(), 3);
    let mut eta = Array2::zeros((15, 15));
    eta[[7, 7]] = 1.0;
    let s = smooth_target(eta.view(), &spec).unwrap();
    let w: Vec<f64> = (-3..=3)
        .map(|k: i32| (-(k * k) as f64 / (2.0 * 0.5625)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    for di in -3i32..=3 {
        for dj in -3i32..=3 {
            let expect = w[(di + 3) as usize] * w[(dj + 3) as usize] / (total * total);
            let got = s[[(7 + di) as usize, (7 + dj) as usize]];
            assert!((got - expect).abs() < 1e-15);
        }
    }
    assert!((s.sum() - 1.0).abs() < 1e-14);
    assert_eq!(s[[7, 11]], 0.0);
}

#[test]
fn constant_images_are_preserved_in_the_interior() {
    let spec = LossSpec::default();
    let s = smooth_target(Array2::from_elem((12, 12), 0.7).view(), &spec).unwrap();
    for i in 3..9 {
        for j in 3..9 {
            assert!((s[[i, j]] - 0.7).abs() < 1e-14);
        }
    }
    assert!(s[[0, 0]] < 0.7);
}

#[test]
fn interior_mass_is_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut eta = Array2::zeros((16, 16));
    for i in 4..12 {
        for j in 4..12 {
            eta[[i, j]] = rng.random::<f64>();
        }
    }
    let s = smooth_target(eta.view(), &LossSpec::default()).unwrap();
    assert!((s.sum() - eta.sum()).abs() < 1e-12 * eta.sum());
}

#[test]
fn losses_match_direct_summation() {
    let spec = LossSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let (pred, eta) = (random_grid(10, &mut rng), random_grid(10, &mut rng));
        let t = smooth_target(eta.view(), &spec).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                num += (t[[i, j]] - pred[[i, j]]).powi(2);
                den += t[[i, j]].powi(2);
            }
        }
        assert!(
            (pixel_loss(pred.view(), eta.view(), &spec).unwrap() - num).abs()
                < 1e-12 * num.max(1.0)
        );
        assert!(
            (relative_loss(pred.view(), eta.view(), &spec).unwrap() - num / den).abs()
                < 1e-12 * (num / den).max(1.0)
        );
    }
}

#[test]
fn loss_identities() {
    let spec = LossSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eta = random_grid(8, &mut rng);
    let t = smooth_target(eta.view(), &spec).unwrap();
    assert_eq!(pixel_loss(t.view(), eta.view(), &spec).unwrap(), 0.0);
    assert_eq!(relative_loss(t.view(), eta.view(), &spec).unwrap(), 0.0);
    assert!(
        (relative_loss(Array2::zeros((8, 8)).view(), eta.view(), &spec).unwrap() - 1.0).abs()
            < 1e-15
    );

    let pred = random_grid(8, &mut rng);
    let once = pixel_loss(pred.view(), eta.view(), &spec).unwrap();
    let doubled = &t + &((&pred - &t) * 2.0);
    let twice = pixel_loss(doubled.view(), eta.view(), &spec).unwrap();
    assert!((twice - 4.0 * once).abs() < 1e-12 * twice);

    let r = relative_loss(pred.view(), eta.view(), &spec).unwrap();
    let rs = relative_loss((&pred * 3.5).view(), (&eta * 3.5).view(), &spec).unwrap();
    assert!((r - rs).abs() < 1e-12 * r);

    assert!(relative_loss(pred.view(), Array2::zeros((8, 8)).view(), &spec).is_err());
    assert!(pixel_loss(pred.view(), Array2::zeros((7, 8)).view(), &spec).is_err());
    assert!(LossSpec {
        width: 0.0,
        radius: None
    }
    .kernel()
    .is_err());
}

#[test]
fn staircase_schedule_values() {
    assert_eq!(lr_schedule(0), 5e-3);
    assert_eq!(lr_schedule(1999), 5e-3);
    assert_eq!(lr_schedule(2000), 5e-3 * 0.95);
    assert!((lr_schedule(4000) - 5e-3 * 0.95 * 0.95).abs() < 1e-18);
}

proptest! {
    #[test]
    fn schedule_only_jumps_at_multiples_of_the_interval(step in 1u64..1_000_000) {
        if step % 2000 != 0 {
            prop_assert_eq!(lr_schedule(step), lr_schedule(step - 1));
        } else {
            prop_assert!(lr_schedule(step) < lr_schedule(step - 1));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Weights(ArrayD<f64>);

impl Parameters<f64> for Weights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, f64>)) {
        f("w", self.0.view());
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'a, f64>)) {
        f("w", self.0.view_mut());
    }
}

fn scalar(v: f64) -> Weights {
    Weights(ArrayD::from_elem(IxDyn(&[1]), v))
}

#[test]
fn adam_leaves_parameters_unchanged_under_zero_gradients() {
    let mut p = Weights(ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, -2.0, 0.5]).unwrap());
    let before = p.clone();
    let mut state = OptimizerState::new(&p, AdamConfig::default());
    for _ in 0..10 {
        adam_step(&mut state, &mut p, &Weights(ArrayD::zeros(IxDyn(&[3])))).unwrap();
    }
    assert_eq!(p, before);
    assert_eq!(state.step, 10);
}

#[test]
fn adam_minimizes_a_scalar_quadratic() {
    let mut w = scalar(1.0);
    let mut state = OptimizerState::new(&w, AdamConfig::default());
    for _ in 0..2000 {
        let g = scalar(2.0 * w.0[0]);
        adam_step(&mut state, &mut w, &g).unwrap();
    }
    assert!(w.0[0].abs() < 1e-3, "w = {}", w.0[0]);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut w = scalar(1.0);
    let mut state = OptimizerState::new(&w, AdamConfig::default());
    adam_step(&mut state, &mut w, &scalar(0.3)).unwrap();
    // bias-corrected first step is lr · g/(|g| + ε')
    let expect = 1.0 - 5e-3 * 0.3 / (0.3 + 1e-8);
    assert!((w.0[0] - expect).abs() < 1e-15);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut w = scalar(1.0);
    let mut state = OptimizerState::new(&w, AdamConfig::default());
    let err = adam_step(&mut state, &mut w, &scalar(f64::NAN)).unwrap_err();
    assert!(err.to_string().contains("gradient of w"), "{err}");
    assert_eq!(w, scalar(1.0));
    assert_eq!(state.step, 0);
}

fn tiny_model() -> WideBNetConfig {
    let mut cfg = WideBNetConfig::new(GridSpec::new(2, 2).unwrap(), 2, vec![1, 1]).unwrap();
    cfg.cnn_layers = 2;
    cfg.cnn_width = 4;
    cfg.cnn_kernel = 3;
    cfg.res_units = 1;
    cfg
}

fn synthetic(count: usize, n: usize, seed: u64) -> Vec<SampleData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| SampleData {
            eta: Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..0.2)),
            bands: (0..2)
                .map(|_| {
                    Array3::from_shape_simple_fn((n, n, 1), || {
                        Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    })
                })
                .collect(),
        })
        .collect()
}

fn settings(epochs: usize) -> TrainSettings {
    TrainSettings {
        epochs,
        batch: 2,
        seed: 5,
        val_samples: None,
        checkpoint_every: 1,
        ..TrainSettings::default()
    }
}

#[test]
fn training_overfits_a_single_sample() {
    let data = synthetic(1, 8, 2);
    let s = TrainSettings {
        epochs: 500,
        batch: 1,
        ..settings(500)
    };
    let out = train(&data, &[], &tiny_model(), &s, None, None).unwrap();
    assert_eq!(out.history.len(), 500);
    assert_eq!(out.checkpoint.optimizer.step, 500);
    let first = out.history[0].train_pixel_loss;
    let last = out.history.last().unwrap().train_pixel_loss;
    assert!(last * 100.0 <= first, "loss {first} -> {last}");
}

#[test]
fn metrics_and_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(5, 8, 4);
    let val = synthetic(3, 8, 5);
    let out = train(
        &data,
        &val,
        &tiny_model(),
        &settings(3),
        Some(dir.path()),
        None,
    )
    .unwrap();
    let rows: Vec<widebnet::io::EpochMetrics> =
        widebnet::io::read_csv(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].step, 9);
    assert!(rows.iter().all(|r| r.val_pixel_loss.is_finite()));
    let loaded = Checkpoint::load(dir.path().join("checkpoint")).unwrap();
    assert_eq!(loaded, out.checkpoint);
    assert_eq!(loaded.meta.epoch, 3);
    assert_eq!(loaded.meta.input_scales.len(), 2);
}

#[test]
fn resumed_training_is_bit_identical() {
    let data = synthetic(5, 8, 6);
    let model = tiny_model();
    let full = train(&data, &[], &model, &settings(4), None, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    train(&data, &[], &model, &settings(2), Some(dir.path()), None).unwrap();
    let ck = Checkpoint::load(dir.path().join("checkpoint")).unwrap();
    let resumed = train(&data, &[], &model, &settings(4), Some(dir.path()), Some(ck)).unwrap();

    assert_eq!(
        resumed.checkpoint.params.to_arrays(),
        full.checkpoint.params.to_arrays()
    );
    assert_eq!(resumed.checkpoint.optimizer, full.checkpoint.optimizer);
    assert_eq!(resumed.history.len(), 4);
    for (a, b) in resumed.history.iter().zip(&full.history) {
        assert_eq!(a.train_pixel_loss, b.train_pixel_loss);
    }

    let again = train(&data, &[], &model, &settings(4), None, None).unwrap();
    assert_eq!(
        again.checkpoint.params.to_arrays(),
        full.checkpoint.params.to_arrays()
    );

    let ck = Checkpoint::load(dir.path().join("checkpoint")).unwrap();
    let other = TrainSettings {
        seed: 6,
        ..settings(6)
    };
    assert!(train(&data, &[], &model, &other, None, Some(ck)).is_err());
}

#[test]
fn mismatched_data_is_rejected() {
    let data = synthetic(2, 4, 1);
    assert!(train(&data, &[], &tiny_model(), &settings(1), None, None).is_err());
    assert!(train(&[], &[], &tiny_model(), &settings(1), None, None).is_err());
}

#[test]
fn validation_subset_is_fixed_by_the_seed() {
    let a = validation_indices(100, Some(10), 3);
    assert_eq!(a, validation_indices(100, Some(10), 3));
    assert_eq!(a.len(), 10);
    assert_ne!(a, validation_indices(100, Some(10), 4));
    assert_eq!(validation_indices(5, Some(10), 3), vec![0, 1, 2, 3, 4]);
}
