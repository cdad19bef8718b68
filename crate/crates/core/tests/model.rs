use ndarray::{s, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widebnet::geometry::GridSpec;
use widebnet::model::*;
use widebnet::tensornet::Parameters;

fn random_config(rng: &mut ChaCha8Rng) -> WideBNetConfig {
    let levels = [2usize, 4][rng.random_range(0..2)];
    let grid = GridSpec::new(levels, rng.random_range(1..4)).unwrap();
    let bands = levels / 2 + 1;
    let mut sizes: Vec<usize> = (0..bands).map(|_| rng.random_range(0..3)).collect();
    sizes[bands - 1] = rng.random_range(1..3);
    let mut cfg = WideBNetConfig::new(grid, rng.random_range(1..4), sizes).unwrap();
    cfg.cnn_layers = rng.random_range(0..4);
    cfg.res_units = rng.random_range(0..3);
    cfg.cnn_kernel = [1, 3, 5][rng.random_range(0..3)];
    cfg.cnn_width = rng.random_range(1..6);
    cfg.strict_butterfly = rng.random();
    cfg.use_switch = rng.random();
    cfg
}

#[test]
fn param_count_matches_built_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let cfg = random_config(&mut rng);
        let params = WideBNetParams::<f32>::init(&cfg, &mut rng).unwrap();
        assert_eq!(param_count(&cfg), params.param_count(), "{cfg:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn param_count_matches_for_arbitrary_configs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng);
        let built = WideBNetParams::<f32>::zeros(&cfg).unwrap();
        prop_assert_eq!(param_count(&cfg), built.param_count());
    }
}

#[test]
fn frequency_partition_reduces_parameters() {
    let grid = GridSpec::new(4, 5).unwrap();
    for rank in 1..=4 {
        let split = WideBNetConfig::new(grid, rank, vec![1, 1, 1]).unwrap();
        let finest = WideBNetConfig::new(grid, rank, vec![0, 0, 3]).unwrap();
        assert!(param_count(&split) < param_count(&finest), "rank {rank}");
    }
}

#[test]
fn channel_schedule() {
    let grid = GridSpec::new(4, 5).unwrap();
    let cfg = WideBNetConfig::new(grid, 3, vec![1, 2, 1]).unwrap();
    assert_eq!(cfg.cumulative_bands(4), 1);
    assert_eq!(cfg.cumulative_bands(3), 3);
    assert_eq!(cfg.cumulative_bands(2), 4);
    assert_eq!(cfg.trunk_channels(4), 6);
    assert_eq!(cfg.trunk_channels(3), 4 * 6 * 3);
    assert_eq!(cfg.trunk_channels(2), 16 * 6 * 4);
    assert_eq!(cfg.band_channels(3), 12);
}

#[test]
fn invalid_configs_are_rejected() {
    let grid = GridSpec::new(4, 2).unwrap();
    assert!(WideBNetConfig::new(grid, 2, vec![1, 1, 0]).is_err());
    assert!(WideBNetConfig::new(grid, 2, vec![1, 1]).is_err());
    assert!(WideBNetConfig::new(grid, 0, vec![1, 1, 1]).is_err());
    let mut cfg = WideBNetConfig::new(grid, 2, vec![1, 1, 1]).unwrap();
    cfg.cnn_kernel = 4;
    assert!(cfg.validate().is_err());
}

#[test]
fn config_json_fills_defaults() {
    let cfg: WideBNetConfig = serde_json::from_str(
        r#"{"grid": {"levels": 4, "leaf": 5}, "rank": 2, "band_sizes": [1, 1, 1]}"#,
    )
    .unwrap();
    assert_eq!(
        (cfg.cnn_layers, cfg.res_units, cfg.cnn_kernel, cfg.cnn_width),
        (3, 3, 5, 16)
    );
    assert!(!cfg.strict_butterfly && cfg.use_switch);
    let back: WideBNetConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<WideBNetConfig>(
        r#"{"grid": {"levels": 4, "leaf": 5}, "rank": 2, "band_sizes": [1], "bogus": 1}"#
    )
    .is_err());
}

fn random_bands(cfg: &WideBNetConfig, rng: &mut ChaCha8Rng) -> Vec<Array3<f64>> {
    let n = cfg.grid.side();
    cfg.band_sizes
        .iter()
        .map(|&k| Array3::from_shape_simple_fn((n, n, 2 * k), || rng.random_range(-1.0..1.0)))
        .collect()
}

#[test]
fn batched_forward_matches_single_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for strict in [false, true] {
        let mut cfg = WideBNetConfig::new(GridSpec::new(4, 2).unwrap(), 2, vec![0, 1, 2]).unwrap();
        cfg.strict_butterfly = strict;
        cfg.cnn_width = 4;
        let params = WideBNetParams::<f64>::init(&cfg, &mut rng).unwrap();
        let samples: Vec<Vec<Array3<f64>>> = (0..3).map(|_| random_bands(&cfg, &mut rng)).collect();
        let tiles: Vec<Vec<_>> = samples
            .iter()
            .map(|b| {
                let views: Vec<_> = b.iter().map(|a| a.view()).collect();
                tile_bands(&cfg, &views).unwrap()
            })
            .collect();
        let refs: Vec<&[_]> = tiles.iter().map(|t| t.as_slice()).collect();
        let batch = params.forward(&stack_batch(&refs).unwrap()).unwrap();
        assert_eq!(batch.dim(), (3, 32, 32));
        for (k, bands) in samples.iter().enumerate() {
            let views: Vec<_> = bands.iter().map(|a| a.view()).collect();
            let single = widebnet_forward(&params, &views).unwrap();
            let diff = (&single - &batch.slice(s![k, .., ..]))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12);
        }
    }
}

#[test]
fn zero_parameters_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = WideBNetConfig::new(GridSpec::new(2, 3).unwrap(), 2, vec![1, 1]).unwrap();
    let params = WideBNetParams::<f64>::zeros(&cfg).unwrap();
    let bands = random_bands(&cfg, &mut rng);
    let views: Vec<_> = bands.iter().map(|a| a.view()).collect();
    let y = widebnet_forward(&params, &views).unwrap();
    assert_eq!(y.dim(), (12, 12));
    assert!(y.iter().all(|&v| v == 0.0));
    assert!(widebnet_forward(&params, &views[..1]).is_err());
}

#[test]
fn initialization_is_reproducible() {
    let cfg = WideBNetConfig::new(GridSpec::new(2, 2).unwrap(), 2, vec![1, 1]).unwrap();
    let a = WideBNetParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = WideBNetParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let c = WideBNetParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let names = a.names();
    assert!(names.contains(&"switch.weights".to_string()));
    assert!(names.contains(&"cnn2.bias".to_string()));
    let mut d = a.zeros_like();
    d.load_arrays(&a.to_arrays()).unwrap();
    assert_eq!(d, a);
}
