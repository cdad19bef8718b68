use ndarray::{Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widebnet::geometry::MortonTensor;
use widebnet::tensornet::*;

fn random3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

// Direct evaluation: y[b, g, o] = bias[g, o] + Σ_i W[g, o, i] x[b, g·k + i / c, i % c].
fn affine_oracle(p: &PatchAffine<f64>, x: &Array3<f64>) -> Array3<f64> {
    let (b, _, c) = x.dim();
    let (g, out, inp) = p.weights.dim();
    Array3::from_shape_fn((b, g, out), |(bi, gi, o)| {
        let mut acc = p.bias[[gi, o]];
        for i in 0..inp {
            acc += p.weights[[gi, o, i]] * x[[bi, gi * p.kernel + i / c, i % c]];
        }
        acc
    })
}

proptest! {
    #[test]
    fn patch_affine_matches_direct_sum(g in 1usize..5, k in prop::sample::select(vec![1usize, 4]), c in 1usize..4, out in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PatchAffine::<f64>::glorot(g, k, c, out, &mut rng);
        p.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let x = random3((2, g * k, c), &mut rng);
        let y = p.forward(x.view()).unwrap();
        let oracle = affine_oracle(&p, &x);
        for (a, b) in y.iter().zip(oracle.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn glorot_samples_stay_within_the_bound(fi in 1usize..50, fo in 1usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = glorot_init::<f64, _>(&[fi, fo], fi, fo, &mut rng);
        let b = glorot_bound(fi, fo);
        prop_assert!(w.iter().all(|v| v.abs() <= b));
    }
}

#[test]
fn patches_do_not_share_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PatchAffine::<f64>::glorot(4, 1, 3, 2, &mut rng);
    let x = random3((1, 4, 3), &mut rng);
    let y0 = p.forward(x.view()).unwrap();
    let mut q = p.clone();
    q.weights[[2, 1, 0]] += 1.0;
    let y1 = q.forward(x.view()).unwrap();
    for g in 0..4 {
        for o in 0..2 {
            let changed = (y0[[0, g, o]] - y1[[0, g, o]]).abs() > 0.0;
            assert_eq!(changed, g == 2 && o == 1);
        }
    }
}

#[test]
fn identity_affine_and_morton_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random3((3, 16, 5), &mut rng);
    let id = PatchAffine::<f64>::identity(16, 5);
    assert_eq!(id.forward(x.view()).unwrap(), x);

    let t = MortonTensor::new(2, x.index_axis(ndarray::Axis(0), 0).to_owned()).unwrap();
    let coarsen = PatchAffine::<f64>::glorot(4, 4, 5, 7, &mut rng);
    let y = patch_affine(&coarsen, &t).unwrap();
    assert_eq!((y.level(), y.channels()), (1, 7));
    assert!(patch_affine(&PatchAffine::<f64>::zeros(4, 4, 6, 1), &t).is_err());
}

#[test]
fn conv_same_padding_preserves_shape_and_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array4::from_shape_simple_fn((2, 7, 6, 2), || rng.random_range(-1.0..1.0));
    let p = Conv2d::<f64>::glorot(5, 2, 3, &mut rng);
    assert_eq!(p.forward(x.view()).unwrap().dim(), (2, 7, 6, 3));

    let mut delta = Conv2d::<f64>::zeros(3, 3, 2, 2);
    delta.kernel[[1, 1, 0, 0]] = 1.0;
    delta.kernel[[1, 1, 1, 1]] = 1.0;
    delta.bias[1] = 0.5;
    let y = delta.forward(x.view()).unwrap();
    for ((b, i, j, c), v) in y.indexed_iter() {
        let expect = x[[b, i, j, c]] + if c == 1 { 0.5 } else { 0.0 };
        assert!((v - expect).abs() < 1e-15);
    }
}

#[test]
fn conv_matches_direct_cross_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array3::from_shape_simple_fn((5, 6, 2), || rng.random_range(-1.0..1.0));
    let mut p = Conv2d::<f64>::glorot(3, 2, 2, &mut rng);
    p.bias[0] = 0.25;
    let y = conv2d(&p, x.view()).unwrap();
    for ((i, j, co), v) in y.indexed_iter() {
        let mut acc = p.bias[co];
        for di in 0..3 {
            for dj in 0..3 {
                let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                if si < 0 || sj < 0 || si >= 5 || sj >= 6 {
                    continue;
                }
                for ci in 0..2 {
                    acc += p.kernel[[di, dj, ci, co]] * x[[si as usize, sj as usize, ci]];
                }
            }
        }
        assert!((v - acc).abs() < 1e-12);
    }
}

#[test]
fn residual_unit_adds_a_rectified_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut a = PatchAffine::<f64>::glorot(3, 1, 4, 4, &mut rng);
    a.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let unit = ResUnit::new(a.clone()).unwrap();
    let x = random3((2, 3, 4), &mut rng);
    let y = unit.forward(x.view()).unwrap();
    let pre = a.forward(x.view()).unwrap();
    for ((idx, v), p) in y.indexed_iter().zip(pre.iter()) {
        assert!((v - (x[idx] + p.max(0.0))).abs() < 1e-15);
    }
    assert!(ResUnit::new(PatchAffine::<f64>::zeros(3, 1, 4, 5)).is_err());
    assert!(ResUnit::new(PatchAffine::<f64>::zeros(3, 4, 1, 4)).is_err());
}

#[test]
fn shape_errors_are_reported() {
    let p = PatchAffine::<f64>::zeros(4, 1, 3, 2);
    assert!(p.forward(Array3::zeros((1, 5, 3)).view()).is_err());
    assert!(p.forward(Array3::zeros((1, 4, 2)).view()).is_err());
    let c = Conv2d::<f64>::zeros(3, 3, 2, 1);
    assert!(c.forward(Array4::zeros((1, 4, 4, 3)).view()).is_err());
}
