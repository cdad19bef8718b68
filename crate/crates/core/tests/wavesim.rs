use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use widebnet::geometry::GridSpec;
use widebnet::wavesim::*;

// H0^(1)(x) from scipy.special.hankel1(0, x)
const HANKEL: [(f64, f64, f64); 9] = [
    (0.1, 0.9975015620660401, -1.5342386513503667),
    (0.5, 0.9384698072408126, -0.44451873350670656),
    (1.0, 0.7651976865579664, 0.088256964215677),
    (3.0, -0.2600519549019336, 0.37685001001279056),
    (7.5, 0.26633965788037844, 0.11731328614820863),
    (11.9, 0.025049441699589642, -0.2298332139433751),
    (12.1, 0.06966677360680734, -0.21843838055092551),
    (20.0, 0.1670246643405832, 0.06264059680938386),
    (50.0, 0.05581232766925183, -0.0980649954700771),
];

#[test]
fn hankel_matches_reference_values() {
    for &(x, re, im) in &HANKEL {
        let h = hankel1_0(x).unwrap();
        assert!((h.re - re).abs() < 1e-9, "Re H0({x}) = {} vs {re}", h.re);
        assert!((h.im - im).abs() < 1e-9, "Im H0({x}) = {} vs {im}", h.im);
    }
    assert!(hankel1_0(0.0).is_err());
}

#[test]
fn j0_matches_integral_representation() {
    // J0(x) = (1/π) ∫_0^π cos(x sin t) dt, composite Simpson
    let n = 4000;
    for &x in &[0.3, 2.0, 5.5, 9.0, 15.0, 30.0] {
        let dt = PI / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (x * (k as f64 * dt).sin()).cos();
        }
        let quad = acc * dt / 3.0 / PI;
        assert!(
            (bessel_j0(x) - quad).abs() < 1e-10,
            "J0({x}) = {} vs {quad}",
            bessel_j0(x)
        );
    }
}

#[test]
fn analytic_greens_rejects_coincident_points() {
    assert!(analytic_greens(10.0, [0.1, 0.2], [0.1, 0.2]).is_err());
    assert!(analytic_greens(0.0, [0.0, 0.0], [0.1, 0.2]).is_err());
    let g = analytic_greens(10.0, [0.0, 0.0], [0.3, 0.4]).unwrap();
    let h = hankel1_0(5.0).unwrap();
    assert!((g - Complex64::new(0.0, 0.25) * h).norm() < 1e-14);
}

fn medium_with_bump(n: usize, amp: f64) -> Medium {
    let raster = Raster {
        n,
        lo: -0.5,
        hi: 0.5,
    };
    let s = Scatterer {
        shape: ShapeKind::Gaussian,
        char_length: 2.0,
        position: [0.05, -0.1],
        rotation: 0.0,
        amplitude: amp,
    };
    let eta = rasterize_scatterer(&raster, &s).unwrap();
    Medium::homogeneous(eta, 1.0, -0.5, 0.5).unwrap()
}

#[test]
fn second_order_operator_is_complex_symmetric() {
    let med = medium_with_bump(16, 0.3);
    let sys = build_helmholtz_system(
        &med,
        2.0 * PI * 3.0,
        FdOrder::Second,
        &PmlSpec::default(),
        3,
        6,
    )
    .unwrap();
    let mut map: HashMap<(usize, usize), Complex64> = HashMap::new();
    for &(r, c, v) in sys.entries() {
        *map.entry((r, c)).or_default() += v;
    }
    for (&(r, c), &v) in &map {
        let w = map.get(&(c, r)).copied().unwrap_or_default();
        assert!(
            (v - w).norm() <= 1e-12 * v.norm().max(1.0),
            "A[{r},{c}] != A[{c},{r}]"
        );
    }
}

#[test]
fn zero_perturbation_gives_zero_scattered_field() {
    let med = Medium::homogeneous(Array2::zeros((16, 16)), 1.0, -0.5, 0.5).unwrap();
    for order in [FdOrder::Second, FdOrder::Fourth] {
        let f = solve_scattered_planewave(
            &med,
            2.0 * PI * 3.0,
            [1.0, 0.0],
            order,
            &PmlSpec::default(),
            2,
            8,
        )
        .unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }
}

#[test]
fn scattered_field_is_linear_for_weak_perturbations() {
    let omega = 2.0 * PI * 3.0;
    let pml = PmlSpec::default();
    let field = |amp: f64| {
        solve_scattered_planewave(
            &medium_with_bump(16, amp),
            omega,
            [0.6, 0.8],
            FdOrder::Second,
            &pml,
            3,
            8,
        )
        .unwrap()
        .values
    };
    let mut prev = f64::INFINITY;
    for eps in [1e-2, 1e-3, 1e-4] {
        let a = field(eps);
        let b = field(2.0 * eps);
        let dev = (&b - &a.mapv(|v| v * 2.0))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        let rel = dev / b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(
            rel < prev / 5.0,
            "nonlinearity {rel} did not shrink with ε = {eps}"
        );
        prev = rel;
    }
    assert!(prev < 1e-3);
}

#[test]
fn point_source_data_is_reciprocal() {
    let med = medium_with_bump(16, 0.4);
    let omega = 2.0 * PI * 2.0;
    let h = med.spacing();
    // cell centres of the padded grid, so interpolation is exact
    let pts = [
        [-0.5 - 1.5 * h, 0.5 * h],
        [0.5 * h, 0.5 + 2.5 * h],
        [0.5 + 1.5 * h, -4.5 * h],
    ];
    let pml = PmlSpec::default();
    let fields: Vec<Field> = pts
        .iter()
        .map(|&p| solve_scattered_pointsource(&med, omega, p, FdOrder::Second, &pml, 4, 8).unwrap())
        .collect();
    for i in 0..3 {
        for j in 0..3 {
            let a = interpolate(&fields[i], pts[j]).unwrap();
            let b = interpolate(&fields[j], pts[i]).unwrap();
            assert!(
                (a - b).norm() <= 1e-8 * a.norm().max(b.norm()),
                "u({i}->{j}) = {a}, u({j}->{i}) = {b}"
            );
        }
    }
}

#[test]
fn point_source_approximates_analytic_greens() {
    let n = 64;
    let med = Medium::homogeneous(Array2::zeros((n, n)), 1.0, -0.5, 0.5).unwrap();
    let omega = 2.0 * PI * 4.0;
    let h = med.spacing();
    let src = [0.5 * h, 0.5 * h];
    let field = solve_pointsource(
        &med,
        omega,
        src,
        FdOrder::Fourth,
        &PmlSpec::default(),
        2,
        16,
    )
    .unwrap();
    let centres = cell_centres(n, -0.5, 0.5);
    let (mut err, mut norm) = (0.0, 0.0);
    let u = field.interior();
    for (i, &x) in centres.iter().enumerate() {
        for (j, &z) in centres.iter().enumerate() {
            let r = ((x - src[0]).powi(2) + (z - src[1]).powi(2)).sqrt();
            if (0.15..0.4).contains(&r) {
                let g = analytic_greens(omega, src, [x, z]).unwrap();
                err += (u[[i, j]] - g).norm_sqr();
                norm += g.norm_sqr();
            }
        }
    }
    let rel = (err / norm).sqrt();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn bilinear_interpolation_is_exact_on_bilinear_fields() {
    let grid = SolverGrid {
        n: 8,
        h: 0.125,
        lo: -0.5,
        pad: 1,
        pml: 2,
    };
    let t = grid.total();
    let f = |x: f64, z: f64| Complex64::new(1.0 + 2.0 * x - 3.0 * z + 0.5 * x * z, x - z);
    let values: Vec<Complex64> = (0..t * t)
        .map(|p| f(grid.coord(p / t), grid.coord(p % t)))
        .collect();
    let field = Field::from_flat(grid, values);
    for &pos in &[[0.0, 0.0], [0.31, -0.47], [0.6, 0.7], [-0.77, 0.05]] {
        let v = interpolate(&field, pos).unwrap();
        assert!((v - f(pos[0], pos[1])).norm() < 1e-12);
    }
    assert!(interpolate(&field, [2.0, 0.0]).is_err());
}

#[test]
fn rasterized_shapes_have_expected_areas() {
    let raster = Raster {
        n: 64,
        lo: -0.5,
        hi: 0.5,
    };
    let count = |shape, len, rot| {
        let s = Scatterer {
            shape,
            char_length: len,
            position: [0.0, 0.0],
            rotation: rot,
            amplitude: 1.0,
        };
        rasterize_scatterer(&raster, &s)
            .unwrap()
            .iter()
            .filter(|&&v| v > 0.0)
            .count()
    };
    assert_eq!(count(ShapeKind::Square, 8.0, 0.0), 64);
    let tri = count(ShapeKind::Triangle, 16.0, 0.0) as f64;
    let area = 3f64.sqrt() / 4.0 * 256.0;
    assert!(
        (tri - area).abs() / area < 0.15,
        "triangle covers {tri} pixels, area {area}"
    );
    let rotated = count(ShapeKind::Square, 8.0, 0.7) as f64;
    assert!((rotated - 64.0).abs() < 12.0);

    let g = Scatterer {
        shape: ShapeKind::Gaussian,
        char_length: 2.0,
        position: [0.0, 0.0],
        rotation: 0.0,
        amplitude: 0.2,
    };
    let eta = rasterize_scatterer(&raster, &g).unwrap();
    let peak = eta.iter().cloned().fold(0.0, f64::max);
    // nearest centres sit half a pixel from the origin in each axis
    let expect = 0.2 * (-(0.5f64.powi(2) * 2.0) / (2.0 * 4.0)).exp();
    assert!((peak - expect).abs() < 1e-12);
}

#[test]
fn rasterization_is_additive() {
    let raster = Raster {
        n: 32,
        lo: -0.5,
        hi: 0.5,
    };
    let a = Scatterer {
        shape: ShapeKind::Square,
        char_length: 6.0,
        position: [0.0, 0.0],
        rotation: 0.0,
        amplitude: 0.2,
    };
    let b = Scatterer {
        position: [0.05, 0.0],
        ..a
    };
    let mut eta = Array2::zeros((32, 32));
    rasterize_into(&mut eta, &raster, &a).unwrap();
    rasterize_into(&mut eta, &raster, &b).unwrap();
    let max = eta.iter().cloned().fold(0.0, f64::max);
    assert!((max - 0.4).abs() < 1e-12);
}

fn dictionary() -> ScattererDictionary {
    ScattererDictionary {
        shapes: vec![ShapeKind::Square, ShapeKind::Triangle],
        char_lengths: vec![2.0, 3.0],
        counts: vec![2, 3, 4],
        placement_radius: 0.35,
        amplitude: 0.2,
        rotate: true,
    }
}

#[test]
fn scatterer_counts_and_positions_follow_the_dictionary() {
    let dict = dictionary();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hist = [0usize; 5];
    let trials = 3000;
    for _ in 0..trials {
        let list = draw_scatterers(&mut rng, &dict);
        hist[list.len()] += 1;
        for s in &list {
            assert!(s.position[0].hypot(s.position[1]) <= 0.35);
            assert!(dict.char_lengths.contains(&s.char_length));
            assert!((0.0..2.0 * PI).contains(&s.rotation));
        }
    }
    assert_eq!(hist[0] + hist[1], 0);
    for &c in &hist[2..] {
        let frac = c as f64 / trials as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.04, "histogram {hist:?}");
    }
}

#[test]
fn octave_bands_anchor_at_the_highest_frequency() {
    let spec = GridSpec::new(4, 1).unwrap();
    let bands = assign_bands(&[2.5, 3.75, 5.0, 7.5, 10.0], &spec).unwrap();
    assert_eq!(bands, vec![vec![2.5], vec![3.75, 5.0], vec![7.5, 10.0]]);
    let bands = assign_bands(&[0.5, 4.0, 8.0], &spec).unwrap();
    assert_eq!(bands, vec![vec![0.5], vec![4.0], vec![8.0]]);
    assert!(assign_bands(&[3.0, 2.0], &spec).is_err());
    assert!(assign_bands(&[], &spec).is_err());
}

proptest! {
    #[test]
    fn every_frequency_lands_in_exactly_one_band(
        mut freqs in proptest::collection::vec(0.1f64..40.0, 1..12),
        levels in prop::sample::select(vec![2usize, 4, 6]),
    ) {
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let spec = GridSpec::new(levels, 1).unwrap();
        let bands = assign_bands(&freqs, &spec).unwrap();
        prop_assert_eq!(bands.len(), levels / 2 + 1);
        let flat: Vec<f64> = bands.iter().flatten().cloned().collect();
        prop_assert_eq!(&flat, &freqs);
        prop_assert!(bands.last().unwrap().contains(freqs.last().unwrap()));
    }
}

fn small_config() -> SimConfig {
    SimConfig {
        grid: GridSpec::new(4, 1).unwrap(),
        extent: [-0.5, 0.5],
        frequencies: vec![1.5, 3.0],
        acquisition: AcquisitionGeometry::plane_wave(16, 0.5),
        pml: PmlSpec::default(),
        fd_order: FdOrder::Second,
        background: 1.0,
        padding: None,
        scatterers: dictionary(),
    }
}

#[test]
fn sample_generation_is_deterministic() {
    let cfg = small_config();
    let a = generate_sample(11, 3, &cfg).unwrap();
    let b = generate_sample(11, 3, &cfg).unwrap();
    let c = generate_sample(11, 4, &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.eta, c.eta);
    assert_eq!((a.seed, a.stream), (11, 3));
    assert_eq!(a.data.band_sizes(), vec![0, 1, 1]);
    assert!(a.data.norm() > 0.0);
    let band = a.data.band(4).unwrap();
    assert_eq!(band.data.dim(), (16, 16, 1));
    let ch = a.data.real_channels(4).unwrap();
    assert_eq!(ch[[2, 5, 0]], band.data[[2, 5, 0]].re);
    assert_eq!(ch[[2, 5, 1]], band.data[[2, 5, 0]].im);
}

#[test]
fn sim_config_round_trips_through_json() {
    let cfg = small_config();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: SimConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, back);
    let mut bad = cfg.clone();
    bad.frequencies = vec![3.0, 1.0];
    assert!(bad.validate().is_err());
}
