use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widebnet::imaging::*;
use widebnet::wavesim::*;

type C = Complex64;

fn setup(n: usize, m: usize) -> (Raster, AcquisitionGeometry) {
    (
        Raster {
            n,
            lo: -0.5,
            hi: 0.5,
        },
        AcquisitionGeometry::plane_wave(m, 0.5),
    )
}

fn random_vec(len: usize, rng: &mut ChaCha8Rng) -> Array1<C> {
    (0..len)
        .map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

// Born data of a unit point mass at pixel (pi, pj), evaluated term by term.
fn point_data(
    omega: f64,
    raster: &Raster,
    geom: &AcquisitionGeometry,
    pi: usize,
    pj: usize,
) -> Array2<C> {
    let y = [raster.centre(pi), raster.centre(pj)];
    let r0 = geom.receiver_radius;
    let h2 = raster.h() * raster.h();
    Array2::from_shape_fn((geom.n_src, geom.n_rcv), |(s, r)| {
        let a = 2.0 * PI * s as f64 / geom.n_src as f64;
        let b = 2.0 * PI * r as f64 / geom.n_rcv as f64;
        let phase = omega * ((a.cos() - b.cos()) * y[0] + (a.sin() - b.sin()) * y[1]) + omega * r0;
        -omega * omega / r0.sqrt() * h2 * C::from_polar(1.0, phase)
    })
}

#[test]
fn adjoint_is_consistent() {
    let (raster, geom) = setup(16, 12);
    let op = farfield_matrix(
        2.0 * PI * 3.0,
        &raster,
        &geom,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let x = random_vec(op.pixels(), &mut rng);
        let y = random_vec(op.rows(), &mut rng);
        let lhs: C = op.apply(&x).iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: C = x
            .iter()
            .zip(&op.adjoint(&y))
            .map(|(a, b)| a * b.conj())
            .sum();
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm());
    }
}

#[test]
fn point_mass_data_matches_direct_evaluation() {
    let (raster, geom) = setup(16, 10);
    let omega = 2.0 * PI * 2.5;
    let op = farfield_matrix(
        omega,
        &raster,
        &geom,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let mut eta = Array2::zeros((16, 16));
    eta[[4, 11]] = 1.0;
    let data = op.forward(&eta).unwrap();
    let expect = point_data(omega, &raster, &geom, 4, 11);
    let scale = expect[[0, 0]].norm();
    for (a, b) in data.iter().zip(&expect) {
        assert!((a - b).norm() < 1e-12 * scale);
        assert!((a.norm() - scale).abs() < 1e-12 * scale);
    }
}

#[test]
fn backscatter_diagonal_phase_is_independent_of_position() {
    let (raster, geom) = setup(8, 6);
    let op = farfield_matrix(
        20.0,
        &raster,
        &geom,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let m = op.matrix();
    for s in 0..6 {
        let row = m.row(s * 6 + s);
        for v in row.iter() {
            assert!((v - row[0]).norm() < 1e-12 * row[0].norm());
        }
    }
}

#[test]
fn memory_cap_is_enforced() {
    let (raster, geom) = setup(16, 16);
    assert!(farfield_matrix(10.0, &raster, &geom, FarFieldScaling::Nominal, 1000).is_err());
    let point = AcquisitionGeometry {
        mode: AcquisitionMode::PointSource,
        ..geom
    };
    assert!(farfield_matrix(
        10.0,
        &raster,
        &point,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP
    )
    .is_err());
}

#[test]
fn asymptotic_scaling_tracks_the_solver_in_the_born_regime() {
    let n = 40;
    let omega = 2.0 * PI * 4.0;
    let raster = Raster {
        n,
        lo: -0.5,
        hi: 0.5,
    };
    let geom = AcquisitionGeometry::plane_wave(12, 0.5);
    let bump = Scatterer {
        shape: ShapeKind::Gaussian,
        char_length: 1.5,
        position: [0.0, 0.0],
        rotation: 0.0,
        amplitude: 1e-3,
    };
    let eta = rasterize_scatterer(&raster, &bump).unwrap();
    let med = Medium::homogeneous(eta.clone(), 1.0, -0.5, 0.5).unwrap();
    let pml = PmlSpec::default();
    let pml_cells = pml.cells(omega, 1.0, raster.h());
    let mut solver = Array2::zeros((12, 12));
    for s in 0..12 {
        let f = solve_scattered_planewave(
            &med,
            omega,
            geom.source_direction(s),
            FdOrder::Fourth,
            &pml,
            2,
            pml_cells,
        )
        .unwrap();
        for (r, v) in sample_receivers(&f, &geom).unwrap().into_iter().enumerate() {
            solver[[s, r]] = v;
        }
    }
    let op = farfield_matrix(
        omega,
        &raster,
        &geom,
        FarFieldScaling::Asymptotic,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let born = op.forward(&eta).unwrap();
    let err = (&born - &solver)
        .iter()
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let norm = solver.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(err / norm < 0.05, "relative mismatch {}", err / norm);
}

#[test]
fn zero_data_gives_zero_image() {
    let (raster, geom) = setup(8, 8);
    let op = farfield_matrix(
        15.0,
        &raster,
        &geom,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let img = tikhonov_image(
        Array2::zeros((8, 8)).view(),
        &op,
        1.0,
        &KrylovConfig::default(),
    )
    .unwrap();
    assert!(img.values.iter().all(|v| *v == C::new(0.0, 0.0)));
    assert!(tikhonov_image(
        Array2::zeros((8, 8)).view(),
        &op,
        0.0,
        &KrylovConfig::default()
    )
    .is_err());
    assert!(tikhonov_image(
        Array2::zeros((8, 7)).view(),
        &op,
        1.0,
        &KrylovConfig::default()
    )
    .is_err());
}

#[test]
fn tikhonov_localizes_a_point_scatterer() {
    let (raster, geom) = setup(32, 32);
    let omega = 2.0 * PI * 5.0;
    let op = farfield_matrix(
        omega,
        &raster,
        &geom,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let data = point_data(omega, &raster, &geom, 20, 9);
    let img = tikhonov_image(data.view(), &op, 1.0, &KrylovConfig::default()).unwrap();
    assert!(img.residual <= 1e-3);
    let (i, j) = argmax(&img.magnitude());
    assert!(
        i.abs_diff(20) <= 1 && j.abs_diff(9) <= 1,
        "peak at ({i}, {j})"
    );

    // independent residual of the normal equations
    let x: Array1<C> = img.values.iter().cloned().collect();
    let y: Array1<C> = data.iter().cloned().collect();
    let b = op.adjoint(&y);
    let lhs = &op.adjoint(&op.apply(&x)) + &x;
    let res = (&lhs - &b).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bn = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(res <= 1e-3 * bn);
}

#[test]
fn solver_reports_non_convergence() {
    let (raster, geom) = setup(16, 16);
    let omega = 2.0 * PI * 5.0;
    let op = farfield_matrix(
        omega,
        &raster,
        &geom,
        FarFieldScaling::Nominal,
        DEFAULT_ENTRY_CAP,
    )
    .unwrap();
    let data = point_data(omega, &raster, &geom, 3, 9);
    let krylov = KrylovConfig {
        tolerance: 1e-12,
        max_iterations: 1,
    };
    match tikhonov_image(data.view(), &op, 1e-6, &krylov) {
        Err(widebnet::Error::NoConvergence {
            iterations,
            residual,
        }) => {
            assert_eq!(iterations, 1);
            assert!(residual > 1e-12);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn imaging_condition_reduces_and_sharpens() {
    let (raster, geom) = setup(32, 32);
    let freqs = [2.5, 5.0, 10.0];
    let ops: Vec<_> = freqs
        .iter()
        .map(|f| {
            farfield_matrix(
                2.0 * PI * f,
                &raster,
                &geom,
                FarFieldScaling::Nominal,
                DEFAULT_ENTRY_CAP,
            )
            .unwrap()
        })
        .collect();
    let data: Vec<_> = freqs
        .iter()
        .map(|f| point_data(2.0 * PI * f, &raster, &geom, 15, 17))
        .collect();
    let views: Vec<_> = data.iter().map(|d| d.view()).collect();
    let k = KrylovConfig::default();

    let single = multifreq_image(&views[..1], &ops[..1], 1.0, &[1.0], &k).unwrap();
    let direct = tikhonov_image(views[0], &ops[0], 1.0, &k).unwrap();
    assert_eq!(single.values, direct.values);

    let zero = multifreq_image(&views, &ops, 1.0, &[0.0; 3], &k).unwrap();
    assert!(zero.values.iter().all(|v| v.norm() == 0.0));

    let wide = multifreq_image(&views, &ops, 1.0, &uniform_weights(3), &k).unwrap();
    let (w_low, w_all) = (
        lobe_width(&direct.magnitude()),
        lobe_width(&wide.magnitude()),
    );
    assert!(w_all < w_low, "lobe {w_all} vs {w_low}");

    assert!(multifreq_image(&views, &ops, 1.0, &[1.0, -1.0, 1.0], &k).is_err());
    assert!(multifreq_image(&views[..2], &ops, 1.0, &[1.0; 3], &k).is_err());
}

#[test]
fn lobe_width_of_a_triangle_profile() {
    let mut img = Array2::zeros((9, 9));
    for i in 0..9 {
        for j in 0..9 {
            let d = (i as f64 - 4.0).abs().max((j as f64 - 4.0).abs());
            img[[i, j]] = (4.0 - d).max(0.0);
        }
    }
    assert!((lobe_width(&img) - 4.0).abs() < 1e-12);
}
