use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{ensure, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this argument the power series is used, above it the asymptotic
/// expansion.
const SERIES_LIMIT: f64 = 12.0;

fn series_j0_y0(x: f64) -> (f64, f64) {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut j0 = 1.0;
    let mut tail = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        harmonic += 1.0 / kf;
        j0 += term;
        tail -= term * harmonic;
        if term.abs() < 1e-18 * j0.abs().max(1e-300) && k > 4 {
            break;
        }
    }
    let y0 = 2.0 / PI * (((x / 2.0).ln() + EULER_GAMMA) * j0 + tail);
    (j0, y0)
}

fn asymptotic_hankel(x: f64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mut last = f64::INFINITY;
    for k in 1..100 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * i * (-(odd * odd) / (8.0 * kf * x));
        if next.norm() >= last || next.norm() < 1e-17 {
            break;
        }
        last = next.norm();
        term = next;
        sum += term;
    }
    (2.0 / (PI * x)).sqrt() * Complex64::from_polar(1.0, x - FRAC_PI_4) * sum
}

/// Hankel function of the first kind and order zero, `J0(x) + i Y0(x)`.
pub fn hankel1_0(x: f64) -> Result<Complex64> {
    ensure!(
        x > 0.0 && x.is_finite(),
        "Hankel argument must be positive, got {x}"
    );
    if x < SERIES_LIMIT {
        let (j0, y0) = series_j0_y0(x);
        Ok(Complex64::new(j0, y0))
    } else {
        Ok(asymptotic_hankel(x))
    }
}

/// Bessel function `J0`.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 1.0;
    }
    hankel1_0(x).expect("positive argument").re
}

/// Bessel function `Y0` for `x > 0`.
pub fn bessel_y0(x: f64) -> Result<f64> {
    Ok(hankel1_0(x)?.im)
}

/// Radiating Green's function of `Δ + ω²` in 2D, `(i/4) H0⁽¹⁾(ω|x − y|)`,
/// so that `(Δ + ω²)Φ = −δ`.
pub fn analytic_greens(omega: f64, x: [f64; 2], y: [f64; 2]) -> Result<Complex64> {
    let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
    ensure!(r > 0.0, "Green's function is singular at coincident points");
    ensure!(omega > 0.0, "frequency must be positive, got {omega}");
    Ok(Complex64::new(0.0, 0.25) * hankel1_0(omega * r)?)
}
