//! Linearized far-field imaging baselines.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::wavesim::{AcquisitionGeometry, AcquisitionMode, Raster};

type C = Complex64;

/// Default cap on stored operator entries (about 2.4 GB of complex values).
pub const DEFAULT_ENTRY_CAP: usize = 150_000_000;

/// Overall factor of the far-field pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FarFieldScaling {
    /// `−ω² e^{iωR}/√R`.
    #[default]
    Nominal,
    /// `ω² e^{iπ/4}/√(8πω) · e^{iωR}/√R`, the leading term of the Born
    /// integral with the Hankel-function Green's kernel; directly comparable
    /// with solver data.
    Asymptotic,
}

impl FarFieldScaling {
    fn factor(self, omega: f64, radius: f64) -> C {
        let travel = C::from_polar(1.0 / radius.sqrt(), omega * radius);
        match self {
            FarFieldScaling::Nominal => -omega * omega * travel,
            FarFieldScaling::Asymptotic => {
                omega * omega / (8.0 * PI * omega).sqrt() * C::from_polar(1.0, PI / 4.0) * travel
            }
        }
    }
}

/// Dense linearized forward map `η ↦ Λ` at one frequency. Rows are
/// `src · n_rcv + rcv`, columns the row-major pixels of the raster.
#[derive(Debug, Clone)]
pub struct FarFieldOperator {
    pub omega: f64,
    pub raster: Raster,
    pub geometry: AcquisitionGeometry,
    pub scaling: FarFieldScaling,
    matrix: Array2<C>,
}

/// Builds the far-field operator at angular frequency `omega`.
pub fn farfield_matrix(
    omega: f64,
    raster: &Raster,
    geom: &AcquisitionGeometry,
    scaling: FarFieldScaling,
    entry_cap: usize,
) -> Result<FarFieldOperator> {
    ensure!(omega > 0.0, "frequency must be positive, got {omega}");
    ensure!(
        geom.mode == AcquisitionMode::PlaneWave,
        "the far-field operator needs plane-wave illumination"
    );
    let rows = geom.n_src * geom.n_rcv;
    let pix = raster.n * raster.n;
    ensure!(
        rows.saturating_mul(pix) <= entry_cap,
        "far-field matrix needs {rows} x {pix} entries, above the cap of {entry_cap}"
    );
    let factor = scaling.factor(omega, geom.receiver_radius) * raster.h() * raster.h();
    let centres: Vec<f64> = (0..raster.n).map(|i| raster.centre(i)).collect();
    let mut entries = vec![C::new(0.0, 0.0); rows * pix];
    entries
        .par_chunks_mut(pix)
        .enumerate()
        .for_each(|(row, out)| {
            let s = geom.source_direction(row / geom.n_rcv);
            let r = geom.receiver_direction(row % geom.n_rcv);
            let k = [omega * (s[0] - r[0]), omega * (s[1] - r[1])];
            for (p, v) in out.iter_mut().enumerate() {
                let (x, z) = (centres[p / raster.n], centres[p % raster.n]);
                *v = factor * C::from_polar(1.0, k[0] * x + k[1] * z);
            }
        });
    let matrix = Array2::from_shape_vec((rows, pix), entries).expect("row-major entries");
    Ok(FarFieldOperator {
        omega,
        raster: *raster,
        geometry: *geom,
        scaling,
        matrix,
    })
}

impl FarFieldOperator {
    pub fn matrix(&self) -> ArrayView2<'_, C> {
        self.matrix.view()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.matrix.ncols()
    }

    /// `F x` for a flattened pixel vector.
    pub fn apply(&self, x: &Array1<C>) -> Array1<C> {
        self.matrix.dot(x)
    }

    /// `F* y` for a flattened data vector.
    pub fn adjoint(&self, y: &Array1<C>) -> Array1<C> {
        let yc = y.mapv(|v| v.conj());
        yc.dot(&self.matrix).mapv(|v| v.conj())
    }

    /// Predicted data `[src, rcv]` for the image `eta`.
    pub fn forward(&self, eta: &Array2<f64>) -> Result<Array2<C>> {
        let n = self.raster.n;
        ensure!(
            eta.dim() == (n, n),
            "image {:?} does not match the {n} x {n} raster",
            eta.dim()
        );
        let x: Array1<C> = eta.iter().map(|&v| C::new(v, 0.0)).collect();
        let y = self.apply(&x);
        Ok(
            y.into_shape_with_order((self.geometry.n_src, self.geometry.n_rcv))
                .expect("row count"),
        )
    }
}

/// Krylov settings for the Tikhonov normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            tolerance: 1e-3,
            max_iterations: 2000,
        }
    }
}

/// Regularized image together with its solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub values: Array2<C>,
    pub iterations: usize,
    /// `‖(F*F + εI)x − F*Λ‖ / ‖F*Λ‖` at exit.
    pub residual: f64,
}

impl Image {
    pub fn real(&self) -> Array2<f64> {
        self.values.mapv(|v| v.re)
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }
}

fn dot(a: &Array1<C>, b: &Array1<C>) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &Array1<C>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `(F*F + εI)⁻¹ F*Λ` by conjugate gradients on the normal equations.
pub fn tikhonov_image(
    data: ArrayView2<'_, C>,
    op: &FarFieldOperator,
    epsilon: f64,
    krylov: &KrylovConfig,
) -> Result<Image> {
    ensure!(
        epsilon > 0.0,
        "regularization must be positive, got {epsilon}"
    );
    let g = op.geometry;
    ensure!(
        data.dim() == (g.n_src, g.n_rcv),
        "data {:?} does not match the {} x {} acquisition",
        data.dim(),
        g.n_src,
        g.n_rcv
    );
    let n = op.raster.n;
    let y: Array1<C> = data.iter().cloned().collect();
    let b = op.adjoint(&y);
    let b_norm = norm(&b);
    if b_norm == 0.0 {
        return Ok(Image {
            values: Array2::zeros((n, n)),
            iterations: 0,
            residual: 0.0,
        });
    }
    let normal = |x: &Array1<C>| {
        let mut out = op.adjoint(&op.apply(x));
        Zip::from(&mut out)
            .and(x)
            .for_each(|o, &v| *o += v * epsilon);
        out
    };
    let mut x = Array1::<C>::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r).re;
    let mut iterations = 0;
    while rr.sqrt() > krylov.tolerance * b_norm {
        if iterations == krylov.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        let ap = normal(&p);
        let alpha = rr / dot(&p, &ap).re;
        x.scaled_add(C::new(alpha, 0.0), &p);
        r.scaled_add(C::new(-alpha, 0.0), &ap);
        let next = dot(&r, &r).re;
        p = &r + &p.mapv(|v| v * (next / rr));
        rr = next;
        iterations += 1;
    }
    let residual = norm(&(&normal(&x) - &b)) / b_norm;
    Ok(Image {
        values: x.into_shape_with_order((n, n)).expect("pixel count"),
        iterations,
        residual,
    })
}

/// Weighted sum of per-frequency Tikhonov images (the imaging condition).
pub fn multifreq_image(
    data: &[ArrayView2<'_, C>],
    ops: &[FarFieldOperator],
    epsilon: f64,
    weights: &[f64],
    krylov: &KrylovConfig,
) -> Result<Image> {
    ensure!(!ops.is_empty(), "no frequencies to image");
    ensure!(
        data.len() == ops.len() && weights.len() == ops.len(),
        "{} data sets, {} operators and {} weights",
        data.len(),
        ops.len(),
        weights.len()
    );
    ensure!(
        weights.iter().all(|&w| w >= 0.0 && w.is_finite()),
        "weights must be nonnegative"
    );
    let raster = ops[0].raster;
    ensure!(
        ops.iter().all(|o| o.raster == raster),
        "operators disagree on the raster"
    );
    let images = data
        .par_iter()
        .zip(ops.par_iter())
        .zip(weights.par_iter())
        .map(|((d, op), &w)| {
            if w == 0.0 {
                Ok(None)
            } else {
                tikhonov_image(*d, op, epsilon, krylov).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Array2::zeros((raster.n, raster.n));
    let (mut iterations, mut residual) = (0, 0.0f64);
    for (img, &w) in images.iter().zip(weights) {
        if let Some(img) = img {
            values.scaled_add(C::new(w, 0.0), &img.values);
            iterations += img.iterations;
            residual = residual.max(img.residual);
        }
    }
    Ok(Image {
        values,
        iterations,
        residual,
    })
}

/// Uniform imaging-condition weights.
pub fn uniform_weights(count: usize) -> Vec<f64> {
    vec![1.0 / count as f64; count]
}

/// Row-major position of the largest entry.
pub fn argmax(values: &Array2<f64>) -> (usize, usize) {
    let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
    for ((i, j), &v) in values.indexed_iter() {
        if v > best {
            best = v;
            at = (i, j);
        }
    }
    at
}

fn half_width(line: &[f64], peak: usize) -> f64 {
    let half = line[peak] / 2.0;
    let crossing = |step: isize| {
        let mut k = peak as isize;
        loop {
            let next = k + step;
            if next < 0 || next as usize >= line.len() {
                return (k - peak as isize).unsigned_abs() as f64;
            }
            let (a, b) = (line[k as usize], line[next as usize]);
            if b <= half {
                let frac = (a - half) / (a - b);
                return (k - peak as isize).unsigned_abs() as f64 + frac;
            }
            k = next;
        }
    };
    crossing(-1) + crossing(1)
}

/// Full width at half maximum of the main lobe of `magnitude`, in pixels,
/// averaged over the two axes through the peak.
pub fn lobe_width(magnitude: &Array2<f64>) -> f64 {
    let (i, j) = argmax(magnitude);
    let row: Vec<f64> = magnitude.row(i).to_vec();
    let col: Vec<f64> = magnitude.column(j).to_vec();
    0.5 * (half_width(&row, j) + half_width(&col, i))
}
