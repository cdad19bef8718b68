use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

fn default_width() -> f64 {
    0.75
}

/// Gaussian smoothing applied to targets before the pixel loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    /// Standard deviation in grid points.
    #[serde(default = "default_width")]
    pub width: f64,
    /// Kernel radius in cells; `ceil(4 * width)` when absent.
    #[serde(default)]
    pub radius: Option<usize>,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            width: default_width(),
            radius: None,
        }
    }
}

impl LossSpec {
    pub fn radius(&self) -> usize {
        self.radius
            .unwrap_or_else(|| (4.0 * self.width).ceil() as usize)
    }

    /// Normalized `(2R+1) x (2R+1)` Gaussian kernel.
    pub fn kernel(&self) -> Result<Array2<f64>> {
        ensure!(
            self.width > 0.0,
            "kernel width must be positive, got {}",
            self.width
        );
        let r = self.radius() as isize;
        let two_var = 2.0 * self.width * self.width;
        let k = Array2::from_shape_fn(((2 * r + 1) as usize, (2 * r + 1) as usize), |(i, j)| {
            let (di, dj) = (i as isize - r, j as isize - r);
            (-((di * di + dj * dj) as f64) / two_var).exp()
        });
        let total = k.sum();
        Ok(k / total)
    }
}

/// Zero-padded 2D convolution of `eta` with the normalized Gaussian kernel.
pub fn smooth_target(eta: ArrayView2<'_, f64>, spec: &LossSpec) -> Result<Array2<f64>> {
    let k = spec.kernel()?;
    let r = spec.radius() as isize;
    let (h, w) = eta.dim();
    let mut out = Array2::zeros((h, w));
    for ((i, j), v) in eta.indexed_iter() {
        if *v == 0.0 {
            continue;
        }
        for di in -r..=r {
            let oi = i as isize + di;
            if oi < 0 || oi >= h as isize {
                continue;
            }
            for dj in -r..=r {
                let oj = j as isize + dj;
                if oj < 0 || oj >= w as isize {
                    continue;
                }
                out[[oi as usize, oj as usize]] += v * k[[(di + r) as usize, (dj + r) as usize]];
            }
        }
    }
    Ok(out)
}

fn squared_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    ensure!(
        a.dim() == b.dim(),
        "shape mismatch: {:?} vs {:?}",
        a.dim(),
        b.dim()
    );
    let mut acc = 0.0;
    Zip::from(a)
        .and(b)
        .for_each(|x, y| acc += (x - y) * (x - y));
    Ok(acc)
}

/// `Σ (smooth(η) − pred)²` over pixels.
pub fn pixel_loss(
    pred: ArrayView2<'_, f64>,
    eta: ArrayView2<'_, f64>,
    spec: &LossSpec,
) -> Result<f64> {
    ensure!(
        pred.dim() == eta.dim(),
        "shape mismatch: {:?} vs {:?}",
        pred.dim(),
        eta.dim()
    );
    let target = smooth_target(eta, spec)?;
    squared_distance(target.view(), pred)
}

/// `‖smooth(η) − pred‖² / ‖smooth(η)‖²`.
pub fn relative_loss(
    pred: ArrayView2<'_, f64>,
    eta: ArrayView2<'_, f64>,
    spec: &LossSpec,
) -> Result<f64> {
    ensure!(
        pred.dim() == eta.dim(),
        "shape mismatch: {:?} vs {:?}",
        pred.dim(),
        eta.dim()
    );
    let target = smooth_target(eta, spec)?;
    relative_to_target(pred, target.view())
}

/// Relative loss against an already smoothed target.
pub fn relative_to_target(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    let denom: f64 = target.iter().map(|v| v * v).sum();
    ensure!(denom > 0.0, "smoothed target is identically zero");
    Ok(squared_distance(target, pred)? / denom)
}
