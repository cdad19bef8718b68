use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Triangle,
    Gaussian,
}

/// One object of the scatterer dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub shape: ShapeKind,
    /// Base length (square, triangle) or standard deviation (gaussian) in
    /// pixels.
    pub char_length: f64,
    pub position: [f64; 2],
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
    pub amplitude: f64,
}

/// Cell-centred raster geometry: `n x n` cells covering `[lo, hi]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raster {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Raster {
    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn centre(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.h()
    }

    /// Pixel containing `x`, clamped to the grid.
    pub fn pixel_of(&self, x: f64) -> usize {
        (((x - self.lo) / self.h()).floor().max(0.0) as usize).min(self.n - 1)
    }
}

fn inside(s: &Scatterer, u: f64, v: f64, h: f64) -> bool {
    let a = s.char_length * h;
    match s.shape {
        ShapeKind::Square => u.abs() <= a / 2.0 && v.abs() <= a / 2.0,
        ShapeKind::Triangle => {
            // equilateral, base parallel to the first axis, apex along +v,
            // centred on its centroid
            let height = a * 3f64.sqrt() / 2.0;
            let base = -height / 3.0;
            let apex = 2.0 * height / 3.0;
            if v < base || v > apex {
                return false;
            }
            let half_width = (a / 2.0) * (apex - v) / height;
            u.abs() <= half_width
        }
        ShapeKind::Gaussian => unreachable!("gaussians are not indicators"),
    }
}

/// Adds the contribution of `s` to `eta` (rasterization is additive).
pub fn rasterize_into(eta: &mut Array2<f64>, raster: &Raster, s: &Scatterer) -> Result<()> {
    ensure!(eta.dim() == (raster.n, raster.n), "raster shape mismatch");
    ensure!(
        s.char_length > 0.0,
        "characteristic length must be positive"
    );
    let h = raster.h();
    let (c, sn) = (s.rotation.cos(), s.rotation.sin());
    for ((i, j), e) in eta.indexed_iter_mut() {
        let dx = raster.centre(i) - s.position[0];
        let dz = raster.centre(j) - s.position[1];
        match s.shape {
            ShapeKind::Gaussian => {
                let sigma = s.char_length * h;
                *e += s.amplitude * (-(dx * dx + dz * dz) / (2.0 * sigma * sigma)).exp();
            }
            _ => {
                // rotate the offset into the shape's frame
                let u = c * dx + sn * dz;
                let v = -sn * dx + c * dz;
                if inside(s, u, v, h) {
                    *e += s.amplitude;
                }
            }
        }
    }
    Ok(())
}

/// Raster of a single scatterer.
pub fn rasterize_scatterer(raster: &Raster, s: &Scatterer) -> Result<Array2<f64>> {
    let mut eta = Array2::zeros((raster.n, raster.n));
    rasterize_into(&mut eta, raster, s)?;
    Ok(eta)
}
