use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::helmholtz::Field;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionMode {
    PlaneWave,
    PointSource,
}

fn default_receiver_radius() -> f64 {
    0.5
}

fn default_source_radius() -> f64 {
    1.0
}

/// Equiangular sources and receivers on circles around the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub n_src: usize,
    pub n_rcv: usize,
    #[serde(default = "default_receiver_radius")]
    pub receiver_radius: f64,
    #[serde(default = "default_source_radius")]
    pub source_radius: f64,
    pub mode: AcquisitionMode,
}

impl AcquisitionGeometry {
    pub fn plane_wave(n: usize, receiver_radius: f64) -> Self {
        AcquisitionGeometry {
            n_src: n,
            n_rcv: n,
            receiver_radius,
            source_radius: default_source_radius(),
            mode: AcquisitionMode::PlaneWave,
        }
    }

    fn angle(k: usize, n: usize) -> f64 {
        2.0 * PI * k as f64 / n as f64
    }

    /// Unit direction of receiver `k`.
    pub fn receiver_direction(&self, k: usize) -> [f64; 2] {
        let t = Self::angle(k, self.n_rcv);
        [t.cos(), t.sin()]
    }

    pub fn receiver_position(&self, k: usize) -> [f64; 2] {
        let d = self.receiver_direction(k);
        [self.receiver_radius * d[0], self.receiver_radius * d[1]]
    }

    /// Propagation direction of plane wave `k`.
    pub fn source_direction(&self, k: usize) -> [f64; 2] {
        let t = Self::angle(k, self.n_src);
        [t.cos(), t.sin()]
    }

    /// Position of point source `k`.
    pub fn source_position(&self, k: usize) -> [f64; 2] {
        let d = self.source_direction(k);
        [self.source_radius * d[0], self.source_radius * d[1]]
    }
}

/// Bilinear interpolation of a field at physical position `pos`.
pub fn interpolate(field: &Field, pos: [f64; 2]) -> Result<Complex64> {
    let g = &field.grid;
    let first = g.coord(0);
    let last = g.coord(g.total() - 1);
    ensure!(
        pos.iter().all(|&p| p >= first && p <= last),
        "point ({}, {}) outside the sampled grid [{first}, {last}]²",
        pos[0],
        pos[1]
    );
    let fi = (pos[0] - first) / g.h;
    let fj = (pos[1] - first) / g.h;
    let i0 = (fi.floor() as usize).min(g.total() - 2);
    let j0 = (fj.floor() as usize).min(g.total() - 2);
    let (ti, tj) = (fi - i0 as f64, fj - j0 as f64);
    let v = &field.values;
    Ok(v[[i0, j0]] * ((1.0 - ti) * (1.0 - tj))
        + v[[i0 + 1, j0]] * (ti * (1.0 - tj))
        + v[[i0, j0 + 1]] * ((1.0 - ti) * tj)
        + v[[i0 + 1, j0 + 1]] * (ti * tj))
}

/// Field values at every receiver.
pub fn sample_receivers(field: &Field, geom: &AcquisitionGeometry) -> Result<Vec<Complex64>> {
    (0..geom.n_rcv)
        .map(|k| interpolate(field, geom.receiver_position(k)))
        .collect()
}
