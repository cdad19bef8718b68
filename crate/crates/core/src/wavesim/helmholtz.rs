use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

type C = Complex64;

/// Squared slowness `m = m0 + η` on an `n x n` cell-centred grid covering
/// `[lo, hi]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub m0: Array2<f64>,
    pub eta: Array2<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl Medium {
    pub fn new(m0: Array2<f64>, eta: Array2<f64>, lo: f64, hi: f64) -> Result<Self> {
        ensure!(
            m0.dim() == eta.dim(),
            "m0 {:?} and η {:?} differ in shape",
            m0.dim(),
            eta.dim()
        );
        ensure!(
            m0.nrows() == m0.ncols() && m0.nrows() > 0,
            "grid must be square and non-empty"
        );
        ensure!(hi > lo, "empty extent [{lo}, {hi}]");
        ensure!(
            m0.iter().all(|&v| v > 0.0 && v.is_finite()),
            "background squared slowness must be positive"
        );
        ensure!(
            eta.iter().all(|v| v.is_finite()),
            "perturbation must be finite"
        );
        Ok(Medium { m0, eta, lo, hi })
    }

    /// Constant background `m0` with perturbation `eta`.
    pub fn homogeneous(eta: Array2<f64>, m0: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::new(Array2::from_elem(eta.dim(), m0), eta, lo, hi)
    }

    pub fn side(&self) -> usize {
        self.m0.nrows()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.side() as f64
    }

    /// The same medium without the perturbation.
    pub fn background(&self) -> Medium {
        Medium {
            eta: Array2::zeros(self.eta.dim()),
            ..self.clone()
        }
    }
}

fn default_intensity() -> f64 {
    80.0
}

fn default_wavelengths() -> f64 {
    1.0
}

fn default_exponent() -> i32 {
    2
}

fn default_min_cells() -> usize {
    4
}

/// Perfectly matched layer with profile `σ(d) = intensity · (d/width)^exponent`
/// and complex stretching `s = 1 + iσ/ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlSpec {
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    /// Layer width in wavelengths at the reference frequency.
    #[serde(default = "default_wavelengths")]
    pub wavelengths: f64,
    #[serde(default = "default_exponent")]
    pub exponent: i32,
    #[serde(default = "default_min_cells")]
    pub min_cells: usize,
}

impl Default for PmlSpec {
    fn default() -> Self {
        PmlSpec {
            intensity: default_intensity(),
            wavelengths: default_wavelengths(),
            exponent: default_exponent(),
            min_cells: default_min_cells(),
        }
    }
}

impl PmlSpec {
    /// Cells needed to span `wavelengths` wavelengths at angular frequency
    /// `omega` in a medium of squared slowness `m`.
    pub fn cells(&self, omega: f64, m: f64, h: f64) -> usize {
        if omega <= 0.0 {
            return self.min_cells;
        }
        let lambda = 2.0 * PI / (omega * m.sqrt());
        ((self.wavelengths * lambda / h).ceil() as usize).max(self.min_cells)
    }
}

/// Extended computational grid: interior cells, then `pad` background cells,
/// then `pml` absorbing cells on every side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverGrid {
    pub n: usize,
    pub h: f64,
    pub lo: f64,
    pub pad: usize,
    pub pml: usize,
}

impl SolverGrid {
    pub fn total(&self) -> usize {
        self.n + 2 * (self.pad + self.pml)
    }

    pub fn unknowns(&self) -> usize {
        self.total() * self.total()
    }

    /// Coordinate of the centre of extended cell `e`.
    pub fn coord(&self, e: usize) -> f64 {
        self.lo + (e as f64 - (self.pad + self.pml) as f64 + 0.5) * self.h
    }

    /// Extended index of the cell containing coordinate `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let f = (x - self.coord(0)) / self.h + 0.5;
        (f >= 0.0 && (f as usize) < self.total()).then_some(f as usize)
    }

    fn inner_edges(&self) -> (f64, f64) {
        let lo = self.lo - self.pad as f64 * self.h;
        let hi = self.lo + (self.n + self.pad) as f64 * self.h;
        (lo, hi)
    }

    /// Bounds of the non-absorbing region.
    pub fn physical_bounds(&self) -> (f64, f64) {
        self.inner_edges()
    }

    fn width(&self) -> f64 {
        self.pml as f64 * self.h
    }

    fn depth(&self, x: f64) -> (f64, f64) {
        let (lo, hi) = self.inner_edges();
        if x < lo {
            (lo - x, -1.0)
        } else if x > hi {
            (x - hi, 1.0)
        } else {
            (0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Stretch<'a> {
    grid: &'a SolverGrid,
    spec: &'a PmlSpec,
    omega: f64,
}

impl Stretch<'_> {
    fn sigma(&self, x: f64) -> (f64, f64) {
        let (d, dir) = self.grid.depth(x);
        if d == 0.0 || self.grid.pml == 0 {
            return (0.0, 0.0);
        }
        let w = self.grid.width();
        let p = self.spec.exponent;
        let s = self.spec.intensity * (d / w).powi(p);
        let ds = self.spec.intensity * p as f64 * (d / w).powi(p - 1) / w * dir;
        (s, ds)
    }

    fn s(&self, x: f64) -> C {
        if self.omega == 0.0 {
            return C::new(1.0, 0.0);
        }
        C::new(1.0, self.sigma(x).0 / self.omega)
    }

    fn ds(&self, x: f64) -> C {
        if self.omega == 0.0 {
            return C::new(0.0, 0.0);
        }
        C::new(0.0, self.sigma(x).1 / self.omega)
    }
}

/// Finite-difference order of the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FdOrder {
    Second,
    Fourth,
}

impl TryFrom<u8> for FdOrder {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            2 => Ok(FdOrder::Second),
            4 => Ok(FdOrder::Fourth),
            _ => Err(Error::Config(format!(
                "finite-difference order must be 2 or 4, got {v}"
            ))),
        }
    }
}

impl From<FdOrder> for u8 {
    fn from(o: FdOrder) -> u8 {
        match o {
            FdOrder::Second => 2,
            FdOrder::Fourth => 4,
        }
    }
}

/// Assembled discretization of `Δ + ω² m` with PML on a [`SolverGrid`].
///
/// The second-order scheme uses the conservative stretched form
/// `∂x((s_z/s_x)∂x u) + ∂z((s_x/s_z)∂z u) + ω² m s_x s_z u = s_x s_z f`
/// with the 5-point stencil. The fourth-order scheme uses
/// `s_x⁻²u_xx − s_x' s_x⁻³ u_x + (same in z) + ω² m u = f` with 5-point
/// one-dimensional stencils in each direction. Both impose zero Dirichlet
/// values outside the extended grid.
#[derive(Debug, Clone)]
pub struct HelmholtzSystem {
    pub grid: SolverGrid,
    pub omega: f64,
    pub order: FdOrder,
    triplets: Vec<(usize, usize, C)>,
    /// Right-hand-side scaling `s_x s_z` per unknown (second order only).
    rhs_scale: Vec<C>,
}

/// Extended-grid squared slowness: the medium inside, the background's edge
/// values continued outward.
fn extended_slowness(med: &Medium, grid: &SolverGrid) -> Array2<f64> {
    let t = grid.total();
    let off = grid.pad + grid.pml;
    let n = grid.n;
    Array2::from_shape_fn((t, t), |(i, j)| {
        let ci = i.saturating_sub(off).min(n - 1);
        let cj = j.saturating_sub(off).min(n - 1);
        let inside = (off..off + n).contains(&i) && (off..off + n).contains(&j);
        med.m0[[ci, cj]] + if inside { med.eta[[ci, cj]] } else { 0.0 }
    })
}

/// Assembles the system for `med` at angular frequency `omega`.
/// `pad` cells of background surround the medium before a PML of
/// `pml_cells` cells.
pub fn build_helmholtz_system(
    med: &Medium,
    omega: f64,
    order: FdOrder,
    pml: &PmlSpec,
    pad: usize,
    pml_cells: usize,
) -> Result<HelmholtzSystem> {
    ensure!(
        omega >= 0.0 && omega.is_finite(),
        "frequency must be non-negative, got {omega}"
    );
    let h = med.spacing();
    let grid = SolverGrid {
        n: med.side(),
        h,
        lo: med.lo,
        pad,
        pml: pml_cells,
    };
    let m = extended_slowness(med, &grid);
    ensure!(
        m.iter().all(|&v| v > 0.0),
        "total squared slowness must stay positive"
    );
    let m_max = m.iter().cloned().fold(0.0, f64::max);
    if omega > 0.0 {
        let ppw = 2.0 * PI / (omega * m_max.sqrt() * h);
        if ppw < 4.0 {
            log::warn!("under-resolved grid: {ppw:.2} points per wavelength");
        }
    }
    let stretch = Stretch {
        grid: &grid,
        spec: pml,
        omega,
    };
    let t = grid.total();
    let idx = |i: usize, j: usize| i * t + j;
    let w2 = omega * omega;
    let inv_h2 = 1.0 / (h * h);
    let mut triplets = Vec::with_capacity(t * t * if order == FdOrder::Second { 5 } else { 9 });
    let mut rhs_scale = vec![C::new(1.0, 0.0); t * t];
    let coords: Vec<f64> = (0..t).map(|e| grid.coord(e)).collect();
    match order {
        FdOrder::Second => {
            let s_node: Vec<C> = coords.iter().map(|&x| stretch.s(x)).collect();
            let s_half: Vec<C> = (0..=t)
                .map(|e| stretch.s(grid.coord(0) + (e as f64 - 0.5) * h))
                .collect();
            for i in 0..t {
                for j in 0..t {
                    let p = idx(i, j);
                    let (sx, sz) = (s_node[i], s_node[j]);
                    // x faces at i-1/2 and i+1/2, z faces at j-1/2 and j+1/2
                    let ax_m = sz / s_half[i];
                    let ax_p = sz / s_half[i + 1];
                    let az_m = sx / s_half[j];
                    let az_p = sx / s_half[j + 1];
                    let diag = -(ax_m + ax_p + az_m + az_p) * inv_h2 + w2 * m[[i, j]] * sx * sz;
                    triplets.push((p, p, diag));
                    if i > 0 {
                        triplets.push((p, idx(i - 1, j), ax_m * inv_h2));
                    }
                    if i + 1 < t {
                        triplets.push((p, idx(i + 1, j), ax_p * inv_h2));
                    }
                    if j > 0 {
                        triplets.push((p, idx(i, j - 1), az_m * inv_h2));
                    }
                    if j + 1 < t {
                        triplets.push((p, idx(i, j + 1), az_p * inv_h2));
                    }
                    rhs_scale[p] = sx * sz;
                }
            }
        }
        FdOrder::Fourth => {
            const D2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
            const D1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
            // per-axis 1D operator coefficients for offsets -2..=2
            let coef: Vec<[C; 5]> = coords
                .iter()
                .map(|&x| {
                    let s = stretch.s(x);
                    let a = 1.0 / (s * s);
                    let b = -stretch.ds(x) / (s * s * s);
                    let mut c = [C::new(0.0, 0.0); 5];
                    for k in 0..5 {
                        c[k] = a * D2[k] / (12.0 * h * h) + b * D1[k] / (12.0 * h);
                    }
                    c
                })
                .collect();
            for i in 0..t {
                for j in 0..t {
                    let p = idx(i, j);
                    let diag = w2 * m[[i, j]] + coef[i][2] + coef[j][2];
                    for (k, off) in [(0usize, -2isize), (1, -1), (3, 1), (4, 2)] {
                        let ii = i as isize + off;
                        if ii >= 0 && (ii as usize) < t {
                            triplets.push((p, idx(ii as usize, j), coef[i][k]));
                        }
                        let jj = j as isize + off;
                        if jj >= 0 && (jj as usize) < t {
                            triplets.push((p, idx(i, jj as usize), coef[j][k]));
                        }
                    }
                    triplets.push((p, p, diag));
                }
            }
        }
    }
    Ok(HelmholtzSystem {
        grid,
        omega,
        order,
        triplets,
        rhs_scale,
    })
}

impl HelmholtzSystem {
    pub fn unknowns(&self) -> usize {
        self.grid.unknowns()
    }

    /// Nonzero entries `(row, col, value)`.
    pub fn entries(&self) -> &[(usize, usize, C)] {
        &self.triplets
    }

    /// Dense copy of row `p` restricted to its nonzeros.
    pub fn row(&self, p: usize) -> Vec<(usize, C)> {
        self.triplets
            .iter()
            .filter(|(r, _, _)| *r == p)
            .map(|&(_, c, v)| (c, v))
            .collect()
    }

    /// `A x`.
    pub fn apply(&self, x: &[C]) -> Vec<C> {
        let mut y = vec![C::new(0.0, 0.0); self.unknowns()];
        for &(r, c, v) in &self.triplets {
            y[r] += v * x[c];
        }
        y
    }

    /// Sparse LU factorization, reusable across right-hand sides.
    pub fn factorize(&self) -> Result<FactorizedSystem<'_>> {
        let n = self.unknowns();
        let trips: Vec<Triplet<usize, usize, C>> = self
            .triplets
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let a = SparseColMat::<usize, C>::try_new_from_triplets(n, n, &trips).map_err(|e| {
            Error::Solve {
                message: format!("assembly failed: {e:?}"),
                residual: f64::NAN,
            }
        })?;
        let lu = a.sp_lu().map_err(|e| Error::Solve {
            message: format!("sparse LU failed: {e:?}"),
            residual: f64::NAN,
        })?;
        Ok(FactorizedSystem { system: self, lu })
    }
}

/// A factorized [`HelmholtzSystem`].
pub struct FactorizedSystem<'a> {
    system: &'a HelmholtzSystem,
    lu: Lu<usize, C>,
}

/// Relative residual above which a solve is reported as failed.
const RESIDUAL_LIMIT: f64 = 1e-8;

impl FactorizedSystem<'_> {
    pub fn system(&self) -> &HelmholtzSystem {
        self.system
    }

    /// Solves `A u = s f` for several sources `f` given on the extended grid
    /// (the PML stretching factor `s` is applied here).
    pub fn solve_many(&self, sources: &[Vec<C>]) -> Result<Vec<Vec<C>>> {
        let n = self.system.unknowns();
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        for f in sources {
            ensure!(
                f.len() == n,
                "source has {} entries, system has {n}",
                f.len()
            );
        }
        let scale = &self.system.rhs_scale;
        let b = Mat::from_fn(n, sources.len(), |i, k| sources[k][i] * scale[i]);
        let x = self.lu.solve(&b);
        let mut out = Vec::with_capacity(sources.len());
        for k in 0..sources.len() {
            let u: Vec<C> = (0..n).map(|i| x[(i, k)]).collect();
            let bk: Vec<C> = (0..n).map(|i| b[(i, k)]).collect();
            let r = self.system.apply(&u);
            let bn = bk.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let rn = r
                .iter()
                .zip(&bk)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let rel = if bn > 0.0 { rn / bn } else { rn };
            if !rel.is_finite() || rel > RESIDUAL_LIMIT {
                return Err(Error::Solve {
                    message: "residual too large".into(),
                    residual: rel,
                });
            }
            out.push(u);
        }
        Ok(out)
    }

    pub fn solve(&self, source: &[C]) -> Result<Vec<C>> {
        Ok(self
            .solve_many(std::slice::from_ref(&source.to_vec()))?
            .remove(0))
    }
}

/// A field on the extended grid of a [`SolverGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: SolverGrid,
    pub values: Array2<C>,
}

impl Field {
    pub fn from_flat(grid: SolverGrid, values: Vec<C>) -> Self {
        let t = grid.total();
        Field {
            grid,
            values: Array2::from_shape_vec((t, t), values).expect("field length"),
        }
    }

    /// Restriction to the `n x n` interior.
    pub fn interior(&self) -> Array2<C> {
        let off = self.grid.pad + self.grid.pml;
        let n = self.grid.n;
        self.values
            .slice(ndarray::s![off..off + n, off..off + n])
            .to_owned()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Right-hand side `−ω² η e^{iω s·x}` on the extended grid (zero outside
/// the medium).
pub fn planewave_source(med: &Medium, grid: &SolverGrid, omega: f64, dir: [f64; 2]) -> Vec<C> {
    let t = grid.total();
    let off = grid.pad + grid.pml;
    let mut f = vec![C::new(0.0, 0.0); t * t];
    for ((i, j), &e) in med.eta.indexed_iter() {
        if e == 0.0 {
            continue;
        }
        let (x, z) = (grid.coord(i + off), grid.coord(j + off));
        let phase = omega * (dir[0] * x + dir[1] * z);
        f[(i + off) * t + j + off] = -omega * omega * e * C::from_polar(1.0, phase);
    }
    f
}

/// Numerical delta `−1/h²` at the cell nearest `pos` (so the solution
/// approximates the Green's function of `−δ`).
pub fn point_source(grid: &SolverGrid, pos: [f64; 2]) -> Result<Vec<C>> {
    let (lo, hi) = grid.physical_bounds();
    ensure!(
        pos.iter().all(|&p| p >= lo && p <= hi),
        "source ({}, {}) outside the non-absorbing region [{lo}, {hi}]²",
        pos[0],
        pos[1]
    );
    let i = grid.cell_of(pos[0]).expect("inside grid");
    let j = grid.cell_of(pos[1]).expect("inside grid");
    let t = grid.total();
    let mut f = vec![C::new(0.0, 0.0); t * t];
    f[i * t + j] = C::new(-1.0 / (grid.h * grid.h), 0.0);
    Ok(f)
}

/// Scattered field of a plane wave with direction `dir` (unit vector).
pub fn solve_scattered_planewave(
    med: &Medium,
    omega: f64,
    dir: [f64; 2],
    order: FdOrder,
    pml: &PmlSpec,
    pad: usize,
    pml_cells: usize,
) -> Result<Field> {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    ensure!(
        (norm - 1.0).abs() < 1e-12,
        "direction must be a unit vector, |s| = {norm}"
    );
    let sys = build_helmholtz_system(med, omega, order, pml, pad, pml_cells)?;
    let f = planewave_source(med, &sys.grid, omega, dir);
    let u = sys.factorize()?.solve(&f)?;
    Ok(Field::from_flat(sys.grid, u))
}

/// Total field of a numerical point source in `med`.
pub fn solve_pointsource(
    med: &Medium,
    omega: f64,
    src: [f64; 2],
    order: FdOrder,
    pml: &PmlSpec,
    pad: usize,
    pml_cells: usize,
) -> Result<Field> {
    let sys = build_helmholtz_system(med, omega, order, pml, pad, pml_cells)?;
    let f = point_source(&sys.grid, src)?;
    let u = sys.factorize()?.solve(&f)?;
    Ok(Field::from_flat(sys.grid, u))
}

/// Scattered field of a point source: the solve with `η` minus the solve
/// without it.
pub fn solve_scattered_pointsource(
    med: &Medium,
    omega: f64,
    src: [f64; 2],
    order: FdOrder,
    pml: &PmlSpec,
    pad: usize,
    pml_cells: usize,
) -> Result<Field> {
    let total = solve_pointsource(med, omega, src, order, pml, pad, pml_cells)?;
    let background = solve_pointsource(&med.background(), omega, src, order, pml, pad, pml_cells)?;
    Ok(Field {
        grid: total.grid,
        values: total.values - background.values,
    })
}

/// Interior-grid view helper used by tests and imaging: cell-centre
/// coordinates of an `n`-cell axis on `[lo, hi]`.
pub fn cell_centres(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
}
