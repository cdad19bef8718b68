//! The wide-band butterfly network.
//!
//! Data flow for a grid with `L` levels:
//! `V^L` compresses the highest band into the level-`L` trunk; each `H^ℓ`
//! (ℓ = L-1 … L/2) decimates the trunk by four along the Morton axis while
//! injecting the compressed band `V^ℓ`; the switch-resnet mixes globally at
//! level `L/2`; each `G^ℓ` (ℓ = L/2 … L-1) expands back; `U` decodes every
//! leaf to its `s x s` pixels; a small CNN post-processes the image.
//!
//! Trunk channels at level ℓ are `c_ℓ = 4^(L-ℓ) · 2r · ν_ℓ` with
//! `ν_ℓ = Σ_{i≥ℓ} n_ω^i` (the factor 2 carries real and imaginary parts).

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{
    cells_at, perm_indices, switch_indices, tile_morton, untile_morton, GridSpec, MortonTensor,
    PermIndex,
};
use crate::tensornet::{relu, Conv2d, Parameters, PatchAffine, Real, ResUnit, ResUnitCache};

fn default_cnn_layers() -> usize {
    3
}

fn default_res_units() -> usize {
    3
}

fn default_cnn_kernel() -> usize {
    5
}

fn default_cnn_width() -> usize {
    16
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WideBNetConfig {
    pub grid: GridSpec,
    /// Compression rank `r`.
    pub rank: usize,
    /// `n_ω^ℓ` for ℓ = L/2 … L (index 0 is the coarsest level).
    pub band_sizes: Vec<usize>,
    #[serde(default = "default_cnn_layers")]
    pub cnn_layers: usize,
    #[serde(default = "default_res_units")]
    pub res_units: usize,
    #[serde(default = "default_cnn_kernel")]
    pub cnn_kernel: usize,
    #[serde(default = "default_cnn_width")]
    pub cnn_width: usize,
    /// Align the H/G blocks with the butterfly sparsity via `perm_indices`.
    #[serde(default)]
    pub strict_butterfly: bool,
    /// Replace the switch permutation with the identity when false.
    #[serde(default = "default_true")]
    pub use_switch: bool,
}

impl WideBNetConfig {
    pub fn new(grid: GridSpec, rank: usize, band_sizes: Vec<usize>) -> Result<Self> {
        let cfg = WideBNetConfig {
            grid,
            rank,
            band_sizes,
            cnn_layers: default_cnn_layers(),
            res_units: default_res_units(),
            cnn_kernel: default_cnn_kernel(),
            cnn_width: default_cnn_width(),
            strict_butterfly: false,
            use_switch: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.rank == 0 {
            return err("rank must be at least 1".into());
        }
        let expected = self.grid.levels() / 2 + 1;
        if self.band_sizes.len() != expected {
            return err(format!(
                "expected {expected} band sizes (levels {}..={}), got {}",
                self.grid.mid_level(),
                self.grid.levels(),
                self.band_sizes.len()
            ));
        }
        if *self.band_sizes.last().expect("non-empty") == 0 {
            return err("the finest band must hold at least one frequency".into());
        }
        if self.cnn_kernel % 2 == 0 {
            return err(format!("CNN kernel {} must be odd", self.cnn_kernel));
        }
        if self.cnn_layers > 1 && self.cnn_width == 0 {
            return err("CNN width must be positive".into());
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.grid.levels()
    }

    pub fn mid(&self) -> usize {
        self.grid.mid_level()
    }

    /// `n_ω^ℓ`.
    pub fn band_size(&self, level: usize) -> usize {
        self.band_sizes[level - self.mid()]
    }

    /// `ν_ℓ = Σ_{i=ℓ}^{L} n_ω^i`.
    pub fn cumulative_bands(&self, level: usize) -> usize {
        self.band_sizes[level - self.mid()..].iter().sum()
    }

    /// Channels `2r·n_ω^ℓ` produced by `V^ℓ`.
    pub fn band_channels(&self, level: usize) -> usize {
        2 * self.rank * self.band_size(level)
    }

    /// Channels per box, `ρ_ℓ = 2r·ν_ℓ`.
    pub fn block_rank(&self, level: usize) -> usize {
        2 * self.rank * self.cumulative_bands(level)
    }

    /// Trunk channels `c_ℓ = 4^(L-ℓ)·ρ_ℓ`.
    pub fn trunk_channels(&self, level: usize) -> usize {
        cells_at(self.levels() - level) * self.block_rank(level)
    }

    /// Side of the square block compressed by one `V^ℓ` patch.
    pub fn tile_side(&self, level: usize) -> usize {
        self.grid.block_side(level)
    }

    /// Real values per `V^ℓ` patch.
    pub fn v_in_dim(&self, level: usize) -> usize {
        let b = self.tile_side(level);
        b * b * 2 * self.band_size(level)
    }

    fn cnn_channels(&self) -> Vec<(usize, usize)> {
        let n = self.cnn_layers;
        (0..n)
            .map(|i| {
                let cin = if i == 0 { 1 } else { self.cnn_width };
                let cout = if i + 1 == n { 1 } else { self.cnn_width };
                (cin, cout)
            })
            .collect()
    }
}

fn affine_count(groups: usize, in_dim: usize, out_dim: usize) -> usize {
    groups * out_dim * (in_dim + 1)
}

/// Exact number of trainable scalars, computed from shapes alone.
pub fn param_count(cfg: &WideBNetConfig) -> usize {
    let l = cfg.levels();
    let mid = cfg.mid();
    let mut total = 0;
    for level in mid..=l {
        if cfg.band_size(level) > 0 {
            total += affine_count(
                cells_at(level),
                cfg.v_in_dim(level),
                cfg.band_channels(level),
            );
        }
    }
    for level in mid..l {
        total += if cfg.strict_butterfly {
            affine_count(
                cells_at(l - 1),
                4 * cfg.block_rank(level + 1) + 4 * cfg.band_channels(level),
                4 * cfg.block_rank(level),
            ) + affine_count(
                cells_at(l - 1),
                4 * cfg.block_rank(level),
                4 * cfg.block_rank(level + 1),
            )
        } else {
            affine_count(
                cells_at(level),
                4 * (cfg.trunk_channels(level + 1) + cfg.band_channels(level)),
                cfg.trunk_channels(level),
            ) + affine_count(
                cells_at(level),
                cfg.trunk_channels(level),
                4 * cfg.trunk_channels(level + 1),
            )
        };
    }
    let cm = cfg.trunk_channels(mid);
    total += (1 + cfg.res_units) * affine_count(cells_at(mid), cm, cm);
    let s2 = cfg.grid.leaf() * cfg.grid.leaf();
    total += affine_count(cells_at(l), cfg.trunk_channels(l), s2);
    let k2 = cfg.cnn_kernel * cfg.cnn_kernel;
    total += cfg
        .cnn_channels()
        .iter()
        .map(|&(ci, co)| k2 * ci * co + co)
        .sum::<usize>();
    total
}

/// All trainable arrays of a WideBNet, addressable per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WideBNetParams<T> {
    config: WideBNetConfig,
    /// `V^ℓ` for ℓ = L/2 … L; `None` for empty bands.
    pub v: Vec<Option<PatchAffine<T>>>,
    /// `H^ℓ` for ℓ = L/2 … L-1.
    pub h: Vec<PatchAffine<T>>,
    pub switch_mix: PatchAffine<T>,
    pub res: Vec<ResUnit<T>>,
    /// `G^ℓ` for ℓ = L/2 … L-1.
    pub g: Vec<PatchAffine<T>>,
    pub u: PatchAffine<T>,
    pub cnn: Vec<Conv2d<T>>,
}

enum Init<'a, R: ?Sized> {
    Zeros,
    Glorot(&'a mut R),
}

impl<R: Rng + ?Sized> Init<'_, R> {
    fn affine<T: Real>(
        &mut self,
        groups: usize,
        kernel: usize,
        c_in: usize,
        out: usize,
    ) -> PatchAffine<T> {
        match self {
            Init::Zeros => PatchAffine::zeros(groups, kernel, c_in, out),
            Init::Glorot(rng) => PatchAffine::glorot(groups, kernel, c_in, out, &mut **rng),
        }
    }

    fn conv<T: Real>(&mut self, k: usize, c_in: usize, c_out: usize) -> Conv2d<T> {
        match self {
            Init::Zeros => Conv2d::zeros(k, k, c_in, c_out),
            Init::Glorot(rng) => Conv2d::glorot(k, c_in, c_out, &mut **rng),
        }
    }
}

impl<T: Real> WideBNetParams<T> {
    /// Glorot-uniform initialization; layers are drawn in forward order.
    pub fn init<R: Rng + ?Sized>(config: &WideBNetConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, Init::Glorot(rng))
    }

    pub fn zeros(config: &WideBNetConfig) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(config, Init::Zeros)
    }

    fn build<R: Rng + ?Sized>(cfg: &WideBNetConfig, mut init: Init<'_, R>) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.levels();
        let mid = cfg.mid();
        let v = (mid..=l)
            .rev()
            .map(|level| {
                (cfg.band_size(level) > 0).then(|| {
                    init.affine(
                        cells_at(level),
                        1,
                        cfg.v_in_dim(level),
                        cfg.band_channels(level),
                    )
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let h = (mid..l)
            .rev()
            .map(|level| {
                if cfg.strict_butterfly {
                    init.affine(
                        cells_at(l - 1),
                        1,
                        4 * cfg.block_rank(level + 1) + 4 * cfg.band_channels(level),
                        4 * cfg.block_rank(level),
                    )
                } else {
                    init.affine(
                        cells_at(level),
                        4,
                        cfg.trunk_channels(level + 1) + cfg.band_channels(level),
                        cfg.trunk_channels(level),
                    )
                }
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let cm = cfg.trunk_channels(mid);
        let switch_mix = init.affine(cells_at(mid), 1, cm, cm);
        let res = (0..cfg.res_units)
            .map(|_| ResUnit::new(init.affine(cells_at(mid), 1, cm, cm)))
            .collect::<Result<_>>()?;
        let g = (mid..l)
            .map(|level| {
                if cfg.strict_butterfly {
                    init.affine(
                        cells_at(l - 1),
                        1,
                        4 * cfg.block_rank(level),
                        4 * cfg.block_rank(level + 1),
                    )
                } else {
                    init.affine(
                        cells_at(level),
                        1,
                        cfg.trunk_channels(level),
                        4 * cfg.trunk_channels(level + 1),
                    )
                }
            })
            .collect();
        let s2 = cfg.grid.leaf() * cfg.grid.leaf();
        let u = init.affine(cells_at(l), 1, cfg.trunk_channels(l), s2);
        let cnn = cfg
            .cnn_channels()
            .into_iter()
            .map(|(ci, co)| init.conv(cfg.cnn_kernel, ci, co))
            .collect();
        Ok(WideBNetParams {
            config: cfg.clone(),
            v,
            h,
            switch_mix,
            res,
            g,
            u,
            cnn,
        })
    }

    pub fn config(&self) -> &WideBNetConfig {
        &self.config
    }

    /// Same architecture with all parameters set to zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Overwrites every array, in visiting order, from `arrays`.
    pub fn load_arrays<U: Real>(&mut self, arrays: &[ndarray::ArrayD<U>]) -> Result<()> {
        let mut it = arrays.iter();
        let mut failure = None;
        self.visit_mut(&mut |name, mut dst| match it.next() {
            Some(src) if src.shape() == dst.shape() => {
                dst.zip_mut_with(src, |d, &s| *d = T::from(s).expect("float cast"));
            }
            Some(src) => {
                failure.get_or_insert(format!(
                    "array {name}: shape {:?} does not match {:?}",
                    src.shape(),
                    dst.shape()
                ));
            }
            None => {
                failure.get_or_insert(format!("missing array for {name}"));
            }
        });
        if let Some(f) = failure {
            return Err(Error::Config(f));
        }
        ensure!(it.next().is_none(), "more arrays supplied than parameters");
        Ok(())
    }

    /// Converts to another floating-point precision.
    pub fn cast<U: Real>(&self) -> WideBNetParams<U> {
        let mut out = WideBNetParams::<U>::zeros(&self.config).expect("config already validated");
        out.load_arrays(&self.to_arrays())
            .expect("identical architecture");
        out
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        let src = other.to_arrays();
        let mut i = 0;
        self.visit_mut(&mut |_, mut dst| {
            dst.scaled_add(alpha, &src[i]);
            i += 1;
        });
    }

    /// Tiles per-level band data `[n, n, 2n_ω^ℓ]` (ℓ = L/2 … L) into the
    /// Morton layout expected by `V^ℓ`: `[4^ℓ, tile² · 2n_ω^ℓ]`.
    pub fn tile_bands(&self, bands: &[ArrayView3<'_, T>]) -> Result<Vec<Array2<T>>> {
        tile_bands(&self.config, bands)
    }
}

/// See [`WideBNetParams::tile_bands`].
pub fn tile_bands<T: Real>(
    cfg: &WideBNetConfig,
    bands: &[ArrayView3<'_, T>],
) -> Result<Vec<Array2<T>>> {
    ensure!(
        bands.len() == cfg.band_sizes.len(),
        "expected {} bands, got {}",
        cfg.band_sizes.len(),
        bands.len()
    );
    let n = cfg.grid.side();
    cfg.grid
        .band_levels()
        .zip(bands)
        .map(|(level, band)| {
            let c = 2 * cfg.band_size(level);
            ensure!(
                band.dim() == (n, n, c),
                "band at level {level} has shape {:?}, expected ({n}, {n}, {c})",
                band.dim()
            );
            if c == 0 {
                return Ok(Array2::zeros((cells_at(level), 0)));
            }
            tile_morton(*band, level)
        })
        .collect()
}

/// Stacks per-sample tiled bands into batched `[batch, 4^ℓ, dim]` arrays.
pub fn stack_batch<T: Real>(samples: &[&[Array2<T>]]) -> Result<Vec<Array3<T>>> {
    ensure!(!samples.is_empty(), "empty batch");
    let levels = samples[0].len();
    (0..levels)
        .map(|i| {
            let views: Vec<ArrayView2<'_, T>> = samples.iter().map(|s| s[i].view()).collect();
            ndarray::stack(Axis(0), &views)
                .map_err(|e| Error::Domain(format!("batch stacking failed: {e}")))
        })
        .collect()
}

impl<T: Real> Parameters<T> for WideBNetParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, T>)) {
        let mid = self.config.mid();
        for (i, v) in self.v.iter().enumerate() {
            if let Some(v) = v {
                v.visit(&mut |n, a| f(&format!("v{}.{n}", mid + i), a));
            }
        }
        for (i, h) in self.h.iter().enumerate() {
            h.visit(&mut |n, a| f(&format!("h{}.{n}", mid + i), a));
        }
        self.switch_mix
            .visit(&mut |n, a| f(&format!("switch.{n}"), a));
        for (i, r) in self.res.iter().enumerate() {
            r.visit(&mut |n, a| f(&format!("res{i}.{n}"), a));
        }
        for (i, g) in self.g.iter().enumerate() {
            g.visit(&mut |n, a| f(&format!("g{}.{n}", mid + i), a));
        }
        self.u.visit(&mut |n, a| f(&format!("u.{n}"), a));
        for (i, c) in self.cnn.iter().enumerate() {
            c.visit(&mut |n, a| f(&format!("cnn{i}.{n}"), a));
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'a, T>)) {
        let mid = self.config.mid();
        for (i, v) in self.v.iter_mut().enumerate() {
            if let Some(v) = v {
                v.visit_mut(&mut |n, a| f(&format!("v{}.{n}", mid + i), a));
            }
        }
        for (i, h) in self.h.iter_mut().enumerate() {
            h.visit_mut(&mut |n, a| f(&format!("h{}.{n}", mid + i), a));
        }
        self.switch_mix
            .visit_mut(&mut |n, a| f(&format!("switch.{n}"), a));
        for (i, r) in self.res.iter_mut().enumerate() {
            r.visit_mut(&mut |n, a| f(&format!("res{i}.{n}"), a));
        }
        for (i, g) in self.g.iter_mut().enumerate() {
            g.visit_mut(&mut |n, a| f(&format!("g{}.{n}", mid + i), a));
        }
        self.u.visit_mut(&mut |n, a| f(&format!("u.{n}"), a));
        for (i, c) in self.cnn.iter_mut().enumerate() {
            c.visit_mut(&mut |n, a| f(&format!("cnn{i}.{n}"), a));
        }
    }
}

/// Intermediate values recorded by a taped forward pass, sufficient for the
/// exact reverse pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    batch: usize,
    /// Tiled band inputs, per level.
    v_in: Vec<Array3<T>>,
    /// Inputs to each `H^ℓ` affine (after repetition/gather).
    h_in: Vec<Array3<T>>,
    /// Input to the switch mixing affine (after the permutation).
    switch_in: Array3<T>,
    res: Vec<ResUnitCache<T>>,
    /// Inputs to each `G^ℓ` affine.
    g_in: Vec<Array3<T>>,
    u_in: Array3<T>,
    /// Inputs to each convolution.
    cnn_in: Vec<Array4<T>>,
}

fn layer_err(name: String) -> impl FnOnce(Error) -> Error {
    move |e| e.in_layer(name)
}

/// Flat per-sample gather along the trailing two axes of `[batch, a, b]`.
fn permute_batch<T: Real>(
    x: &Array3<T>,
    pi: &PermIndex,
    inverse: bool,
    shape: (usize, usize),
) -> Array3<T> {
    let b = x.dim().0;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let m = pi.len();
    let mut out = vec![T::zero(); b * m];
    for k in 0..b {
        let src = &xs[k * m..(k + 1) * m];
        let dst = &mut out[k * m..(k + 1) * m];
        if inverse {
            pi.scatter_into(src, dst);
        } else {
            pi.gather_into(src, dst);
        }
    }
    Array3::from_shape_vec((b, shape.0, shape.1), out).expect("permutation preserves length")
}

impl<T: Real> WideBNetParams<T> {
    fn check_inputs(&self, tiles: &[Array3<T>]) -> Result<usize> {
        let cfg = &self.config;
        ensure!(
            tiles.len() == cfg.band_sizes.len(),
            "expected {} band inputs, got {}",
            cfg.band_sizes.len(),
            tiles.len()
        );
        let batch = tiles[0].dim().0;
        ensure!(batch > 0, "empty batch");
        for (level, t) in cfg.grid.band_levels().zip(tiles) {
            let want = (
                batch,
                cells_at(level),
                if cfg.band_size(level) > 0 {
                    cfg.v_in_dim(level)
                } else {
                    0
                },
            );
            ensure!(
                t.dim() == want,
                "band input at level {level} has shape {:?}, expected {want:?}",
                t.dim()
            );
        }
        Ok(batch)
    }

    fn idx(&self, level: usize) -> usize {
        level - self.config.mid()
    }

    /// `V^ℓ` on a batch of tiled band data.
    pub fn v_batch(&self, level: usize, tiles: &Array3<T>) -> Result<Option<Array3<T>>> {
        match &self.v[self.idx(level)] {
            Some(v) => v
                .forward(tiles.view())
                .map(Some)
                .map_err(layer_err(format!("v{level}"))),
            None => Ok(None),
        }
    }

    /// Builds the `H^ℓ` affine input from the level-(ℓ+1) trunk and the band.
    fn h_input(
        &self,
        level: usize,
        trunk: &Array3<T>,
        band: Option<&Array3<T>>,
    ) -> Result<Array3<T>> {
        let cfg = &self.config;
        let l = cfg.levels();
        let (b, cells, c) = trunk.dim();
        ensure!(
            cells == cells_at(level + 1) && c == cfg.trunk_channels(level + 1),
            "trunk at level {} has shape ({cells}, {c}), expected ({}, {})",
            level + 1,
            cells_at(level + 1),
            cfg.trunk_channels(level + 1)
        );
        let bc = cfg.band_channels(level);
        if let Some(band) = band {
            ensure!(
                band.dim() == (b, cells_at(level), bc),
                "band at level {level} has shape {:?}",
                band.dim()
            );
        }
        if cfg.strict_butterfly {
            let rho = cfg.block_rank(level + 1);
            let pi = perm_indices(&cfg.grid, level, rho)?;
            let blocks = cells_at(l - 1);
            let boxes = cells_at(l - level - 1);
            let gathered = permute_batch(trunk, &pi, false, (blocks, 4 * rho));
            let mut x = Array3::zeros((b, blocks, 4 * rho + 4 * bc));
            x.slice_mut(s![.., .., ..4 * rho]).assign(&gathered);
            if let Some(band) = band {
                for blk in 0..blocks {
                    let parent = blk / boxes;
                    for rep in 0..4 {
                        let off = 4 * rho + rep * bc;
                        x.slice_mut(s![.., blk, off..off + bc])
                            .assign(&band.slice(s![.., parent, ..]));
                    }
                }
            }
            Ok(x)
        } else {
            let mut x = Array3::zeros((b, cells, c + bc));
            x.slice_mut(s![.., .., ..c]).assign(trunk);
            if let Some(band) = band {
                for cell in 0..cells {
                    x.slice_mut(s![.., cell, c..])
                        .assign(&band.slice(s![.., cell / 4, ..]));
                }
            }
            Ok(x)
        }
    }

    /// `H^ℓ`: level-(ℓ+1) trunk plus band → level-ℓ trunk.
    pub fn h_batch(
        &self,
        level: usize,
        trunk: &Array3<T>,
        band: Option<&Array3<T>>,
    ) -> Result<Array3<T>> {
        let x = self
            .h_input(level, trunk, band)
            .map_err(layer_err(format!("h{level}")))?;
        self.h_apply(level, &x)
    }

    fn h_apply(&self, level: usize, x: &Array3<T>) -> Result<Array3<T>> {
        let y = self.h[self.idx(level)]
            .forward(x.view())
            .map_err(layer_err(format!("h{level}")))?;
        let b = y.dim().0;
        Ok(
            y.into_shape_with_order((b, cells_at(level), self.config.trunk_channels(level)))
                .expect("contiguous"),
        )
    }

    fn switch_perm(&self) -> Result<Option<PermIndex>> {
        if !self.config.use_switch {
            return Ok(None);
        }
        let rho = self.config.block_rank(self.config.mid());
        switch_indices(&self.config.grid, rho).map(Some)
    }

    /// Switch permutation, channel-preserving mix and residual units.
    pub fn switch_resnet_batch(&self, trunk: &Array3<T>) -> Result<Array3<T>> {
        self.switch_forward(trunk, None)
    }

    fn switch_forward(
        &self,
        trunk: &Array3<T>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Array3<T>> {
        let cfg = &self.config;
        let (_, cells, c) = trunk.dim();
        ensure!(
            cells == cells_at(cfg.mid()) && c == cfg.trunk_channels(cfg.mid()),
            "switch input has shape ({cells}, {c})"
        );
        let permuted = match self.switch_perm()? {
            Some(pi) => permute_batch(trunk, &pi, false, (cells, c)),
            None => trunk.clone(),
        };
        let mut x = self
            .switch_mix
            .forward(permuted.view())
            .map_err(layer_err("switch".into()))?;
        if let Some(t) = tape.as_deref_mut() {
            t.switch_in = permuted;
        }
        for (i, unit) in self.res.iter().enumerate() {
            let (y, cache) = unit
                .forward_cached(x.view())
                .map_err(layer_err(format!("res{i}")))?;
            if let Some(t) = tape.as_deref_mut() {
                t.res.push(cache);
            }
            x = y;
        }
        Ok(x)
    }

    /// Builds the `G^ℓ` affine input from the level-ℓ trunk.
    fn g_input(&self, level: usize, trunk: &Array3<T>) -> Result<Array3<T>> {
        let cfg = &self.config;
        let (b, cells, c) = trunk.dim();
        ensure!(
            cells == cells_at(level) && c == cfg.trunk_channels(level),
            "trunk at level {level} has shape ({cells}, {c})"
        );
        if cfg.strict_butterfly {
            let blocks = cells_at(cfg.levels() - 1);
            let t = trunk.as_standard_layout().into_owned();
            Ok(
                t.into_shape_with_order((b, blocks, 4 * cfg.block_rank(level)))
                    .expect("contiguous"),
            )
        } else {
            Ok(trunk.clone())
        }
    }

    /// `G^ℓ`: level-ℓ trunk → level-(ℓ+1) trunk.
    pub fn g_batch(&self, level: usize, trunk: &Array3<T>) -> Result<Array3<T>> {
        let x = self
            .g_input(level, trunk)
            .map_err(layer_err(format!("g{level}")))?;
        self.g_apply(level, &x)
    }

    fn g_apply(&self, level: usize, x: &Array3<T>) -> Result<Array3<T>> {
        let cfg = &self.config;
        let y = self.g[self.idx(level)]
            .forward(x.view())
            .map_err(layer_err(format!("g{level}")))?;
        let b = y.dim().0;
        let shape = (cells_at(level + 1), cfg.trunk_channels(level + 1));
        if cfg.strict_butterfly {
            let pi = perm_indices(&cfg.grid, level, cfg.block_rank(level + 1))?;
            Ok(permute_batch(&y, &pi, true, shape))
        } else {
            Ok(y.into_shape_with_order((b, shape.0, shape.1))
                .expect("contiguous"))
        }
    }

    /// `U`: level-`L` trunk → `[batch, n, n]` image.
    pub fn u_batch(&self, trunk: &Array3<T>) -> Result<Array3<T>> {
        let y = self
            .u
            .forward(trunk.view())
            .map_err(layer_err("u".into()))?;
        untile_batch(&y, self.config.levels())
    }

    fn cnn_forward(&self, img: Array3<T>, mut tape: Option<&mut Tape<T>>) -> Result<Array3<T>> {
        if self.cnn.is_empty() {
            return Ok(img);
        }
        let mut x = img.insert_axis(Axis(3));
        let last = self.cnn.len() - 1;
        for (i, conv) in self.cnn.iter().enumerate() {
            let mut y = conv
                .forward(x.view())
                .map_err(layer_err(format!("cnn{i}")))?;
            if i < last {
                y.mapv_inplace(relu);
            }
            if let Some(t) = tape.as_deref_mut() {
                t.cnn_in.push(x);
            }
            x = y;
        }
        Ok(x.index_axis_move(Axis(3), 0))
    }

    /// Batched forward pass on tiled band inputs (see [`tile_bands`]);
    /// returns `[batch, n, n]`.
    pub fn forward(&self, tiles: &[Array3<T>]) -> Result<Array3<T>> {
        self.run(tiles, None)
    }

    /// Forward pass that also records a [`Tape`] for [`Self::backward`].
    pub fn forward_taped(&self, tiles: &[Array3<T>]) -> Result<(Array3<T>, Tape<T>)> {
        let mut tape = Tape {
            batch: 0,
            v_in: Vec::new(),
            h_in: Vec::new(),
            switch_in: Array3::zeros((0, 0, 0)),
            res: Vec::new(),
            g_in: Vec::new(),
            u_in: Array3::zeros((0, 0, 0)),
            cnn_in: Vec::new(),
        };
        let y = self.run(tiles, Some(&mut tape))?;
        Ok((y, tape))
    }

    fn run(&self, tiles: &[Array3<T>], mut tape: Option<&mut Tape<T>>) -> Result<Array3<T>> {
        let cfg = &self.config;
        let batch = self.check_inputs(tiles)?;
        let l = cfg.levels();
        let mid = cfg.mid();
        let bands = (mid..=l)
            .map(|level| self.v_batch(level, &tiles[level - mid]))
            .collect::<Result<Vec<_>>>()?;
        let mut trunk = bands[l - mid].clone().expect("finest band is non-empty");
        let mut h_in = vec![Array3::zeros((0, 0, 0)); l - mid];
        for level in (mid..l).rev() {
            let x = self
                .h_input(level, &trunk, bands[level - mid].as_ref())
                .map_err(layer_err(format!("h{level}")))?;
            trunk = self.h_apply(level, &x)?;
            h_in[level - mid] = x;
        }
        trunk = self.switch_forward(&trunk, tape.as_deref_mut())?;
        let mut g_in = Vec::with_capacity(l - mid);
        for level in mid..l {
            let x = self
                .g_input(level, &trunk)
                .map_err(layer_err(format!("g{level}")))?;
            trunk = self.g_apply(level, &x)?;
            g_in.push(x);
        }
        let img = self.u_batch(&trunk)?;
        if let Some(t) = tape.as_deref_mut() {
            t.batch = batch;
            t.v_in = tiles.to_vec();
            t.h_in = h_in;
            t.g_in = g_in;
            t.u_in = trunk;
        }
        self.cnn_forward(img, tape)
    }

    /// Exact reverse pass: gradient of a scalar loss with respect to every
    /// parameter, given `d_out = ∂loss/∂prediction` of shape `[batch, n, n]`.
    pub fn backward(&self, tape: &Tape<T>, d_out: &Array3<T>) -> Result<WideBNetParams<T>> {
        let cfg = &self.config;
        let l = cfg.levels();
        let mid = cfg.mid();
        let n = cfg.grid.side();
        ensure!(
            d_out.dim() == (tape.batch, n, n),
            "output gradient shape {:?} does not match ({}, {n}, {n})",
            d_out.dim(),
            tape.batch
        );
        let mut grad = self.zeros_like();

        // CNN
        let mut d_img = d_out.clone();
        if !self.cnn.is_empty() {
            let mut d = d_out.clone().insert_axis(Axis(3));
            for i in (0..self.cnn.len()).rev() {
                let x = &tape.cnn_in[i];
                let mut dx = self.cnn[i]
                    .backward(x.view(), d.view(), &mut grad.cnn[i])
                    .map_err(layer_err(format!("cnn{i}")))?;
                if i > 0 {
                    dx.zip_mut_with(x, |g, &a| {
                        if a <= T::zero() {
                            *g = T::zero();
                        }
                    });
                }
                d = dx;
            }
            d_img = d.index_axis_move(Axis(3), 0);
        }

        // U
        let d_u = tile_batch(&d_img, l)?;
        let mut d_trunk = self
            .u
            .backward(tape.u_in.view(), d_u.view(), &mut grad.u)
            .map_err(layer_err("u".into()))?;

        // G
        for level in (mid..l).rev() {
            let i = level - mid;
            let b = tape.batch;
            let dy = if cfg.strict_butterfly {
                let pi = perm_indices(&cfg.grid, level, cfg.block_rank(level + 1))?;
                permute_batch(
                    &d_trunk,
                    &pi,
                    false,
                    (cells_at(l - 1), 4 * cfg.block_rank(level + 1)),
                )
            } else {
                d_trunk
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((b, cells_at(level), 4 * cfg.trunk_channels(level + 1)))
                    .expect("contiguous")
            };
            let dx = self.g[i]
                .backward(tape.g_in[i].view(), dy.view(), &mut grad.g[i])
                .map_err(layer_err(format!("g{level}")))?;
            d_trunk = dx
                .into_shape_with_order((b, cells_at(level), cfg.trunk_channels(level)))
                .expect("contiguous");
        }

        // switch-resnet
        for i in (0..self.res.len()).rev() {
            d_trunk = self.res[i]
                .backward(&tape.res[i], d_trunk.view(), &mut grad.res[i])
                .map_err(layer_err(format!("res{i}")))?;
        }
        let d_perm = self
            .switch_mix
            .backward(tape.switch_in.view(), d_trunk.view(), &mut grad.switch_mix)
            .map_err(layer_err("switch".into()))?;
        let (b, cells, c) = d_perm.dim();
        d_trunk = match self.switch_perm()? {
            Some(pi) => permute_batch(&d_perm, &pi, true, (cells, c)),
            None => d_perm,
        };

        // H and V
        for level in mid..l {
            let i = level - mid;
            let bc = cfg.band_channels(level);
            let dx = self.h[i]
                .backward(tape.h_in[i].view(), d_trunk.view(), &mut grad.h[i])
                .map_err(layer_err(format!("h{level}")))?;
            let mut d_band = Array3::<T>::zeros((b, cells_at(level), bc));
            let c_next = cfg.trunk_channels(level + 1);
            if cfg.strict_butterfly {
                let rho = cfg.block_rank(level + 1);
                let boxes = cells_at(l - level - 1);
                let blocks = cells_at(l - 1);
                let gathered = dx.slice(s![.., .., ..4 * rho]).to_owned();
                let pi = perm_indices(&cfg.grid, level, rho)?;
                d_trunk = permute_batch(&gathered, &pi, true, (cells_at(level + 1), c_next));
                if bc > 0 {
                    for blk in 0..blocks {
                        let parent = blk / boxes;
                        for rep in 0..4 {
                            let off = 4 * rho + rep * bc;
                            let mut dst = d_band.slice_mut(s![.., parent, ..]);
                            dst += &dx.slice(s![.., blk, off..off + bc]);
                        }
                    }
                }
            } else {
                let dx = dx
                    .into_shape_with_order((b, cells_at(level + 1), c_next + bc))
                    .expect("contiguous");
                d_trunk = dx.slice(s![.., .., ..c_next]).to_owned();
                if bc > 0 {
                    for cell in 0..cells_at(level + 1) {
                        let mut dst = d_band.slice_mut(s![.., cell / 4, ..]);
                        dst += &dx.slice(s![.., cell, c_next..]);
                    }
                }
            }
            if let Some(v) = &self.v[i] {
                v.backward(
                    tape.v_in[i].view(),
                    d_band.view(),
                    grad.v[i].as_mut().expect("same layout"),
                )
                .map_err(layer_err(format!("v{level}")))?;
            }
        }
        let top = l - mid;
        self.v[top]
            .as_ref()
            .expect("finest band is non-empty")
            .backward(
                tape.v_in[top].view(),
                d_trunk.view(),
                grad.v[top].as_mut().expect("same layout"),
            )
            .map_err(layer_err(format!("v{l}")))?;
        Ok(grad)
    }
}

fn untile_batch<T: Real>(y: &Array3<T>, levels: usize) -> Result<Array3<T>> {
    let (b, _, _) = y.dim();
    let imgs = y
        .outer_iter()
        .map(|yb| untile_morton(yb, levels, 1).map(|a| a.index_axis_move(Axis(2), 0)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
    let out = ndarray::stack(Axis(0), &views).map_err(|e| Error::Domain(e.to_string()))?;
    debug_assert_eq!(out.dim().0, b);
    Ok(out)
}

fn tile_batch<T: Real>(img: &Array3<T>, levels: usize) -> Result<Array3<T>> {
    let tiles = img
        .outer_iter()
        .map(|x| tile_morton(x.insert_axis(Axis(2)), levels))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = tiles.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Domain(e.to_string()))
}

fn single<T: Real>(x: &MortonTensor<T>) -> Array3<T> {
    x.data().clone().insert_axis(Axis(0))
}

fn unbatch<T: Real>(level: usize, y: Array3<T>) -> Result<MortonTensor<T>> {
    MortonTensor::new(level, y.index_axis_move(Axis(0), 0))
}

/// `V^ℓ` applied to one band `[n, n, 2n_ω^ℓ]`.
pub fn v_layer<T: Real>(
    params: &WideBNetParams<T>,
    band: ArrayView3<'_, T>,
    level: usize,
) -> Result<MortonTensor<T>> {
    let cfg = params.config();
    ensure!(
        cfg.grid.band_levels().contains(&level),
        "level {level} has no band"
    );
    ensure!(cfg.band_size(level) > 0, "band at level {level} is empty");
    let n = cfg.grid.side();
    ensure!(
        band.dim() == (n, n, 2 * cfg.band_size(level)),
        "band has shape {:?}, expected ({n}, {n}, {})",
        band.dim(),
        2 * cfg.band_size(level)
    );
    let tiles = tile_morton(band, level)?.insert_axis(Axis(0));
    let y = params.v_batch(level, &tiles)?.expect("non-empty band");
    unbatch(level, y)
}

/// `H^ℓ` on one sample.
pub fn h_layer<T: Real>(
    params: &WideBNetParams<T>,
    trunk: &MortonTensor<T>,
    band: Option<&MortonTensor<T>>,
    level: usize,
) -> Result<MortonTensor<T>> {
    let cfg = params.config();
    ensure!(
        level >= cfg.mid() && level < cfg.levels(),
        "no H layer at level {level}"
    );
    ensure!(
        trunk.level() == level + 1,
        "trunk level {} is not {}",
        trunk.level(),
        level + 1
    );
    ensure!(
        band.is_some() == (cfg.band_size(level) > 0),
        "band presence does not match configuration at level {level}"
    );
    let b = band.map(single);
    unbatch(level, params.h_batch(level, &single(trunk), b.as_ref())?)
}

/// Switch-resnet on one sample.
pub fn switch_resnet<T: Real>(
    params: &WideBNetParams<T>,
    trunk: &MortonTensor<T>,
) -> Result<MortonTensor<T>> {
    let mid = params.config().mid();
    ensure!(trunk.level() == mid, "switch input must be at level {mid}");
    unbatch(mid, params.switch_resnet_batch(&single(trunk))?)
}

/// `G^ℓ` on one sample.
pub fn g_layer<T: Real>(
    params: &WideBNetParams<T>,
    trunk: &MortonTensor<T>,
) -> Result<MortonTensor<T>> {
    let level = trunk.level();
    let cfg = params.config();
    ensure!(
        level >= cfg.mid() && level < cfg.levels(),
        "no G layer at level {level}"
    );
    unbatch(level + 1, params.g_batch(level, &single(trunk))?)
}

/// `U` on one sample: level-`L` trunk → `[n, n]` image before the CNN.
pub fn u_layer<T: Real>(params: &WideBNetParams<T>, trunk: &MortonTensor<T>) -> Result<Array2<T>> {
    ensure!(
        trunk.level() == params.config().levels(),
        "U input must be at level L"
    );
    let img = params.u_batch(&single(trunk))?;
    Ok(img.index_axis_move(Axis(0), 0))
}

/// Full network on one sample; `bands[i]` is `[n, n, 2n_ω^ℓ]` for ℓ = L/2 + i.
pub fn widebnet_forward<T: Real>(
    params: &WideBNetParams<T>,
    bands: &[ArrayView3<'_, T>],
) -> Result<Array2<T>> {
    let tiles: Vec<Array3<T>> = params
        .tile_bands(bands)?
        .into_iter()
        .map(|t| t.insert_axis(Axis(0)))
        .collect();
    Ok(params.forward(&tiles)?.index_axis_move(Axis(0), 0))
}
