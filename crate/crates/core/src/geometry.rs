//! Quad-tree bookkeeping: Morton (Z-order) flattening of square grids and the
//! permutation indices used by the butterfly layers.
//!
//! Cells are numbered by interleaving the bits of the row index `i` and the
//! column index `j`, with the column bit in the less significant position of
//! each pair. The four children of a parent therefore appear in the order
//! `(0,0), (0,1), (1,0), (1,1)`. Pixels inside a leaf are stored row-major.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Largest level for which Morton indices are supported (`4^level` fits
/// comfortably in `usize` on every target we care about).
pub const MAX_LEVEL: usize = 24;

/// Complete quad-tree description of an `n x n` grid with `n = 2^L * s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec", into = "RawGridSpec")]
pub struct GridSpec {
    levels: usize,
    leaf: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGridSpec {
    levels: usize,
    leaf: usize,
}

impl TryFrom<RawGridSpec> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGridSpec) -> Result<Self> {
        GridSpec::new(raw.levels, raw.leaf)
    }
}

impl From<GridSpec> for RawGridSpec {
    fn from(g: GridSpec) -> Self {
        RawGridSpec {
            levels: g.levels,
            leaf: g.leaf,
        }
    }
}

impl GridSpec {
    pub fn new(levels: usize, leaf: usize) -> Result<Self> {
        ensure!(
            levels >= 2 && levels % 2 == 0,
            "level count must be even and at least 2, got {levels}"
        );
        ensure!(
            levels <= MAX_LEVEL,
            "level count {levels} exceeds {MAX_LEVEL}"
        );
        ensure!(leaf >= 1, "leaf size must be positive");
        Ok(Self { levels, leaf })
    }

    /// Number of levels `L`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Leaf size `s`.
    pub fn leaf(&self) -> usize {
        self.leaf
    }

    /// Grid side `n = 2^L * s`.
    pub fn side(&self) -> usize {
        (1 << self.levels) * self.leaf
    }

    /// The switch level `L/2`.
    pub fn mid_level(&self) -> usize {
        self.levels / 2
    }

    /// Levels `L/2..=L` that carry data bands, coarsest first.
    pub fn band_levels(&self) -> std::ops::RangeInclusive<usize> {
        self.mid_level()..=self.levels
    }

    /// Side length (in pixels) of the block represented by one cell at `level`.
    pub fn block_side(&self, level: usize) -> usize {
        (1 << (self.levels - level)) * self.leaf
    }
}

/// `4^level`.
pub fn cells_at(level: usize) -> usize {
    1usize << (2 * level)
}

/// Morton index of cell `(i, j)` at `level`.
pub fn morton_index(i: usize, j: usize, level: usize) -> Result<usize> {
    ensure!(level <= MAX_LEVEL, "level {level} exceeds {MAX_LEVEL}");
    let side = 1usize << level;
    ensure!(
        i < side && j < side,
        "cell ({i}, {j}) outside the {side}x{side} grid at level {level}"
    );
    Ok(interleave(i, j, level))
}

/// Inverse of [`morton_index`].
pub fn morton_coords(k: usize, level: usize) -> Result<(usize, usize)> {
    ensure!(level <= MAX_LEVEL, "level {level} exceeds {MAX_LEVEL}");
    ensure!(
        k < cells_at(level),
        "Morton index {k} outside 0..{} at level {level}",
        cells_at(level)
    );
    Ok(deinterleave(k, level))
}

#[inline]
fn interleave(i: usize, j: usize, level: usize) -> usize {
    let mut k = 0;
    for b in 0..level {
        k |= ((j >> b) & 1) << (2 * b);
        k |= ((i >> b) & 1) << (2 * b + 1);
    }
    k
}

#[inline]
fn deinterleave(k: usize, level: usize) -> (usize, usize) {
    let (mut i, mut j) = (0, 0);
    for b in 0..level {
        j |= ((k >> (2 * b)) & 1) << b;
        i |= ((k >> (2 * b + 1)) & 1) << b;
    }
    (i, j)
}

/// A Morton-flattened multi-channel field at quad-tree level `level`:
/// row `k` holds the channels of Morton cell `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MortonTensor<T> {
    level: usize,
    data: Array2<T>,
}

impl<T> MortonTensor<T> {
    pub fn new(level: usize, data: Array2<T>) -> Result<Self> {
        ensure!(level <= MAX_LEVEL, "level {level} exceeds {MAX_LEVEL}");
        ensure!(
            data.nrows() == cells_at(level),
            "tensor has {} rows, level {level} needs {}",
            data.nrows(),
            cells_at(level)
        );
        ensure!(data.ncols() > 0, "tensor must have at least one channel");
        Ok(Self { level, data })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }
}

/// Tiles a multi-channel `[n, n, c]` grid into `2^level x 2^level` square
/// blocks and lays them out in Morton order. Row `k` of the result holds the
/// block at Morton position `k`; within a row, entries are ordered
/// (pixel row-major within the block, channel).
pub fn tile_morton<T: Clone>(image: ArrayView3<'_, T>, level: usize) -> Result<Array2<T>> {
    let (n, n2, c) = image.dim();
    ensure!(n == n2, "grid must be square, got {n}x{n2}");
    ensure!(level <= MAX_LEVEL, "level {level} exceeds {MAX_LEVEL}");
    let blocks = 1usize << level;
    ensure!(
        n % blocks == 0 && n > 0,
        "grid side {n} not divisible into {blocks} blocks"
    );
    let b = n / blocks;
    let row_len = b * b * c;
    let mut flat = Vec::with_capacity(cells_at(level) * row_len);
    for k in 0..cells_at(level) {
        let (bi, bj) = deinterleave(k, level);
        for pi in 0..b {
            for pj in 0..b {
                for ch in 0..c {
                    flat.push(image[[bi * b + pi, bj * b + pj, ch]].clone());
                }
            }
        }
    }
    Ok(Array2::from_shape_vec((cells_at(level), row_len), flat).expect("tile shape"))
}

/// Inverse of [`tile_morton`] for `c` channels per pixel.
pub fn untile_morton<T: Clone>(
    tiles: ArrayView2<'_, T>,
    level: usize,
    c: usize,
) -> Result<Array3<T>> {
    ensure!(level <= MAX_LEVEL, "level {level} exceeds {MAX_LEVEL}");
    ensure!(
        tiles.nrows() == cells_at(level),
        "expected {} rows at level {level}, got {}",
        cells_at(level),
        tiles.nrows()
    );
    ensure!(
        c > 0 && tiles.ncols() % c == 0,
        "row length not divisible by {c} channels"
    );
    let bb = tiles.ncols() / c;
    let b = (bb as f64).sqrt().round() as usize;
    ensure!(
        b * b == bb,
        "row length {} is not c * (square block)",
        tiles.ncols()
    );
    let n = b << level;
    let mut out: Vec<Option<T>> = vec![None; n * n * c];
    for k in 0..cells_at(level) {
        let (bi, bj) = deinterleave(k, level);
        let row = tiles.row(k);
        for pi in 0..b {
            for pj in 0..b {
                for ch in 0..c {
                    let dst = ((bi * b + pi) * n + bj * b + pj) * c + ch;
                    out[dst] = Some(row[(pi * b + pj) * c + ch].clone());
                }
            }
        }
    }
    let flat = out
        .into_iter()
        .map(|v| v.expect("every pixel written"))
        .collect();
    Ok(Array3::from_shape_vec((n, n, c), flat).expect("untile shape"))
}

/// Flattens an `n x n` image into a level-`L` Morton tensor with `s^2`
/// channels (one per leaf pixel, row-major).
pub fn morton_flatten<T: Clone>(
    image: ArrayView2<'_, T>,
    spec: &GridSpec,
) -> Result<MortonTensor<T>> {
    let n = spec.side();
    ensure!(
        image.dim() == (n, n),
        "image is {:?}, grid spec needs {n}x{n}",
        image.dim()
    );
    let view = image.insert_axis(ndarray::Axis(2));
    let data = tile_morton(view, spec.levels())?;
    MortonTensor::new(spec.levels(), data)
}

/// Exact inverse of [`morton_flatten`].
pub fn morton_unflatten<T: Clone>(t: &MortonTensor<T>, spec: &GridSpec) -> Result<Array2<T>> {
    ensure!(
        t.level() == spec.levels(),
        "tensor level {} does not match L = {}",
        t.level(),
        spec.levels()
    );
    let s2 = spec.leaf() * spec.leaf();
    ensure!(
        t.channels() == s2,
        "tensor has {} channels, leaf needs {s2}",
        t.channels()
    );
    let grid = untile_morton(t.data().view(), t.level(), 1)?;
    Ok(grid.index_axis_move(ndarray::Axis(2), 0))
}

/// A permutation of `0..m`, stored as gather indices: `out[t] = x[indices[t]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermIndex {
    indices: Vec<usize>,
    level: usize,
}

impl PermIndex {
    /// Validates that `indices` is a bijection on `0..indices.len()`.
    pub fn new(indices: Vec<usize>, level: usize) -> Result<Self> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            ensure!(
                i < seen.len(),
                "index {i} out of range for length {}",
                seen.len()
            );
            ensure!(!seen[i], "index {i} repeated");
            seen[i] = true;
        }
        Ok(Self { indices, level })
    }

    pub fn identity(len: usize, level: usize) -> Self {
        Self {
            indices: (0..len).collect(),
            level,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.indices.iter().enumerate().all(|(t, &i)| t == i)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.indices.len()];
        for (t, &i) in self.indices.iter().enumerate() {
            inv[i] = t;
        }
        Self {
            indices: inv,
            level: self.level,
        }
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &PermIndex) -> Result<Self> {
        ensure!(
            self.len() == next.len(),
            "cannot compose permutations of lengths {} and {}",
            self.len(),
            next.len()
        );
        Ok(Self {
            indices: next.indices.iter().map(|&t| self.indices[t]).collect(),
            level: next.level,
        })
    }

    /// Gathers `x` in place of allocation-free callers; `out[t] = x[indices[t]]`.
    pub fn gather_into<T: Copy>(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        for (o, &i) in out.iter_mut().zip(&self.indices) {
            *o = x[i];
        }
    }

    /// Adjoint of the gather: `out[indices[t]] = y[t]`.
    pub fn scatter_into<T: Copy>(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        for (&v, &i) in y.iter().zip(&self.indices) {
            out[i] = v;
        }
    }
}

/// `out[t] = x[pi.indices[t]]`.
pub fn apply_permutation<T: Clone>(x: &[T], pi: &PermIndex) -> Result<Vec<T>> {
    ensure!(
        x.len() == pi.len(),
        "vector length {} does not match permutation length {}",
        x.len(),
        pi.len()
    );
    Ok(pi.indices.iter().map(|&i| x[i].clone()).collect())
}

/// Gather indices that make the butterfly factor between levels `level + 1`
/// and `level` block diagonal.
///
/// The input is a Morton-flattened trunk at level `level + 1`, laid out as
/// `[cell, box, block_rank]` with `4^(L-level-1)` boxes per cell. After the
/// gather, the entries are ordered `[parent, box, sibling, block_rank]`, so for
/// every parent and box the four children's channel blocks are contiguous.
pub fn perm_indices(spec: &GridSpec, level: usize, block_rank: usize) -> Result<PermIndex> {
    let l = spec.levels();
    ensure!(
        level >= spec.mid_level() && level < l,
        "level {level} outside [{}, {l})",
        spec.mid_level()
    );
    ensure!(block_rank >= 1, "block rank must be positive");
    let parents = cells_at(level);
    let boxes = cells_at(l - level - 1);
    let mut indices = Vec::with_capacity(parents * 4 * boxes * block_rank);
    for p in 0..parents {
        for bx in 0..boxes {
            for child in 0..4 {
                let cell = 4 * p + child;
                let base = (cell * boxes + bx) * block_rank;
                indices.extend(base..base + block_rank);
            }
        }
    }
    Ok(PermIndex { indices, level })
}

/// Switch permutation at level `L/2`: views the input as
/// `[patch, block, rho]` with `4^(L/2)` patches and blocks and transposes the
/// patch and block axes. It is an involution.
pub fn switch_indices(spec: &GridSpec, rho: usize) -> Result<PermIndex> {
    ensure!(rho >= 1, "per-block channel count must be positive");
    let m = cells_at(spec.mid_level());
    let mut indices = Vec::with_capacity(m * m * rho);
    for p in 0..m {
        for q in 0..m {
            let base = (q * m + p) * rho;
            indices.extend(base..base + rho);
        }
    }
    Ok(PermIndex {
        indices,
        level: spec.mid_level(),
    })
}

/// [`switch_indices`] for a flat input of length `len`, deriving `rho`.
pub fn switch_indices_for_len(spec: &GridSpec, len: usize) -> Result<PermIndex> {
    let total = cells_at(spec.levels());
    ensure!(
        len > 0 && len % total == 0,
        "switch input length {len} is not a positive multiple of 4^L = {total}"
    );
    switch_indices(spec, len / total)
}
