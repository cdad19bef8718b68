//! Harmonic-analysis validation math: the DFT and its radix-2 decimation,
//! epsilon-ranks and complementary low-rank profiles, and a 1D two-sided
//! butterfly factorization built from truncated SVDs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::Mat;
use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};

pub type Spectrum = Vec<Complex64>;

/// Direct evaluation of `x̂(k) = Σ_n x_n e^{-2πi nk/N}`.
pub fn naive_dft(x: &[Complex64]) -> Spectrum {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(m, &v)| v * twiddle((m * k) % n.max(1), n))
                .sum()
        })
        .collect()
}

#[inline]
fn twiddle(k: usize, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)
}

/// Merges the DFTs of the even- and odd-indexed samples of a length-`N`
/// signal:
/// `x̂(k) = x̂_e(k) + w^k x̂_o(k)` and `x̂(k + N/2) = x̂_e(k) - w^k x̂_o(k)`
/// with `w = e^{-2πi/N}`.
pub fn merge_even_odd(even: &[Complex64], odd: &[Complex64]) -> Result<Spectrum> {
    ensure!(
        even.len() == odd.len(),
        "even/odd halves differ in length ({} vs {})",
        even.len(),
        odd.len()
    );
    let half = even.len();
    let n = 2 * half;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..half {
        let t = twiddle(k, n) * odd[k];
        out[k] = even[k] + t;
        out[k + half] = even[k] - t;
    }
    Ok(out)
}

/// Radix-2 decimation-in-time FFT.
pub fn fft_radix2(x: &[Complex64]) -> Result<Spectrum> {
    ensure!(
        x.len().is_power_of_two(),
        "length {} is not a power of two",
        x.len()
    );
    Ok(fft_rec(x))
}

fn fft_rec(x: &[Complex64]) -> Spectrum {
    if x.len() == 1 {
        return x.to_vec();
    }
    let even: Vec<_> = x.iter().step_by(2).copied().collect();
    let odd: Vec<_> = x.iter().skip(1).step_by(2).copied().collect();
    merge_even_odd(&fft_rec(&even), &fft_rec(&odd)).expect("halves have equal length")
}

/// The `n x n` DFT matrix `F[j, k] = e^{-2πi jk/n}`.
pub fn dft_matrix(n: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((n, n), |(j, k)| twiddle((j * k) % n, n))
}

fn to_faer(a: ArrayView2<'_, Complex64>) -> Mat<Complex64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn singular_values(a: ArrayView2<'_, Complex64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    to_faer(a)
        .singular_values()
        .map_err(|e| Error::domain(format!("SVD failed: {e:?}")))
}

/// Number of singular values above `eps * σ_max`; zero for the zero matrix.
pub fn epsilon_rank(m: ArrayView2<'_, Complex64>, eps: f64) -> Result<usize> {
    ensure!(eps > 0.0, "tolerance must be positive, got {eps}");
    let sv = singular_values(m)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&v| v > eps * smax).count())
}

/// Rank of one dyadic block in a complementary low-rank profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRank {
    /// Row partition depth `p`: rows split into `2^p` blocks, columns into
    /// `2^(levels - p)`.
    pub level: usize,
    pub block_row: usize,
    pub block_col: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankProfile {
    pub levels: usize,
    pub blocks: Vec<BlockRank>,
}

impl RankProfile {
    /// Maximum rank per partition depth `p = 0..=levels`.
    pub fn max_per_level(&self) -> Vec<usize> {
        self.extremes_per_level(usize::max, 0)
    }

    /// Minimum rank per partition depth `p = 0..=levels`.
    pub fn min_per_level(&self) -> Vec<usize> {
        self.extremes_per_level(usize::min, usize::MAX)
    }

    fn extremes_per_level(&self, f: fn(usize, usize) -> usize, init: usize) -> Vec<usize> {
        let mut out = vec![init; self.levels + 1];
        for b in &self.blocks {
            out[b.level] = f(out[b.level], b.rank);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,block_row,block_col,rank\n");
        for b in &self.blocks {
            let _ = writeln!(s, "{},{},{},{}", b.level, b.block_row, b.block_col, b.rank);
        }
        s
    }
}

/// ε-ranks of every block of every complementary partition of `m`.
pub fn complementary_rank_profile(
    m: ArrayView2<'_, Complex64>,
    levels: usize,
    eps: f64,
) -> Result<RankProfile> {
    let (rows, cols) = m.dim();
    ensure!(levels < usize::BITS as usize, "too many levels");
    let parts = 1usize << levels;
    ensure!(
        rows % parts == 0 && cols % parts == 0 && rows > 0 && cols > 0,
        "matrix {rows}x{cols} not divisible by 2^{levels}"
    );
    let mut jobs = Vec::new();
    for p in 0..=levels {
        for i in 0..(1usize << p) {
            for j in 0..(1usize << (levels - p)) {
                jobs.push((p, i, j));
            }
        }
    }
    let blocks = jobs
        .into_par_iter()
        .map(|(p, i, j)| {
            let rb = rows >> p;
            let cb = cols >> (levels - p);
            let block = m.slice(s![i * rb..(i + 1) * rb, j * cb..(j + 1) * cb]);
            epsilon_rank(block, eps).map(|rank| BlockRank {
                level: p,
                block_row: i,
                block_col: j,
                rank,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankProfile { levels, blocks })
}

/// Two-sided 1D butterfly factorization
/// `A ≈ U G^{L-1}…G^{L/2} S (H^{L/2})*…(H^{L-1})* V*`.
///
/// Every factor is stored as a list of dense blocks; the block index encodes
/// the sparsity. Bases are orthonormal, so `S` holds the projected middle
/// blocks.
#[derive(Debug, Clone)]
pub struct ButterflyFactors {
    n: usize,
    levels: usize,
    leaf: usize,
    rank: usize,
    /// Column leaf bases, `s x k` each (`V^L`).
    v_leaf: Vec<Array2<Complex64>>,
    /// `h[t]` maps row level `t` / column level `L-t` to row level `t+1` /
    /// column level `L-t-1`; block `(ρ', γ')` at `ρ' * 2^(L-t-1) + γ'`.
    h: Vec<Vec<Array2<Complex64>>>,
    /// Middle blocks `(ρ, γ)` at level `L/2`, index `ρ * 2^(L/2) + γ`.
    switch: Vec<Array2<Complex64>>,
    /// Mirror of `h` built from `A*`; block `(γ', ρ')` at `γ' * 2^(L-t-1) + ρ'`.
    g: Vec<Vec<Array2<Complex64>>>,
    /// Row leaf bases, `s x k` each (`U^L`).
    u_leaf: Vec<Array2<Complex64>>,
}

/// One side of the factorization: nested column bases down to the middle level.
struct HalfButterfly {
    leaf: Vec<Array2<Complex64>>,
    transfers: Vec<Vec<Array2<Complex64>>>,
    /// Explicit composite bases at the middle level, indexed `ρ * 2^h + γ`.
    mid_bases: Vec<Array2<Complex64>>,
    /// `A(ρ, γ) * basis` at the middle level, same indexing.
    mid_products: Vec<Array2<Complex64>>,
}

fn top_right_singular_vectors(a: ArrayView2<'_, Complex64>, k: usize) -> Result<Array2<Complex64>> {
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::domain(format!("SVD failed: {e:?}")))?;
    let v = svd.V();
    let k = k.min(v.ncols());
    Ok(Array2::from_shape_fn((a.ncols(), k), |(i, j)| v[(i, j)]))
}

fn block_diag_stack(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra + rb, ca + cb));
    out.slice_mut(s![..ra, ..ca]).assign(a);
    out.slice_mut(s![ra.., ca..]).assign(b);
    out
}

fn hcat(a: ArrayView2<'_, Complex64>, b: ArrayView2<'_, Complex64>) -> Array2<Complex64> {
    ndarray::concatenate(ndarray::Axis(1), &[a, b]).expect("equal row counts")
}

fn half_butterfly(
    a: ArrayView2<'_, Complex64>,
    levels: usize,
    rank: usize,
) -> Result<HalfButterfly> {
    let n = a.nrows();
    let leaf_size = n >> levels;
    let half = levels / 2;

    // column level L, row level 0
    let mut bases = Vec::with_capacity(1 << levels);
    let mut products = Vec::with_capacity(1 << levels);
    let mut leaf = Vec::with_capacity(1 << levels);
    for g in 0..(1usize << levels) {
        let cols = a.slice(s![.., g * leaf_size..(g + 1) * leaf_size]);
        let v = top_right_singular_vectors(cols, rank)?;
        products.push(cols.dot(&v));
        bases.push(v.clone());
        leaf.push(v);
    }

    let mut transfers = Vec::with_capacity(half);
    for t in 0..half {
        // rows at level t -> t + 1, columns at level L - t -> L - t - 1
        let col_boxes_old = 1usize << (levels - t);
        let row_boxes_new = 1usize << (t + 1);
        let col_boxes_new = col_boxes_old / 2;
        let child_rows = n >> (t + 1);
        let mut level_transfers = Vec::with_capacity(row_boxes_new * col_boxes_new);
        let mut new_bases = Vec::with_capacity(row_boxes_new * col_boxes_new);
        let mut new_products = Vec::with_capacity(row_boxes_new * col_boxes_new);
        for rp in 0..row_boxes_new {
            let parent = rp >> 1;
            let offset = (rp & 1) * child_rows;
            for gp in 0..col_boxes_new {
                let left = parent * col_boxes_old + 2 * gp;
                let right = left + 1;
                let stacked = hcat(
                    products[left].slice(s![offset..offset + child_rows, ..]),
                    products[right].slice(s![offset..offset + child_rows, ..]),
                );
                let w = top_right_singular_vectors(stacked.view(), rank)?;
                new_products.push(stacked.dot(&w));
                new_bases.push(block_diag_stack(&bases[left], &bases[right]).dot(&w));
                level_transfers.push(w);
            }
        }
        transfers.push(level_transfers);
        bases = new_bases;
        products = new_products;
    }
    Ok(HalfButterfly {
        leaf,
        transfers,
        mid_bases: bases,
        mid_products: products,
    })
}

/// Builds the butterfly factorization of an `N x N` matrix with `L` levels
/// (leaf size `N / 2^L`) and maximum block rank `rank`.
pub fn butterfly_factorize(
    m: ArrayView2<'_, Complex64>,
    levels: usize,
    rank: usize,
) -> Result<ButterflyFactors> {
    let (rows, cols) = m.dim();
    ensure!(rows == cols, "matrix must be square, got {rows}x{cols}");
    ensure!(rank >= 1, "rank must be at least 1");
    ensure!(
        levels >= 2 && levels % 2 == 0,
        "level count must be even and at least 2, got {levels}"
    );
    ensure!(levels < usize::BITS as usize, "too many levels");
    ensure!(
        rows > 0 && rows % (1usize << levels) == 0,
        "side {rows} is not 2^{levels} * s"
    );
    let leaf = rows >> levels;
    let half = levels / 2;

    let right = half_butterfly(m, levels, rank)?;
    let adjoint = m.t().mapv(|v| v.conj());
    let left = half_butterfly(adjoint.view(), levels, rank)?;

    let mid = 1usize << half;
    let mut switch = Vec::with_capacity(mid * mid);
    for rho in 0..mid {
        for gamma in 0..mid {
            let u = &left.mid_bases[gamma * mid + rho];
            let b = &right.mid_products[rho * mid + gamma];
            switch.push(u.t().mapv(|v| v.conj()).dot(b));
        }
    }
    Ok(ButterflyFactors {
        n: rows,
        levels,
        leaf,
        rank,
        v_leaf: right.leaf,
        h: right.transfers,
        switch,
        g: left.transfers,
        u_leaf: left.leaf,
    })
}

impl ButterflyFactors {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn leaf(&self) -> usize {
        self.leaf
    }

    /// Number of sparse factors (`L + 3`).
    pub fn factor_count(&self) -> usize {
        self.h.len() + self.g.len() + 3
    }

    /// Total number of stored complex entries across all factors.
    pub fn stored_entries(&self) -> usize {
        let count = |v: &[Array2<Complex64>]| v.iter().map(|b| b.len()).sum::<usize>();
        count(&self.v_leaf)
            + count(&self.u_leaf)
            + count(&self.switch)
            + self.h.iter().map(|l| count(l)).sum::<usize>()
            + self.g.iter().map(|l| count(l)).sum::<usize>()
    }

    /// Dense reconstruction (column by column through [`butterfly_apply`]).
    pub fn to_dense(&self) -> Array2<Complex64> {
        let mut out = Array2::zeros((self.n, self.n));
        let mut e = vec![Complex64::new(0.0, 0.0); self.n];
        for j in 0..self.n {
            e[j] = Complex64::new(1.0, 0.0);
            let (col, _) = self.apply_counted(&e);
            out.column_mut(j).assign(&ndarray::Array1::from(col));
            e[j] = Complex64::new(0.0, 0.0);
        }
        out
    }

    /// Applies the factorization and reports the number of complex
    /// multiply-adds performed.
    pub fn apply_counted(&self, x: &[Complex64]) -> (Vec<Complex64>, usize) {
        let zero = Complex64::new(0.0, 0.0);
        let l = self.levels;
        let half = l / 2;
        let s = self.leaf;
        let mut ops = 0usize;

        // V*: one coefficient vector per column leaf (row level 0)
        let mut coef: Vec<Vec<Complex64>> = self
            .v_leaf
            .iter()
            .enumerate()
            .map(|(g, v)| {
                ops += v.len();
                adjoint_mul(v, &x[g * s..(g + 1) * s])
            })
            .collect();

        for (t, blocks) in self.h.iter().enumerate() {
            let col_boxes_old = 1usize << (l - t);
            let col_boxes_new = col_boxes_old / 2;
            let row_boxes_new = 1usize << (t + 1);
            let mut next = Vec::with_capacity(row_boxes_new * col_boxes_new);
            for rp in 0..row_boxes_new {
                let parent = rp >> 1;
                for gp in 0..col_boxes_new {
                    let left = parent * col_boxes_old + 2 * gp;
                    let stacked: Vec<Complex64> =
                        coef[left].iter().chain(&coef[left + 1]).copied().collect();
                    let w = &blocks[rp * col_boxes_new + gp];
                    ops += w.len();
                    next.push(adjoint_mul(w, &stacked));
                }
            }
            coef = next;
        }

        // middle: coefficient (ρ, γ) at index ρ * 2^h + γ
        let mid = 1usize << half;
        let mut acc: Vec<Vec<Complex64>> = self
            .switch
            .iter()
            .zip(&coef)
            .map(|(m, c)| {
                ops += m.len();
                mul(m, c)
            })
            .collect();
        // re-index to (γ, ρ) to match the left half's layout
        let mut e: Vec<Vec<Complex64>> = vec![Vec::new(); mid * mid];
        for rho in 0..mid {
            for gamma in 0..mid {
                e[gamma * mid + rho] = std::mem::take(&mut acc[rho * mid + gamma]);
            }
        }

        for t in (0..self.g.len()).rev() {
            let blocks = &self.g[t];
            // (γ' at level t+1, ρ' at level L-t-1) -> (γ at level t, ρ at level L-t)
            let row_boxes_new = 1usize << (l - t);
            let row_boxes_old = row_boxes_new / 2;
            let col_boxes_old = 1usize << (t + 1);
            let col_boxes_new = col_boxes_old / 2;
            let mut next: Vec<Vec<Complex64>> = vec![Vec::new(); col_boxes_new * row_boxes_new];
            for gp in 0..col_boxes_old {
                let gamma = gp >> 1;
                for rp in 0..row_boxes_old {
                    let z = &blocks[gp * row_boxes_old + rp];
                    ops += z.len();
                    let out = mul(z, &e[gp * row_boxes_old + rp]);
                    let top_len = top_width(&self.g, &self.u_leaf, t, gamma, 2 * rp, row_boxes_new);
                    let (top, bottom) = out.split_at(top_len);
                    accumulate(&mut next[gamma * row_boxes_new + 2 * rp], top);
                    accumulate(&mut next[gamma * row_boxes_new + 2 * rp + 1], bottom);
                }
            }
            e = next;
        }

        let mut y = vec![zero; self.n];
        for (rho, u) in self.u_leaf.iter().enumerate() {
            ops += u.len();
            let part = mul(u, &e[rho]);
            y[rho * s..(rho + 1) * s].copy_from_slice(&part);
        }
        (y, ops)
    }
}

/// Width of the basis attached to left-side block `(γ, ρ)` one level closer
/// to the leaves than transfer level `t`.
fn top_width(
    g: &[Vec<Array2<Complex64>>],
    u_leaf: &[Array2<Complex64>],
    t: usize,
    gamma: usize,
    rho: usize,
    row_boxes: usize,
) -> usize {
    if t == 0 {
        u_leaf[rho].ncols()
    } else {
        g[t - 1][gamma * row_boxes + rho].ncols()
    }
}

fn accumulate(dst: &mut Vec<Complex64>, src: &[Complex64]) {
    if dst.is_empty() {
        dst.extend_from_slice(src);
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

fn mul(a: &Array2<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    a.rows()
        .into_iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn adjoint_mul(a: &Array2<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    a.columns()
        .into_iter()
        .map(|col| col.iter().zip(x).map(|(a, b)| a.conj() * b).sum())
        .collect()
}

/// Applies the factorization to `x`.
pub fn butterfly_apply(f: &ButterflyFactors, x: &[Complex64]) -> Result<Vec<Complex64>> {
    ensure!(
        x.len() == f.n,
        "vector length {} does not match factorization size {}",
        x.len(),
        f.n
    );
    Ok(f.apply_counted(x).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn dft_delta_and_constant() {
        let d = naive_dft(&[c(1.0), c(0.0), c(0.0), c(0.0)]);
        assert!(d.iter().all(|v| (v - c(1.0)).norm() < 1e-14));
        let k = naive_dft(&[c(1.0); 4]);
        assert!((k[0] - c(4.0)).norm() < 1e-14);
        assert!(k[1..].iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_vec(&mut rng, 37);
        let xh = naive_dft(&x);
        let lhs: f64 = xh.iter().map(|v| v.norm_sqr()).sum();
        let rhs: f64 = 37.0 * x.iter().map(|v| v.norm_sqr()).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-10 * rhs);
    }

    #[test]
    fn fft_rejects_non_power_of_two() {
        assert!(fft_radix2(&[c(1.0); 6]).is_err());
        assert_eq!(fft_radix2(&[c(2.5)]).unwrap(), vec![c(2.5)]);
    }

    #[test]
    fn fft_matches_dft_256() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_vec(&mut rng, 256);
        let a = fft_radix2(&x).unwrap();
        let b = naive_dft(&x);
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn epsilon_rank_basic() {
        let eye = Array2::from_shape_fn((8, 8), |(i, j)| if i == j { c(1.0) } else { c(0.0) });
        assert_eq!(epsilon_rank(eye.view(), 0.5).unwrap(), 8);
        let u = [1.0, 2.0, -1.0, 0.5];
        let v = [3.0, -1.0, 2.0];
        let outer = Array2::from_shape_fn((4, 3), |(i, j)| c(u[i] * v[j]));
        assert_eq!(epsilon_rank(outer.view(), 1e-10).unwrap(), 1);
        let zero = Array2::<Complex64>::zeros((5, 5));
        assert_eq!(epsilon_rank(zero.view(), 1e-6).unwrap(), 0);
        assert!(epsilon_rank(eye.view(), 0.0).is_err());
    }

    #[test]
    fn profile_zero_and_identity() {
        let zero = Array2::<Complex64>::zeros((16, 16));
        let p = complementary_rank_profile(zero.view(), 2, 1e-6).unwrap();
        assert!(p.blocks.iter().all(|b| b.rank == 0));
        let eye = Array2::from_shape_fn((16, 16), |(i, j)| if i == j { c(1.0) } else { c(0.0) });
        let p = complementary_rank_profile(eye.view(), 2, 1e-6).unwrap();
        for b in p.blocks.iter().filter(|b| b.level == 1) {
            // 2x2 partition: off-diagonal blocks vanish
            if b.block_row != b.block_col {
                assert_eq!(b.rank, 0);
            } else {
                assert_eq!(b.rank, 8);
            }
        }
        assert!(complementary_rank_profile(eye.view(), 5, 1e-6).is_err());
        assert!(p.to_csv().starts_with("level,block_row,block_col,rank\n"));
    }

    #[test]
    fn butterfly_rejects_bad_input() {
        let m = dft_matrix(16);
        assert!(butterfly_factorize(m.view(), 2, 0).is_err());
        assert!(butterfly_factorize(m.view(), 3, 2).is_err());
        assert!(butterfly_factorize(dft_matrix(12).view(), 4, 2).is_err());
        let f = butterfly_factorize(m.view(), 2, 4).unwrap();
        assert!(butterfly_apply(&f, &[c(1.0); 15]).is_err());
        assert_eq!(f.factor_count(), 5);
    }

    #[test]
    fn butterfly_first_column() {
        let m = dft_matrix(32);
        let f = butterfly_factorize(m.view(), 2, 8).unwrap();
        let mut e0 = vec![c(0.0); 32];
        e0[0] = c(1.0);
        let col = butterfly_apply(&f, &e0).unwrap();
        let dense = f.to_dense();
        for i in 0..32 {
            assert!((col[i] - dense[[i, 0]]).norm() < 1e-12);
        }
    }
}
