use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView3, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;

use super::{glorot_init, relu, Parameters, Real};
use crate::error::{ensure, Result};
use crate::geometry::MortonTensor;

/// Independent affine map per group of `kernel` consecutive Morton cells
/// (kernel = stride, no weight sharing).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAffine<T> {
    /// `[groups, out_dim, in_dim]` with `in_dim = kernel * c_in`.
    pub weights: Array3<T>,
    /// `[groups, out_dim]`.
    pub bias: Array2<T>,
    pub kernel: usize,
}

impl<T: Real> PatchAffine<T> {
    pub fn zeros(groups: usize, kernel: usize, c_in: usize, out_dim: usize) -> Self {
        PatchAffine {
            weights: Array3::zeros((groups, out_dim, kernel * c_in)),
            bias: Array2::zeros((groups, out_dim)),
            kernel,
        }
    }

    /// Glorot-uniform weights (fan computed per patch), zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        groups: usize,
        kernel: usize,
        c_in: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let in_dim = kernel * c_in;
        let w = glorot_init::<T, _>(&[groups, out_dim, in_dim], in_dim, out_dim, rng);
        PatchAffine {
            weights: w.into_dimensionality().expect("rank 3"),
            bias: Array2::zeros((groups, out_dim)),
            kernel,
        }
    }

    /// Identity map with `kernel = 1` on `groups` cells of `c` channels.
    pub fn identity(groups: usize, c: usize) -> Self {
        let mut a = Self::zeros(groups, 1, c, c);
        for g in 0..groups {
            for i in 0..c {
                a.weights[[g, i, i]] = T::one();
            }
        }
        a
    }

    pub fn groups(&self) -> usize {
        self.weights.dim().0
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dim().1
    }

    pub fn in_dim(&self) -> usize {
        self.weights.dim().2
    }

    pub fn c_in(&self) -> usize {
        self.in_dim() / self.kernel
    }

    fn check_input(&self, dims: (usize, usize, usize)) -> Result<()> {
        let (_, cells, c) = dims;
        ensure!(
            cells == self.groups() * self.kernel,
            "patch affine expects {} cells ({} groups of {}), got {cells}",
            self.groups() * self.kernel,
            self.groups(),
            self.kernel
        );
        ensure!(
            c * self.kernel == self.in_dim(),
            "patch affine expects {} channels, got {c}",
            self.c_in()
        );
        Ok(())
    }

    /// `[batch, groups * kernel, c_in] -> [batch, groups, out_dim]`.
    pub fn forward(&self, x: ArrayView3<'_, T>) -> Result<Array3<T>> {
        self.check_input(x.dim())?;
        let b = x.dim().0;
        let (g, out, inp) = self.weights.dim();
        let xs = x.as_standard_layout();
        let xs = xs
            .view()
            .into_shape_with_order((b, g, inp))
            .expect("contiguous");
        let mut y = Array3::zeros((b, g, out));
        for p in 0..g {
            let mut yp = y.slice_mut(s![.., p, ..]);
            yp.assign(&self.bias.row(p).broadcast((b, out)).expect("row broadcast"));
            general_mat_mul(
                T::one(),
                &xs.slice(s![.., p, ..]),
                &self.weights.index_axis(Axis(0), p).t(),
                T::one(),
                &mut yp,
            );
        }
        Ok(y)
    }

    /// Reverse pass: accumulates parameter gradients into `grad` and returns
    /// the input gradient shaped like `x`.
    pub fn backward(
        &self,
        x: ArrayView3<'_, T>,
        dy: ArrayView3<'_, T>,
        grad: &mut PatchAffine<T>,
    ) -> Result<Array3<T>> {
        self.check_input(x.dim())?;
        let (b, cells, c) = x.dim();
        let (g, out, inp) = self.weights.dim();
        ensure!(
            dy.dim() == (b, g, out),
            "output gradient shape {:?} does not match ({b}, {g}, {out})",
            dy.dim()
        );
        let xs = x.as_standard_layout();
        let xs = xs
            .view()
            .into_shape_with_order((b, g, inp))
            .expect("contiguous");
        let mut dx = Array3::zeros((b, g, inp));
        for p in 0..g {
            let dyp = dy.slice(s![.., p, ..]);
            let w = self.weights.index_axis(Axis(0), p);
            general_mat_mul(
                T::one(),
                &dyp.t(),
                &xs.slice(s![.., p, ..]),
                T::one(),
                &mut grad.weights.index_axis_mut(Axis(0), p),
            );
            let mut gb = grad.bias.row_mut(p);
            for row in dyp.rows() {
                gb += &row;
            }
            general_mat_mul(
                T::one(),
                &dyp,
                &w,
                T::zero(),
                &mut dx.slice_mut(s![.., p, ..]),
            );
        }
        Ok(dx.into_shape_with_order((b, cells, c)).expect("contiguous"))
    }
}

impl<T: Real> Parameters<T> for PatchAffine<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, T>)) {
        f("weights", self.weights.view().into_dyn());
        f("bias", self.bias.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'a, T>)) {
        f("weights", self.weights.view_mut().into_dyn());
        f("bias", self.bias.view_mut().into_dyn());
    }
}

/// Applies a patch affine layer to a single Morton tensor.
pub fn patch_affine<T: Real>(
    params: &PatchAffine<T>,
    x: &MortonTensor<T>,
) -> Result<MortonTensor<T>> {
    ensure!(
        params.kernel.is_power_of_two() && params.kernel.trailing_zeros() % 2 == 0,
        "kernel {} does not map whole quad-tree levels",
        params.kernel
    );
    let shift = (params.kernel.trailing_zeros() / 2) as usize;
    ensure!(
        x.level() >= shift,
        "kernel {} exceeds level {}",
        params.kernel,
        x.level()
    );
    let (cells, c) = x.data().dim();
    let data = x.data().as_standard_layout();
    let view = data
        .view()
        .into_shape_with_order((1, cells, c))
        .expect("contiguous");
    let y = params.forward(view)?;
    let (_, g, out) = y.dim();
    MortonTensor::new(
        x.level() - shift,
        y.into_shape_with_order((g, out)).expect("contiguous"),
    )
}

/// Residual unit `x + relu(A x)` with a channel-preserving `kernel = 1`
/// patch affine `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResUnit<T> {
    pub affine: PatchAffine<T>,
}

/// Values cached by [`ResUnit::forward_cached`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ResUnitCache<T> {
    input: Array3<T>,
    pre: Array3<T>,
}

impl<T: Real> ResUnit<T> {
    pub fn new(affine: PatchAffine<T>) -> Result<Self> {
        ensure!(
            affine.kernel == 1 && affine.in_dim() == affine.out_dim(),
            "residual unit needs a channel-preserving kernel-1 affine"
        );
        Ok(ResUnit { affine })
    }

    pub fn forward(&self, x: ArrayView3<'_, T>) -> Result<Array3<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: ArrayView3<'_, T>) -> Result<(Array3<T>, ResUnitCache<T>)> {
        let pre = self.affine.forward(x)?;
        let mut y = x.to_owned();
        Zip::from(&mut y).and(&pre).for_each(|y, &z| *y += relu(z));
        Ok((
            y,
            ResUnitCache {
                input: x.to_owned(),
                pre,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &ResUnitCache<T>,
        dy: ArrayView3<'_, T>,
        grad: &mut ResUnit<T>,
    ) -> Result<Array3<T>> {
        let mut dz = dy.to_owned();
        Zip::from(&mut dz).and(&cache.pre).for_each(|d, &z| {
            if z <= T::zero() {
                *d = T::zero();
            }
        });
        let mut dx = self
            .affine
            .backward(cache.input.view(), dz.view(), &mut grad.affine)?;
        dx += &dy;
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for ResUnit<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, T>)) {
        self.affine.visit(f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'a, T>)) {
        self.affine.visit_mut(f);
    }
}
