use ndarray::linalg::general_mat_mul;
use ndarray::{
    Array1, Array2, Array3, Array4, ArrayView3, ArrayView4, ArrayViewD, ArrayViewMutD, Axis,
};
use rand::Rng;

use super::{glorot_init, Parameters, Real};
use crate::error::{ensure, Result};

/// Same-padded 2D cross-correlation with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[kh, kw, c_in, c_out]`.
    pub kernel: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        Conv2d {
            kernel: Array4::zeros((kh, kw, c_in, c_out)),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(k: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let w = glorot_init::<T, _>(&[k, k, c_in, c_out], k * k * c_in, k * k * c_out, rng);
        Conv2d {
            kernel: w.into_dimensionality().expect("rank 4"),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn c_in(&self) -> usize {
        self.kernel.dim().2
    }

    pub fn c_out(&self) -> usize {
        self.kernel.dim().3
    }

    fn check(&self, dims: (usize, usize, usize, usize)) -> Result<()> {
        let (kh, kw, ci, _) = self.kernel.dim();
        ensure!(
            kh % 2 == 1 && kw % 2 == 1,
            "kernel {kh}x{kw} must have odd sides"
        );
        ensure!(
            dims.3 == ci,
            "convolution expects {ci} input channels, got {}",
            dims.3
        );
        Ok(())
    }

    fn flat_kernel(&self) -> Array2<T> {
        let (kh, kw, ci, co) = self.kernel.dim();
        self.kernel
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((kh * kw * ci, co))
            .expect("contiguous")
    }

    fn im2col(&self, x: ArrayView3<'_, T>) -> Array2<T> {
        let (h, w, c) = x.dim();
        let (kh, kw, _, _) = self.kernel.dim();
        let (ph, pw) = (kh / 2, kw / 2);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let width = kh * kw * c;
        let mut col = vec![T::zero(); h * w * width];
        for i in 0..h {
            for j in 0..w {
                let row = &mut col[(i * w + j) * width..(i * w + j + 1) * width];
                for di in 0..kh {
                    let si = i + di;
                    if si < ph || si - ph >= h {
                        continue;
                    }
                    for dj in 0..kw {
                        let sj = j + dj;
                        if sj < pw || sj - pw >= w {
                            continue;
                        }
                        let src = ((si - ph) * w + (sj - pw)) * c;
                        let dst = (di * kw + dj) * c;
                        row[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
        Array2::from_shape_vec((h * w, width), col).expect("sized")
    }

    fn col2im(&self, col: &Array2<T>, h: usize, w: usize, c: usize) -> Array3<T> {
        let (kh, kw, _, _) = self.kernel.dim();
        let (ph, pw) = (kh / 2, kw / 2);
        let width = kh * kw * c;
        let cs = col.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); h * w * c];
        for i in 0..h {
            for j in 0..w {
                let row = &cs[(i * w + j) * width..(i * w + j + 1) * width];
                for di in 0..kh {
                    let si = i + di;
                    if si < ph || si - ph >= h {
                        continue;
                    }
                    for dj in 0..kw {
                        let sj = j + dj;
                        if sj < pw || sj - pw >= w {
                            continue;
                        }
                        let dst = ((si - ph) * w + (sj - pw)) * c;
                        let src = (di * kw + dj) * c;
                        for k in 0..c {
                            out[dst + k] += row[src + k];
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((h, w, c), out).expect("sized")
    }

    /// `[batch, h, w, c_in] -> [batch, h, w, c_out]`.
    pub fn forward(&self, x: ArrayView4<'_, T>) -> Result<Array4<T>> {
        self.check(x.dim())?;
        let (b, h, w, _) = x.dim();
        let co = self.c_out();
        let k = self.flat_kernel();
        let mut y = Array4::zeros((b, h, w, co));
        for (xb, mut yb) in x.outer_iter().zip(y.outer_iter_mut()) {
            let col = self.im2col(xb);
            let mut out = Array2::from_shape_fn((h * w, co), |(_, o)| self.bias[o]);
            general_mat_mul(T::one(), &col, &k, T::one(), &mut out);
            yb.assign(&out.into_shape_with_order((h, w, co)).expect("contiguous"));
        }
        Ok(y)
    }

    /// Reverse pass: accumulates kernel/bias gradients into `grad` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        x: ArrayView4<'_, T>,
        dy: ArrayView4<'_, T>,
        grad: &mut Conv2d<T>,
    ) -> Result<Array4<T>> {
        self.check(x.dim())?;
        let (b, h, w, ci) = x.dim();
        let co = self.c_out();
        ensure!(
            dy.dim() == (b, h, w, co),
            "output gradient shape {:?} does not match ({b}, {h}, {w}, {co})",
            dy.dim()
        );
        let k = self.flat_kernel();
        let mut dk = Array2::<T>::zeros(k.dim());
        let mut dx = Array4::zeros((b, h, w, ci));
        for ((xb, dyb), mut dxb) in x.outer_iter().zip(dy.outer_iter()).zip(dx.outer_iter_mut()) {
            let col = self.im2col(xb);
            let dyb = dyb.as_standard_layout();
            let d = dyb
                .view()
                .into_shape_with_order((h * w, co))
                .expect("contiguous");
            general_mat_mul(T::one(), &col.t(), &d, T::one(), &mut dk);
            grad.bias += &d.sum_axis(Axis(0));
            let mut dcol = Array2::zeros(col.dim());
            general_mat_mul(T::one(), &d, &k.t(), T::zero(), &mut dcol);
            dxb.assign(&self.col2im(&dcol, h, w, ci));
        }
        grad.kernel += &dk
            .into_shape_with_order(self.kernel.dim())
            .expect("contiguous");
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for Conv2d<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, T>)) {
        f("kernel", self.kernel.view().into_dyn());
        f("bias", self.bias.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'a, T>)) {
        f("kernel", self.kernel.view_mut().into_dyn());
        f("bias", self.bias.view_mut().into_dyn());
    }
}

/// Applies a convolution to a single `[h, w, c_in]` image.
pub fn conv2d<T: Real>(params: &Conv2d<T>, x: ArrayView3<'_, T>) -> Result<Array3<T>> {
    let y = params.forward(x.insert_axis(Axis(0)))?;
    Ok(y.index_axis_move(Axis(0), 0))
}
