//! Differentiable layer kernel: patchwise affine maps on the Morton axis,
//! same-padded 2D convolution, ReLU residual units and Glorot initialization,
//! each with a hand-written reverse pass.
//!
//! Tensors on the Morton axis are batched as `[batch, cells, channels]`;
//! images as `[batch, height, width, channels]`.

mod affine;
mod conv;
mod init;

use std::fmt::Debug;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

pub use affine::{patch_affine, PatchAffine, ResUnit, ResUnitCache};
pub use conv::{conv2d, Conv2d};
pub use init::{glorot_bound, glorot_init};

/// Floating-point element type of the layer kernel (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Uniform access to the trainable arrays of a layer or model, in a fixed
/// order. Names are stable across runs and used for checkpoints.
pub trait Parameters<T: Real> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, T>));
    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'a, T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, a| n += a.len());
        n
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }

    /// Copies every array out, in visiting order.
    fn to_arrays(&self) -> Vec<ArrayD<T>> {
        let mut out = Vec::new();
        self.visit(&mut |_, a| out.push(a.to_owned()));
        out
    }
}
