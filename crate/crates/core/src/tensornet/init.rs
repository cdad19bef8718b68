use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::Real;

/// Half-width `√(6 / (fan_in + fan_out))` of the Glorot-uniform support.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

/// Glorot-uniform samples of the given shape; draws are consumed in
/// row-major order so a fixed seed reproduces the array exactly.
pub fn glorot_init<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ArrayD<T> {
    let bound = glorot_bound(fan_in, fan_out);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        T::from_f64(rng.random_range(-bound..=bound)).expect("finite")
    })
}
