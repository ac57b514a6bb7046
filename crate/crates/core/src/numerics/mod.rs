//! Dense tensor substrate: arrays, seeded random streams, reference kernels and VTEN I/O.

pub mod ops;
pub mod rng;
pub mod tensor;
pub mod vten;

pub use ops::{affine, gelu, layer_norm, matmul, silu, softmax_lastdim, transpose_last2};
pub use rng::Rng;
pub use tensor::Tensor;

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `lo + (hi - lo) * u` draws, one per element of `dims`.
pub fn rng_uniform<T: crate::Scalar>(
    rng: &mut Rng,
    lo: f64,
    hi: f64,
    dims: impl Into<Vec<usize>>,
) -> crate::Result<Tensor<T>> {
    rng.uniform(lo, hi, dims)
}
