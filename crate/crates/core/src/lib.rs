#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod costmodel;
pub mod equiv;
#[cfg(test)]
mod invariants;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod scalar;
pub mod surgery;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
