use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{arg_err, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Seeded xoshiro256** stream. The 256-bit state is expanded from the `u64`
/// seed with SplitMix64, so a seed names the same sequence on every platform.
///
/// Single owner; not meant to be shared between threads.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// One draw in `[0, 1)`.
    pub fn unit<T: Scalar>(&mut self) -> T {
        T::unit_from_bits(self.next_u64())
    }

    /// One draw in `[lo, hi)`. Draws that round up to `hi` are redrawn.
    pub fn uniform_scalar<T: Scalar>(&mut self, lo: T, hi: T) -> Result<T> {
        if !(lo < hi) {
            return Err(arg_err!("uniform range needs lo < hi, got [{lo}, {hi})"));
        }
        loop {
            let v = lo + (hi - lo) * self.unit::<T>();
            if v < hi {
                return Ok(v);
            }
        }
    }

    pub fn uniform<T: Scalar>(&mut self, lo: f64, hi: f64, dims: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        if !(lo < hi) {
            return Err(arg_err!("uniform range needs lo < hi, got [{lo}, {hi})"));
        }
        let dims = dims.into();
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.uniform_scalar(lo, hi)?);
        }
        Tensor::new(dims, data)
    }

    /// Standard normal draws via Box-Muller, computed in f64 and rounded to `T`.
    pub fn normal<T: Scalar>(&mut self, dims: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n + 1);
        while data.len() < n {
            let u1 = 1.0 - self.unit::<f64>();
            let u2 = self.unit::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(T::lit(r * theta.cos()));
            data.push(T::lit(r * theta.sin()));
        }
        data.truncate(n);
        Tensor::new(dims, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a = Rng::new(0).uniform::<f32>(-1.0, 1.0, vec![64]).unwrap();
        let b = Rng::new(0).uniform::<f32>(-1.0, 1.0, vec![64]).unwrap();
        assert!(a.bitwise_eq(&b));
        let c = Rng::new(1).uniform::<f32>(-1.0, 1.0, vec![64]).unwrap();
        assert!(!a.bitwise_eq(&c));
    }

    #[test]
    fn narrow_range_contained() {
        let hi = 1.0f32;
        let lo = hi - f32::EPSILON;
        let t = Rng::new(4).uniform::<f32>(lo as f64, hi as f64, vec![1000]).unwrap();
        assert!(t.data().iter().all(|&v| v >= lo && v < hi));
    }

    #[test]
    fn uniform_mean_converges() {
        let t = Rng::new(12345).uniform::<f64>(0.0, 1.0, vec![100_000]).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!((mean - 0.5).abs() <= 0.01, "mean {mean}");
    }

    #[test]
    fn rejects_empty_range() {
        assert!(Rng::new(0).uniform::<f64>(1.0, 1.0, vec![1]).is_err());
        assert!(Rng::new(0).uniform::<f64>(2.0, 1.0, vec![1]).is_err());
    }

    #[test]
    fn known_stream_prefix() {
        // SplitMix64(0) expansion followed by xoshiro256**; pins the generator choice.
        let mut r = Rng::new(0);
        let first = r.next_u64();
        let mut again = Rng::new(0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, 0x99EC_5F36_CB75_F2B4);
    }
}
