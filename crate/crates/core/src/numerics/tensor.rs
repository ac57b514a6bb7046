use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// Every extent is at least 1 and the rank is at least 1, so `data.len()`
/// always equals the product of `dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(shape_err!("rank must be at least 1"));
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(shape_err!("extent of axis {axis} is zero in {dims:?}"));
    }
    Ok(dims.iter().product())
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        let n = check_dims(&dims)?;
        if n != data.len() {
            return Err(shape_err!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let dims = dims.into();
        let n = check_dims(&dims)?;
        Ok(Self {
            dims,
            data: vec![value; n],
        })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let dims = dims.into();
        let n = check_dims(&dims)?;
        Ok(Self {
            dims,
            data: (0..n).map(&mut f).collect(),
        })
    }

    pub fn from_slice(dims: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.dims.last().expect("rank >= 1")
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(shape_err!(
                "index rank {} does not match tensor rank {}",
                index.len(),
                self.dims.len()
            ));
        }
        let mut off = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.dims).enumerate() {
            if i >= d {
                return Err(shape_err!("index {i} out of range for axis {axis} of extent {d}"));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        let n = check_dims(&dims)?;
        if n != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) into {dims:?}",
                self.dims,
                self.data.len()
            ));
        }
        Ok(Self {
            dims,
            data: self.data,
        })
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err!("{axes:?} is not a permutation of 0..{rank}"));
        }
        let in_strides = self.strides();
        let out_dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[src]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < out_dims[ax] {
                    break;
                }
                src -= src_strides[ax] * out_dims[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self {
            dims: out_dims,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape_err!(
                "elementwise operands differ: {:?} vs {:?}",
                self.dims,
                other.dims
            ));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// Adds `row` (extent = last dim) to every last-axis slice.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        let n = self.last_dim();
        if row.len() != n {
            return Err(shape_err!(
                "row of {} elements cannot broadcast over last extent {n}",
                row.len()
            ));
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(n) {
            for (v, &b) in chunk.iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Repeats each leading-axis slab `times` times in place (repeat-interleave on axis 0).
    pub fn repeat_interleave0(&self, times: usize) -> Result<Self> {
        if times == 0 {
            return Err(shape_err!("repeat count must be positive"));
        }
        let slab = self.len() / self.dims[0];
        let mut data = Vec::with_capacity(self.len() * times);
        for chunk in self.data.chunks_exact(slab) {
            for _ in 0..times {
                data.extend_from_slice(chunk);
            }
        }
        let mut dims = self.dims.clone();
        dims[0] *= times;
        Ok(Self { dims, data })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| shape_err!("nothing to concatenate"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(shape_err!("axis {axis} out of range for rank {rank}"));
        }
        for p in parts {
            let same = p.rank() == rank
                && p.dims.iter().zip(&first.dims).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err!(
                    "cannot concatenate {:?} with {:?} along axis {axis}",
                    p.dims,
                    first.dims
                ));
            }
        }
        let outer: usize = first.dims[..axis].iter().product();
        let inner: usize = first.dims[axis + 1..].iter().product();
        let mut dims = first.dims.clone();
        dims[axis] = parts.iter().map(|p| p.dims[axis]).sum();
        let mut data = Vec::with_capacity(dims.iter().product());
        for o in 0..outer {
            for p in parts {
                let block = p.dims[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Self { dims, data })
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }

    /// Number of elements whose bit patterns differ (shape mismatch counts every element).
    pub fn bitwise_diff_count(&self, other: &Self) -> usize {
        if self.dims != other.dims {
            return self.len().max(other.len());
        }
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a.bits() != b.bits())
            .count()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(shape_err!(
                "cannot compare {:?} with {:?}",
                self.dims,
                other.dims
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_bad_length() {
        assert!(Tensor::<f32>::zeros(vec![2, 0]).is_err());
        assert!(Tensor::<f32>::zeros(Vec::new()).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn permute_matches_index_formula() {
        let t = Tensor::<f64>::from_fn(vec![2, 3, 4], |i| i as f64).unwrap();
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.dims(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.get(&[c, a, b]).unwrap(), t.get(&[a, b, c]).unwrap());
                }
            }
        }
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_middle_axis() {
        let a = Tensor::<f32>::from_slice(vec![2, 1, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_slice(vec![2, 2, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.dims(), &[2, 3, 2]);
        assert_eq!(
            c.data(),
            &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]
        );
    }

    #[test]
    fn repeat_interleave_axis0() {
        let a = Tensor::<f32>::from_slice(vec![2, 2], &[1., 2., 3., 4.]).unwrap();
        let r = a.repeat_interleave0(2).unwrap();
        assert_eq!(r.dims(), &[4, 2]);
        assert_eq!(r.data(), &[1., 2., 1., 2., 3., 4., 3., 4.]);
    }

    #[test]
    fn bitwise_eq_sees_signed_zero() {
        let a = Tensor::<f32>::from_slice(vec![1], &[0.0]).unwrap();
        let b = Tensor::<f32>::from_slice(vec![1], &[-0.0]).unwrap();
        assert_eq!(a, b);
        assert!(!a.bitwise_eq(&b));
        assert_eq!(a.bitwise_diff_count(&b), 1);
    }
}
