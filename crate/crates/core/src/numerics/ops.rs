//! Reference kernels. Summation order is fixed (ascending index, no
//! reassociation), so results are bitwise reproducible for a given dtype.

use crate::error::{shape_err, Error, Result};
use crate::numerics::tensor::{strides, Tensor};
use crate::scalar::Scalar;

/// Broadcasts two batch shapes numpy-style (right-aligned, extent 1 stretches).
fn broadcast_batch(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err!("batch extents {a:?} and {b:?} do not broadcast")),
        };
    }
    Ok(out)
}

/// Element strides of `src` batch dims when viewed as `target` (0 where broadcast).
fn batch_strides(src: &[usize], target: &[usize], slab: usize) -> Vec<usize> {
    let offset = target.len() - src.len();
    let own = strides(src);
    (0..target.len())
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                own[i - offset] * slab
            }
        })
        .collect()
}

/// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(shape_err!(
            "matmul needs rank >= 2 operands, got {:?} and {:?}",
            a.dims(),
            b.dims()
        ));
    }
    let (ad, bd) = (a.dims(), b.dims());
    let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
    let (k2, n) = (bd[bd.len() - 2], bd[bd.len() - 1]);
    if k != k2 {
        return Err(shape_err!(
            "matmul inner extents differ: {ad:?} x {bd:?} ({k} vs {k2})"
        ));
    }
    let a_batch = &ad[..ad.len() - 2];
    let b_batch = &bd[..bd.len() - 2];
    let batch = broadcast_batch(a_batch, b_batch)?;
    let a_str = batch_strides(a_batch, &batch, m * k);
    let b_str = batch_strides(b_batch, &batch, k * n);
    let count: usize = batch.iter().product();

    let (av, bv) = (a.data(), b.data());
    let mut out = vec![T::zero(); count * m * n];
    let mut idx = vec![0usize; batch.len()];
    for bi in 0..count {
        let a_off: usize = idx.iter().zip(&a_str).map(|(i, s)| i * s).sum();
        let b_off: usize = idx.iter().zip(&b_str).map(|(i, s)| i * s).sum();
        let o = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let row = &mut o[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[a_off + i * k + p];
                let brow = &bv[b_off + p * n..b_off + (p + 1) * n];
                for (acc, &y) in row.iter_mut().zip(brow) {
                    *acc += x * y;
                }
            }
        }
        for ax in (0..batch.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < batch[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    let mut dims = batch;
    dims.push(m);
    dims.push(n);
    Tensor::new(dims, out)
}

/// Swaps the last two axes.
pub fn transpose_last2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(shape_err!("transpose needs rank >= 2, got {:?}", x.dims()));
    }
    let mut axes: Vec<usize> = (0..r).collect();
    axes.swap(r - 2, r - 1);
    x.permute(&axes)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let n = x.last_dim();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// `x . w + bias` over the last axis of `x`, broadcast across leading axes.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if w.rank() != 2 {
        return Err(shape_err!("affine weight must be [k, n], got {:?}", w.dims()));
    }
    let (k, n) = (w.dims()[0], w.dims()[1]);
    if x.last_dim() != k {
        return Err(shape_err!(
            "affine input last extent {} does not match weight {:?}",
            x.last_dim(),
            w.dims()
        ));
    }
    if bias.len() != n {
        return Err(shape_err!(
            "affine bias has {} elements, weight outputs {n}",
            bias.len()
        ));
    }
    let rows = x.len() / k;
    let flat = x.clone().reshape(vec![rows, k])?;
    let prod = matmul(&flat, w)?.add_row(bias)?;
    let mut dims = x.dims().to_vec();
    *dims.last_mut().expect("rank >= 1") = n;
    prod.reshape(dims)
}

/// Normalizes each last-axis slice to zero mean, unit (biased) variance, then applies gain and bias.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if gain.len() != n || bias.len() != n {
        return Err(shape_err!(
            "layer norm over extent {n} given gain {:?} and bias {:?}",
            gain.dims(),
            bias.dims()
        ));
    }
    if eps <= T::zero() {
        return Err(Error::Argument("layer norm eps must be positive".into()));
    }
    let count = T::lit(n as f64);
    let (g, b) = (gain.data(), bias.data());
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let mean = row.iter().copied().sum::<T>() / count;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = (var + eps).sqrt().recip();
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * g[i] + b[i];
        }
    }
    Ok(out)
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v / (T::one() + (-v).exp()))
}

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    x.map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
}
