use crate::error::{shape_err, Result};
use crate::model::params::{ParamVisitor, ParamVisitorMut};
use crate::numerics::{affine, gelu, layer_norm, Rng, Tensor, LAYER_NORM_EPS};
use crate::scalar::Scalar;

fn bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Affine layer `x . weight + bias`, weight stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let a = bound(inputs);
        Ok(Self {
            weight: rng.uniform(-a, a, vec![inputs, outputs])?,
            bias: rng.uniform(-a, a, vec![outputs])?,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(vec![inputs, outputs])?,
            bias: Tensor::zeros(vec![outputs])?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        affine(x, &self.weight, &self.bias)
    }

    pub(crate) fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        v.visit(&format!("{prefix}.weight"), &self.weight);
        v.visit(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        v.visit(&format!("{prefix}.weight"), &mut self.weight)?;
        v.visit(&format!("{prefix}.bias"), &mut self.bias)
    }
}

/// Layer norm over the channel (last) axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Norm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gain: Tensor::full(vec![channels], T::one())?,
            bias: Tensor::zeros(vec![channels])?,
        })
    }

    /// Gain near one and bias near zero, so seeded models are not all-identity.
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            gain: rng.uniform(0.8, 1.2, vec![channels])?,
            bias: rng.uniform(-0.1, 0.1, vec![channels])?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, &self.gain, &self.bias, T::lit(LAYER_NORM_EPS))
    }

    /// Normalizes a channel-first `[b, c, f, h, w]` tensor over `c`.
    pub fn forward_channels(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 5 {
            return Err(shape_err!("channel norm expects rank 5, got {:?}", x.dims()));
        }
        let last = x.permute(&[0, 2, 3, 4, 1])?;
        self.forward(&last)?.permute(&[0, 4, 1, 2, 3])
    }

    pub(crate) fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        v.visit(&format!("{prefix}.gain"), &self.gain);
        v.visit(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        v.visit(&format!("{prefix}.gain"), &mut self.gain)?;
        v.visit(&format!("{prefix}.bias"), &mut self.bias)
    }
}

/// Two-layer feed-forward with 4x expansion and GELU.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub up: Linear<T>,
    pub down: Linear<T>,
}

pub const FF_EXPANSION: usize = 4;

impl<T: Scalar> FeedForward<T> {
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            up: Linear::init(channels, FF_EXPANSION * channels, rng)?,
            down: Linear::init(FF_EXPANSION * channels, channels, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.down.forward(&gelu(&self.up.forward(x)?))
    }

    pub(crate) fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        self.up.visit(&format!("{prefix}.up"), v);
        self.down.visit(&format!("{prefix}.down"), v);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.up.visit_mut(&format!("{prefix}.up"), v)?;
        self.down.visit_mut(&format!("{prefix}.down"), v)
    }
}

/// Per-frame 2D convolution, `kernel x kernel`, zero padding `kernel / 2`.
///
/// Weight layout `[c_out, c_in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn init(c_in: usize, c_out: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        let a = bound(c_in * kernel * kernel);
        Ok(Self {
            weight: rng.uniform(-a, a, vec![c_out, c_in, kernel, kernel])?,
            bias: rng.uniform(-a, a, vec![c_out])?,
            stride,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn output_extent(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel() / 2;
        (
            (h + 2 * pad - self.kernel()) / self.stride + 1,
            (w + 2 * pad - self.kernel()) / self.stride + 1,
        )
    }

    /// `[b, c_in, f, h, w] -> [b, c_out, f, h', w']`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = x.dims();
        if x.rank() != 5 || d[1] != self.in_channels() {
            return Err(shape_err!(
                "conv2d with {} input channels given {:?}",
                self.in_channels(),
                d
            ));
        }
        let (b, ci, f, h, w) = (d[0], d[1], d[2], d[3], d[4]);
        let (co, k, s) = (self.out_channels(), self.kernel(), self.stride);
        let pad = k / 2;
        let (ho, wo) = self.output_extent(h, w);
        let (xv, wv, bv) = (x.data(), self.weight.data(), self.bias.data());
        let mut out = vec![T::zero(); b * co * f * ho * wo];
        for bi in 0..b {
            for o in 0..co {
                for fi in 0..f {
                    let dst = ((bi * co + o) * f + fi) * ho * wo;
                    for y in 0..ho {
                        for xo in 0..wo {
                            let mut acc = bv[o];
                            for i in 0..ci {
                                let src = ((bi * ci + i) * f + fi) * h * w;
                                let wk = (o * ci + i) * k * k;
                                for ky in 0..k {
                                    let iy = (y * s + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (xo * s + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        acc += wv[wk + ky * k + kx] * xv[src + iy as usize * w + ix as usize];
                                    }
                                }
                            }
                            out[dst + y * wo + xo] = acc;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![b, co, f, ho, wo], out)
    }

    pub(crate) fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        v.visit(&format!("{prefix}.weight"), &self.weight);
        v.visit(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        v.visit(&format!("{prefix}.weight"), &mut self.weight)?;
        v.visit(&format!("{prefix}.bias"), &mut self.bias)
    }
}

/// Depthwise convolution along the frame axis, kernel 3, same padding.
///
/// Stand-in for a full 3D temporal convolution. Weight layout `[c, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalConv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub const TEMPORAL_KERNEL: usize = 3;

impl<T: Scalar> TemporalConv<T> {
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        let a = bound(TEMPORAL_KERNEL);
        Ok(Self {
            weight: rng.uniform(-a, a, vec![channels, TEMPORAL_KERNEL])?,
            bias: rng.uniform(-a, a, vec![channels])?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = x.dims();
        if x.rank() != 5 || d[1] != self.weight.dims()[0] {
            return Err(shape_err!(
                "temporal conv over {} channels given {:?}",
                self.weight.dims()[0],
                d
            ));
        }
        let (b, c, f, hw) = (d[0], d[1], d[2], d[3] * d[4]);
        let (xv, wv, bv) = (x.data(), self.weight.data(), self.bias.data());
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * f * hw;
                for fi in 0..f {
                    for p in 0..hw {
                        let mut acc = bv[ch];
                        for kk in 0..TEMPORAL_KERNEL {
                            let src = fi as isize + kk as isize - 1;
                            if src < 0 || src >= f as isize {
                                continue;
                            }
                            acc += wv[ch * TEMPORAL_KERNEL + kk] * xv[base + src as usize * hw + p];
                        }
                        out[base + fi * hw + p] = acc;
                    }
                }
            }
        }
        Tensor::new(d.to_vec(), out)
    }

    pub(crate) fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        v.visit(&format!("{prefix}.weight"), &self.weight);
        v.visit(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        v.visit(&format!("{prefix}.weight"), &mut self.weight)?;
        v.visit(&format!("{prefix}.bias"), &mut self.bias)
    }
}

/// Adds a per-(batch, channel) vector `[b, c]` to every frame and position of `[b, c, f, h, w]`.
pub fn add_channel_bias<T: Scalar>(x: &Tensor<T>, per_channel: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    if per_channel.dims() != [d[0], d[1]] {
        return Err(shape_err!(
            "channel bias {:?} does not match {:?}",
            per_channel.dims(),
            d
        ));
    }
    let span = d[2] * d[3] * d[4];
    let mut out = x.clone();
    for (chunk, &v) in out.data_mut().chunks_exact_mut(span).zip(per_channel.data()) {
        for e in chunk {
            *e += v;
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2x spatial upsampling of `[b, c, f, h, w]`.
pub fn upsample_nearest2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    let (h, w) = (d[3], d[4]);
    let (h2, w2) = (2 * h, 2 * w);
    let planes = d[0] * d[1] * d[2];
    let mut out = Vec::with_capacity(planes * h2 * w2);
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..h2 {
            for xx in 0..w2 {
                out.push(plane[(y / 2) * w + xx / 2]);
            }
        }
    }
    Tensor::new(vec![d[0], d[1], d[2], h2, w2], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Rng::new(1);
        let x = rng.uniform::<f64>(-1.0, 1.0, vec![1, 2, 2, 3, 3]).unwrap();
        let mut w = vec![0.0; 2 * 2 * 9];
        w[4] = 1.0; // out 0 <- in 0 center
        w[3 * 9 + 4] = 1.0; // out 1 <- in 1 center
        let conv = Conv2d {
            weight: Tensor::new(vec![2, 2, 3, 3], w).unwrap(),
            bias: Tensor::zeros(vec![2]).unwrap(),
            stride: 1,
        };
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_stride_two_extent() {
        let mut rng = Rng::new(2);
        let conv = Conv2d::<f32>::init(3, 4, 3, 2, &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 3, 2, 8, 6]).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[1, 4, 2, 4, 3]);
    }

    #[test]
    fn temporal_conv_edges_are_zero_padded() {
        let conv = TemporalConv {
            weight: Tensor::<f64>::from_slice(vec![1, 3], &[1.0, 10.0, 100.0]).unwrap(),
            bias: Tensor::zeros(vec![1]).unwrap(),
        };
        let x = Tensor::from_slice(vec![1, 1, 3, 1, 1], &[1.0, 2.0, 3.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), &[210.0, 321.0, 32.0]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::<f32>::from_slice(vec![1, 1, 1, 1, 2], &[1.0, 2.0]).unwrap();
        let y = upsample_nearest2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 2, 4]);
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }
}
