use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Tensor};
use crate::scalar::Scalar;

/// Diffusion state `z` laid out as `[b, c, f, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo<T> {
    tensor: Tensor<T>,
}

/// Extents of a latent video.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoDims {
    pub batch: usize,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl VideoDims {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.batch, self.channels, self.frames, self.height, self.width]
    }
}

impl<T: Scalar> LatentVideo<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 5 {
            return Err(shape_err!(
                "latent video must be [b, c, f, h, w], got {:?}",
                tensor.dims()
            ));
        }
        Ok(Self { tensor })
    }

    pub fn zeros(dims: VideoDims) -> Result<Self> {
        Self::new(Tensor::zeros(dims.to_vec())?)
    }

    /// Standard normal noise scaled by `sigma`.
    pub fn noise(dims: VideoDims, seed: u64, sigma: f64) -> Result<Self> {
        let t = Rng::new(seed).normal::<T>(dims.to_vec())?;
        Self::new(t.scale(T::lit(sigma)))
    }

    pub fn dims(&self) -> VideoDims {
        let d = self.tensor.dims();
        VideoDims {
            batch: d[0],
            channels: d[1],
            frames: d[2],
            height: d[3],
            width: d[4],
        }
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    /// Temporal regime: spatial positions merge into the batch, `[b*h*w, f, c]`.
    pub fn reshape_temporal(&self) -> Result<Tensor<T>> {
        let d = self.dims();
        self.tensor
            .permute(&[0, 3, 4, 2, 1])?
            .reshape(vec![d.batch * d.positions(), d.frames, d.channels])
    }

    /// Spatial regime: frames merge into the batch, `[b*f, h*w, c]`.
    pub fn reshape_spatial(&self) -> Result<Tensor<T>> {
        let d = self.dims();
        self.tensor
            .permute(&[0, 2, 3, 4, 1])?
            .reshape(vec![d.batch * d.frames, d.positions(), d.channels])
    }

    /// Inverse of [`reshape_temporal`](Self::reshape_temporal).
    pub fn from_temporal(seq: Tensor<T>, dims: VideoDims) -> Result<Self> {
        let want = [dims.batch * dims.positions(), dims.frames, dims.channels];
        if seq.dims() != want {
            return Err(shape_err!("temporal sequence {:?} is not {want:?}", seq.dims()));
        }
        let t = seq
            .reshape(vec![dims.batch, dims.height, dims.width, dims.frames, dims.channels])?
            .permute(&[0, 4, 3, 1, 2])?;
        Self::new(t)
    }

    /// Inverse of [`reshape_spatial`](Self::reshape_spatial).
    pub fn from_spatial(seq: Tensor<T>, dims: VideoDims) -> Result<Self> {
        let want = [dims.batch * dims.frames, dims.positions(), dims.channels];
        if seq.dims() != want {
            return Err(shape_err!("spatial sequence {:?} is not {want:?}", seq.dims()));
        }
        let t = seq
            .reshape(vec![dims.batch, dims.frames, dims.height, dims.width, dims.channels])?
            .permute(&[0, 4, 1, 2, 3])?;
        Self::new(t)
    }

    /// Single frame `k` of every batch element, `[b, c, h, w]`.
    pub fn frame(&self, k: usize) -> Result<Tensor<T>> {
        let d = self.dims();
        if k >= d.frames {
            return Err(shape_err!("frame {k} out of range for {} frames", d.frames));
        }
        let hw = d.positions();
        let mut data = Vec::with_capacity(d.batch * d.channels * hw);
        for b in 0..d.batch {
            for c in 0..d.channels {
                let off = ((b * d.channels + c) * d.frames + k) * hw;
                data.extend_from_slice(&self.tensor.data()[off..off + hw]);
            }
        }
        Tensor::new(vec![d.batch, d.channels, d.height, d.width], data)
    }
}

/// Whether an embedding carries the image condition or stands in for "no condition".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Conditional,
    Null,
}

/// Globally pooled image embedding `[b, 1, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEmbedding<T> {
    tensor: Tensor<T>,
    kind: EmbeddingKind,
}

impl<T: Scalar> ImageEmbedding<T> {
    pub fn new(tensor: Tensor<T>, kind: EmbeddingKind) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(shape_err!("embedding must be [b, 1, D], got {:?}", tensor.dims()));
        }
        if tensor.dims()[1] != 1 {
            return Err(shape_err!(
                "embedding token extent must be 1 (pooled), got {:?}; multi-token conditioning is not supported",
                tensor.dims()
            ));
        }
        Ok(Self { tensor, kind })
    }

    pub fn conditional(tensor: Tensor<T>) -> Result<Self> {
        Self::new(tensor, EmbeddingKind::Conditional)
    }

    /// Zero embedding used for the unconditional branch.
    pub fn null(batch: usize, dim: usize) -> Result<Self> {
        Self::new(Tensor::zeros(vec![batch, 1, dim])?, EmbeddingKind::Null)
    }

    /// Seeded embedding with entries in `[-1, 1)`.
    pub fn random(batch: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::conditional(Rng::new(seed).uniform(-1.0, 1.0, vec![batch, 1, dim])?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn batch(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.tensor.dims()[2]
    }

    /// Repeats each batch row `times` times: `[b, 1, D] -> [b*times, 1, D]`.
    pub fn broadcast(&self, times: usize) -> Result<Tensor<T>> {
        self.tensor.repeat_interleave0(times)
    }
}
