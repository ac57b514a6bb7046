use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::layers::Linear;
use crate::model::params::{ParamVisitor, ParamVisitorMut};
use crate::numerics::{matmul, softmax_lastdim, transpose_last2, Rng, Tensor};
use crate::scalar::Scalar;

/// The four attention mechanisms of the spatio-temporal denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttentionKind {
    /// Spatial self-attention over `[b*f, h*w, c]`.
    #[serde(rename = "SSA")]
    Ssa,
    /// Spatial cross-attention against the image embedding.
    #[serde(rename = "SCA")]
    Sca,
    /// Temporal self-attention over `[b*h*w, f, c]`.
    #[serde(rename = "TSA")]
    Tsa,
    /// Temporal cross-attention against the image embedding.
    #[serde(rename = "TCA")]
    Tca,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [Self::Ssa, Self::Sca, Self::Tsa, Self::Tca];

    pub fn is_cross(self) -> bool {
        matches!(self, Self::Sca | Self::Tca)
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Self::Tsa | Self::Tca)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Ssa => "SSA",
            Self::Sca => "SCA",
            Self::Tsa => "TSA",
            Self::Tca => "TCA",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One multi-head attention site with its Q/K/V/output projections.
///
/// Q and O act on `channels`; K and V read from `source_dim`, which is the
/// channel count for self-attention and the embedding width for cross-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSite<T> {
    pub kind: AttentionKind,
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Scalar> AttentionSite<T> {
    pub fn init(kind: AttentionKind, channels: usize, heads: usize, source_dim: usize, rng: &mut Rng) -> Result<Self> {
        let site = Self {
            kind,
            heads,
            q: Linear::init(channels, channels, rng)?,
            k: Linear::init(source_dim, channels, rng)?,
            v: Linear::init(source_dim, channels, rng)?,
            o: Linear::init(channels, channels, rng)?,
        };
        site.validate()?;
        Ok(site)
    }

    pub fn zeros(kind: AttentionKind, channels: usize, heads: usize, source_dim: usize) -> Result<Self> {
        Ok(Self {
            kind,
            heads,
            q: Linear::zeros(channels, channels)?,
            k: Linear::zeros(source_dim, channels)?,
            v: Linear::zeros(source_dim, channels)?,
            o: Linear::zeros(channels, channels)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.q.outputs()
    }

    pub fn source_dim(&self) -> usize {
        self.k.inputs()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} site: {c} channels not divisible by {} heads",
                self.kind, self.heads
            )));
        }
        let square = |l: &Linear<T>| l.inputs() == c && l.outputs() == c;
        if !square(&self.q) || !square(&self.o) {
            return Err(Error::Config(format!("{} site: Q/O projections must be {c}x{c}", self.kind)));
        }
        if self.v.inputs() != self.k.inputs() || self.k.outputs() != c || self.v.outputs() != c {
            return Err(Error::Config(format!("{} site: K/V projections disagree", self.kind)));
        }
        if !self.kind.is_cross() && self.source_dim() != c {
            return Err(Error::Config(format!(
                "{} site: self-attention K/V must read {c} channels, got {}",
                self.kind,
                self.source_dim()
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        [&self.q, &self.k, &self.v, &self.o]
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// `[B, L, c] -> [B, H, L, d_k]`.
    fn split_heads(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = x.dims();
        x.clone()
            .reshape(vec![d[0], d[1], self.heads, self.head_dim()])?
            .permute(&[0, 2, 1, 3])
    }

    fn merge_heads(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = x.dims();
        x.permute(&[0, 2, 1, 3])?.reshape(vec![d[0], d[2], d[1] * d[3]])
    }

    /// Attention weights `[B, H, L, L_k]` and the concatenated, output-projected result `[B, L, c]`.
    fn attend(&self, x: &Tensor<T>, source: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.validate()?;
        if x.rank() != 3 || x.dims()[2] != self.channels() {
            return Err(shape_err!(
                "{} site with {} channels given queries {:?}",
                self.kind,
                self.channels(),
                x.dims()
            ));
        }
        if source.rank() != 3 || source.dims()[0] != x.dims()[0] || source.dims()[2] != self.source_dim() {
            return Err(shape_err!(
                "{} site: source {:?} incompatible with queries {:?} (source dim {})",
                self.kind,
                source.dims(),
                x.dims(),
                self.source_dim()
            ));
        }
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(source)?)?;
        let v = self.split_heads(&self.v.forward(source)?)?;
        let scale = T::lit(1.0 / (self.head_dim() as f64).sqrt());
        let scores = matmul(&q, &transpose_last2(&k)?)?.scale(scale);
        let probs = softmax_lastdim(&scores)?;
        let heads = matmul(&probs, &v)?;
        let out = self.o.forward(&self.merge_heads(&heads)?)?;
        Ok((probs, out))
    }

    /// Softmax attention weights `[B, H, L, L_k]`.
    pub fn attention_probs(&self, x: &Tensor<T>, source: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.attend(x, source)?.0)
    }

    pub(crate) fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        self.q.visit(&format!("{prefix}.q"), v);
        self.k.visit(&format!("{prefix}.k"), v);
        self.v.visit(&format!("{prefix}.v"), v);
        self.o.visit(&format!("{prefix}.o"), v);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.q.visit_mut(&format!("{prefix}.q"), v)?;
        self.k.visit_mut(&format!("{prefix}.k"), v)?;
        self.v.visit_mut(&format!("{prefix}.v"), v)?;
        self.o.visit_mut(&format!("{prefix}.o"), v)
    }
}

/// Multi-head self-attention, `[B, L, c] -> [B, L, c]`.
pub fn self_attention<T: Scalar>(site: &AttentionSite<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if site.kind.is_cross() {
        return Err(Error::Config(format!("{} site used as self-attention", site.kind)));
    }
    Ok(site.attend(x, x)?.1)
}

/// Cross-attention of queries `[B, L, c]` against a pooled embedding `[B, 1, D]`.
///
/// With a single key per query the softmax is identically one, so every
/// output row equals `o(v(e))` regardless of `x`.
pub fn cross_attention<T: Scalar>(site: &AttentionSite<T>, x: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    check_cross(site, e)?;
    Ok(site.attend(x, e)?.1)
}

/// Score tensor of a cross-attention site after softmax, `[B, H, L, 1]`.
pub fn cross_attention_probs<T: Scalar>(site: &AttentionSite<T>, x: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    check_cross(site, e)?;
    site.attention_probs(x, e)
}

fn check_cross<T: Scalar>(site: &AttentionSite<T>, e: &Tensor<T>) -> Result<()> {
    if !site.kind.is_cross() {
        return Err(Error::Config(format!("{} site used as cross-attention", site.kind)));
    }
    if e.rank() != 3 || e.dims()[1] != 1 {
        return Err(shape_err!(
            "cross-attention needs a pooled [B, 1, D] embedding, got {:?}",
            e.dims()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(kind: AttentionKind, c: usize, h: usize, d: usize, seed: u64) -> AttentionSite<f64> {
        AttentionSite::init(kind, c, h, d, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn singleton_sequence_self_attention() {
        let s = site(AttentionKind::Ssa, 4, 2, 4, 1);
        let x = Rng::new(2).uniform::<f64>(-1.0, 1.0, vec![3, 1, 4]).unwrap();
        let got = self_attention(&s, &x).unwrap();
        let want = s.o.forward(&s.v.forward(&x).unwrap()).unwrap();
        assert!(got.bitwise_eq(&want));
    }

    /// Fully unrolled H=1, L=2, c=2 attention.
    #[test]
    fn two_token_scalar_oracle() {
        let s = site(AttentionKind::Tsa, 2, 1, 2, 3);
        let x = Rng::new(4).uniform::<f64>(-1.0, 1.0, vec![1, 2, 2]).unwrap();
        let xv = x.data();
        let proj = |l: &Linear<f64>, r: &[f64]| -> [f64; 2] {
            let w = l.weight.data();
            let b = l.bias.data();
            [r[0] * w[0] + r[1] * w[2] + b[0], r[0] * w[1] + r[1] * w[3] + b[1]]
        };
        let rows = [&xv[0..2], &xv[2..4]];
        let q: Vec<[f64; 2]> = rows.iter().map(|r| proj(&s.q, r)).collect();
        let k: Vec<[f64; 2]> = rows.iter().map(|r| proj(&s.k, r)).collect();
        let v: Vec<[f64; 2]> = rows.iter().map(|r| proj(&s.v, r)).collect();
        let scale = 1.0 / 2f64.sqrt();
        for i in 0..2 {
            let sc: Vec<f64> = (0..2).map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) * scale).collect();
            let m = sc[0].max(sc[1]);
            let ex: Vec<f64> = sc.iter().map(|s| (s - m).exp()).collect();
            let z = ex[0] + ex[1];
            let a = [ex[0] / z, ex[1] / z];
            let mix = [a[0] * v[0][0] + a[1] * v[1][0], a[0] * v[0][1] + a[1] * v[1][1]];
            let out = proj(&s.o, &mix);
            let got = self_attention(&s, &x).unwrap();
            for c in 0..2 {
                assert!((got.data()[i * 2 + c] - out[c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn batch_equivariance() {
        let s = site(AttentionKind::Ssa, 8, 2, 8, 5);
        let x = Rng::new(6).uniform::<f64>(-1.0, 1.0, vec![3, 5, 8]).unwrap();
        let y = self_attention(&s, &x).unwrap();
        let slab = 5 * 8;
        let perm = [2usize, 0, 1];
        let mut px = Vec::new();
        for &p in &perm {
            px.extend_from_slice(&x.data()[p * slab..(p + 1) * slab]);
        }
        let py = self_attention(&s, &Tensor::new(vec![3, 5, 8], px).unwrap()).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(&py.data()[i * slab..(i + 1) * slab], &y.data()[p * slab..(p + 1) * slab]);
        }
    }

    #[test]
    fn heads_must_divide_channels() {
        assert!(matches!(
            AttentionSite::<f32>::init(AttentionKind::Ssa, 6, 4, 6, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cross_scores_are_exactly_one() {
        let s = site(AttentionKind::Sca, 8, 2, 16, 7);
        let x = Rng::new(8).uniform::<f64>(-50.0, 50.0, vec![2, 6, 8]).unwrap();
        let e = Rng::new(9).uniform::<f64>(-1.0, 1.0, vec![2, 1, 16]).unwrap();
        let p = cross_attention_probs(&s, &x, &e).unwrap();
        assert_eq!(p.dims(), &[2, 2, 6, 1]);
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cross_output_constant_over_queries() {
        let s = site(AttentionKind::Tca, 8, 4, 12, 10);
        let x = Rng::new(11).uniform::<f64>(-1.0, 1.0, vec![2, 5, 8]).unwrap();
        let e = Rng::new(12).uniform::<f64>(-1.0, 1.0, vec![2, 1, 12]).unwrap();
        let y = cross_attention(&s, &x, &e).unwrap();
        for b in 0..2 {
            let first = &y.data()[b * 40..b * 40 + 8];
            for l in 1..5 {
                assert_eq!(&y.data()[b * 40 + l * 8..b * 40 + (l + 1) * 8], first);
            }
        }
    }

    #[test]
    fn cross_rejects_token_sequences_and_wrong_kind() {
        let s = site(AttentionKind::Sca, 4, 1, 6, 13);
        let x = Tensor::<f64>::zeros(vec![1, 3, 4]).unwrap();
        let e = Tensor::<f64>::zeros(vec![1, 2, 6]).unwrap();
        assert!(matches!(cross_attention(&s, &x, &e), Err(Error::Shape(_))));
        let ssa = site(AttentionKind::Ssa, 4, 1, 4, 14);
        assert!(self_attention(&s, &x).is_err());
        assert!(cross_attention(&ssa, &x, &Tensor::zeros(vec![1, 1, 4]).unwrap()).is_err());
    }
}
