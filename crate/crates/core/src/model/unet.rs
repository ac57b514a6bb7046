use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::attention::{cross_attention, self_attention, AttentionKind, AttentionSite};
use crate::model::latent::{ImageEmbedding, LatentVideo};
use crate::model::layers::{
    add_channel_bias, upsample_nearest2, Conv2d, FeedForward, Linear, Norm, TemporalConv,
};
use crate::model::params::{ParamVisitor, ParamVisitorMut};
use crate::model::spec::ModelSpec;
use crate::numerics::{silu, vten, Rng, Tensor};
use crate::scalar::{DType, Scalar};
use crate::surgery::{average, fold_cross, CacheSlot, FoldedAffine, FoldedConditioner};

/// Spatial ResNet block: norm, SiLU, 3x3 conv, timestep bias, norm, SiLU, 3x3 conv, residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub norm1: Norm<T>,
    pub conv1: Conv2d<T>,
    pub temb: Linear<T>,
    pub norm2: Norm<T>,
    pub conv2: Conv2d<T>,
    pub shortcut: Option<Conv2d<T>>,
}

impl<T: Scalar> ResBlock<T> {
    fn init(c_in: usize, c_out: usize, temb_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            norm1: Norm::init(c_in, rng)?,
            conv1: Conv2d::init(c_in, c_out, 3, 1, rng)?,
            temb: Linear::init(temb_dim, c_out, rng)?,
            norm2: Norm::init(c_out, rng)?,
            conv2: Conv2d::init(c_out, c_out, 3, 1, rng)?,
            shortcut: if c_in != c_out {
                Some(Conv2d::init(c_in, c_out, 1, 1, rng)?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor<T>, temb: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(&silu(&self.norm1.forward_channels(x)?))?;
        let h = add_channel_bias(&h, &self.temb.forward(&silu(temb))?)?;
        let h = self.conv2.forward(&silu(&self.norm2.forward_channels(&h)?))?;
        match &self.shortcut {
            Some(s) => h.add(&s.forward(x)?),
            None => h.add(x),
        }
    }

    fn visit(&self, p: &str, v: &mut dyn ParamVisitor<T>) {
        self.norm1.visit(&format!("{p}.norm1"), v);
        self.conv1.visit(&format!("{p}.conv1"), v);
        self.temb.visit(&format!("{p}.temb"), v);
        self.norm2.visit(&format!("{p}.norm2"), v);
        self.conv2.visit(&format!("{p}.conv2"), v);
        if let Some(s) = &self.shortcut {
            s.visit(&format!("{p}.shortcut"), v);
        }
    }

    fn visit_mut(&mut self, p: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.norm1.visit_mut(&format!("{p}.norm1"), v)?;
        self.conv1.visit_mut(&format!("{p}.conv1"), v)?;
        self.temb.visit_mut(&format!("{p}.temb"), v)?;
        self.norm2.visit_mut(&format!("{p}.norm2"), v)?;
        self.conv2.visit_mut(&format!("{p}.conv2"), v)?;
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&format!("{p}.shortcut"), v)?;
        }
        Ok(())
    }
}

/// Temporal ResNet block built from depthwise frame-axis convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalResBlock<T> {
    pub norm1: Norm<T>,
    pub conv1: TemporalConv<T>,
    pub temb: Linear<T>,
    pub norm2: Norm<T>,
    pub conv2: TemporalConv<T>,
}

impl<T: Scalar> TemporalResBlock<T> {
    fn init(c: usize, temb_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            norm1: Norm::init(c, rng)?,
            conv1: TemporalConv::init(c, rng)?,
            temb: Linear::init(temb_dim, c, rng)?,
            norm2: Norm::init(c, rng)?,
            conv2: TemporalConv::init(c, rng)?,
        })
    }

    fn forward(&self, x: &Tensor<T>, temb: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(&silu(&self.norm1.forward_channels(x)?))?;
        let h = add_channel_bias(&h, &self.temb.forward(&silu(temb))?)?;
        let h = self.conv2.forward(&silu(&self.norm2.forward_channels(&h)?))?;
        h.add(x)
    }

    fn visit(&self, p: &str, v: &mut dyn ParamVisitor<T>) {
        self.norm1.visit(&format!("{p}.norm1"), v);
        self.conv1.visit(&format!("{p}.conv1"), v);
        self.temb.visit(&format!("{p}.temb"), v);
        self.norm2.visit(&format!("{p}.norm2"), v);
        self.conv2.visit(&format!("{p}.conv2"), v);
    }

    fn visit_mut(&mut self, p: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.norm1.visit_mut(&format!("{p}.norm1"), v)?;
        self.conv1.visit_mut(&format!("{p}.conv1"), v)?;
        self.temb.visit_mut(&format!("{p}.temb"), v)?;
        self.norm2.visit_mut(&format!("{p}.norm2"), v)?;
        self.conv2.visit_mut(&format!("{p}.conv2"), v)
    }
}

/// The cross-attention position of a transformer block.
#[derive(Clone, Debug, PartialEq)]
pub enum CrossSlot<T> {
    /// Original site with its query-path norm.
    Attention { norm: Norm<T>, site: AttentionSite<T> },
    /// Spatial site after folding.
    Folded(FoldedAffine<T>),
    /// Temporal site after deletion.
    Removed,
}

/// Which axis a transformer block attends over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Spatial,
    Temporal,
}

/// Pre-norm transformer block: self-attention, cross-attention, feed-forward, each residual.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock<T> {
    pub regime: Regime,
    pub norm_self: Norm<T>,
    pub self_attn: AttentionSite<T>,
    pub cross: CrossSlot<T>,
    pub norm_ff: Norm<T>,
    pub ff: FeedForward<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    fn init(regime: Regime, c: usize, heads: usize, embed_dim: usize, rng: &mut Rng) -> Result<Self> {
        let (self_kind, cross_kind) = match regime {
            Regime::Spatial => (AttentionKind::Ssa, AttentionKind::Sca),
            Regime::Temporal => (AttentionKind::Tsa, AttentionKind::Tca),
        };
        Ok(Self {
            regime,
            norm_self: Norm::init(c, rng)?,
            self_attn: AttentionSite::init(self_kind, c, heads, c, rng)?,
            cross: CrossSlot::Attention {
                norm: Norm::init(c, rng)?,
                site: AttentionSite::init(cross_kind, c, heads, embed_dim, rng)?,
            },
            norm_ff: Norm::init(c, rng)?,
            ff: FeedForward::init(c, rng)?,
        })
    }

    pub fn cross_kind(&self) -> AttentionKind {
        match self.regime {
            Regime::Spatial => AttentionKind::Sca,
            Regime::Temporal => AttentionKind::Tca,
        }
    }

    fn visit(&self, p: &str, v: &mut dyn ParamVisitor<T>) {
        self.norm_self.visit(&format!("{p}.norm_self"), v);
        self.self_attn.visit(&format!("{p}.self"), v);
        match &self.cross {
            CrossSlot::Attention { norm, site } => {
                norm.visit(&format!("{p}.norm_cross"), v);
                site.visit(&format!("{p}.cross"), v);
            }
            CrossSlot::Folded(f) => {
                v.visit(&format!("{p}.cross.folded.weight"), &f.weight);
                v.visit(&format!("{p}.cross.folded.bias"), &f.bias);
            }
            CrossSlot::Removed => {}
        }
        self.norm_ff.visit(&format!("{p}.norm_ff"), v);
        self.ff.visit(&format!("{p}.ff"), v);
    }

    fn visit_mut(&mut self, p: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.norm_self.visit_mut(&format!("{p}.norm_self"), v)?;
        self.self_attn.visit_mut(&format!("{p}.self"), v)?;
        match &mut self.cross {
            CrossSlot::Attention { norm, site } => {
                norm.visit_mut(&format!("{p}.norm_cross"), v)?;
                site.visit_mut(&format!("{p}.cross"), v)?;
            }
            CrossSlot::Folded(f) => {
                v.visit(&format!("{p}.cross.folded.weight"), &mut f.weight)?;
                v.visit(&format!("{p}.cross.folded.bias"), &mut f.bias)?;
            }
            CrossSlot::Removed => {}
        }
        self.norm_ff.visit_mut(&format!("{p}.norm_ff"), v)?;
        self.ff.visit_mut(&format!("{p}.ff"), v)
    }
}

/// One spatio-temporal layer: spatial ResNet, spatial transformer, temporal
/// ResNet, temporal transformer. Transformers are absent on unattended levels.
#[derive(Clone, Debug, PartialEq)]
pub struct StLayer<T> {
    pub spatial_res: ResBlock<T>,
    pub spatial_attn: Option<TransformerBlock<T>>,
    pub temporal_res: TemporalResBlock<T>,
    pub temporal_attn: Option<TransformerBlock<T>>,
}

impl<T: Scalar> StLayer<T> {
    fn init(c_in: usize, c_out: usize, attention: bool, spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        let temb = spec.time_embed_dim();
        let spatial_res = ResBlock::init(c_in, c_out, temb, rng)?;
        let spatial_attn = if attention {
            Some(TransformerBlock::init(Regime::Spatial, c_out, spec.heads, spec.embed_dim, rng)?)
        } else {
            None
        };
        let temporal_res = TemporalResBlock::init(c_out, temb, rng)?;
        let temporal_attn = if attention {
            Some(TransformerBlock::init(Regime::Temporal, c_out, spec.heads, spec.embed_dim, rng)?)
        } else {
            None
        };
        Ok(Self {
            spatial_res,
            spatial_attn,
            temporal_res,
            temporal_attn,
        })
    }

    fn visit(&self, p: &str, v: &mut dyn ParamVisitor<T>) {
        self.spatial_res.visit(&format!("{p}.spatial_res"), v);
        if let Some(b) = &self.spatial_attn {
            b.visit(&format!("{p}.spatial"), v);
        }
        self.temporal_res.visit(&format!("{p}.temporal_res"), v);
        if let Some(b) = &self.temporal_attn {
            b.visit(&format!("{p}.temporal"), v);
        }
    }

    fn visit_mut(&mut self, p: &str, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.spatial_res.visit_mut(&format!("{p}.spatial_res"), v)?;
        if let Some(b) = &mut self.spatial_attn {
            b.visit_mut(&format!("{p}.spatial"), v)?;
        }
        self.temporal_res.visit_mut(&format!("{p}.temporal_res"), v)?;
        if let Some(b) = &mut self.temporal_attn {
            b.visit_mut(&format!("{p}.temporal"), v)?;
        }
        Ok(())
    }
}

/// All parameters of the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub conv_in: Conv2d<T>,
    pub time_in: Linear<T>,
    pub time_out: Linear<T>,
    /// `down[level][layer]`.
    pub down: Vec<Vec<StLayer<T>>>,
    /// Stride-2 convolutions after every level but the last.
    pub downsample: Vec<Conv2d<T>>,
    pub mid: StLayer<T>,
    /// `up[level][layer]`, indexed by encoder level (run deepest first).
    pub up: Vec<Vec<StLayer<T>>>,
    /// `upsample[level - 1]` runs after decoder level `level`.
    pub upsample: Vec<Conv2d<T>>,
    pub norm_out: Norm<T>,
    pub conv_out: Conv2d<T>,
}

fn layer_name(section: &str, level: usize, layer: usize) -> String {
    format!("{section}.{level}.{layer}")
}

impl<T: Scalar> ModelWeights<T> {
    fn init(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let c0 = spec.base_channels();
        let temb = spec.time_embed_dim();
        let n = spec.levels.len();
        let conv_in = Conv2d::init(spec.latent_channels, c0, 3, 1, rng)?;
        let time_in = Linear::init(c0, temb, rng)?;
        let time_out = Linear::init(temb, temb, rng)?;

        let mut skips = vec![c0];
        let mut cur = c0;
        let mut down = Vec::with_capacity(n);
        let mut downsample = Vec::new();
        for (i, level) in spec.levels.iter().enumerate() {
            let mut layers = Vec::with_capacity(spec.layers_per_level);
            for _ in 0..spec.layers_per_level {
                layers.push(StLayer::init(cur, level.channels, level.attention, spec, rng)?);
                cur = level.channels;
                skips.push(cur);
            }
            down.push(layers);
            if i + 1 < n {
                downsample.push(Conv2d::init(cur, cur, 3, 2, rng)?);
                skips.push(cur);
            }
        }
        let mid = StLayer::init(cur, cur, spec.mid_attention, spec, rng)?;

        let mut up: Vec<Vec<StLayer<T>>> = (0..n).map(|_| Vec::new()).collect();
        let mut upsample: Vec<Option<Conv2d<T>>> = (0..n.saturating_sub(1)).map(|_| None).collect();
        for i in (0..n).rev() {
            let level = &spec.levels[i];
            for _ in 0..=spec.layers_per_level {
                let skip = skips.pop().ok_or_else(|| Error::Config("skip stack underflow".into()))?;
                up[i].push(StLayer::init(cur + skip, level.channels, level.attention, spec, rng)?);
                cur = level.channels;
            }
            if i > 0 {
                upsample[i - 1] = Some(Conv2d::init(cur, cur, 3, 1, rng)?);
            }
        }
        let norm_out = Norm::init(cur, rng)?;
        let conv_out = Conv2d::init(cur, spec.latent_channels, 3, 1, rng)?;
        Ok(Self {
            conv_in,
            time_in,
            time_out,
            down,
            downsample,
            mid,
            up,
            upsample: upsample.into_iter().map(|u| u.expect("every level above 0 upsamples")).collect(),
            norm_out,
            conv_out,
        })
    }

    /// Every parameter tensor with its stable dotted name, in a fixed order.
    pub fn visit(&self, v: &mut dyn ParamVisitor<T>) {
        self.conv_in.visit("conv_in", v);
        self.time_in.visit("time_in", v);
        self.time_out.visit("time_out", v);
        for (i, layers) in self.down.iter().enumerate() {
            for (j, l) in layers.iter().enumerate() {
                l.visit(&layer_name("down", i, j), v);
            }
        }
        for (i, d) in self.downsample.iter().enumerate() {
            d.visit(&format!("downsample.{i}"), v);
        }
        self.mid.visit("mid", v);
        for (i, layers) in self.up.iter().enumerate().rev() {
            for (j, l) in layers.iter().enumerate() {
                l.visit(&layer_name("up", i, j), v);
            }
        }
        for (i, u) in self.upsample.iter().enumerate() {
            u.visit(&format!("upsample.{}", i + 1), v);
        }
        self.norm_out.visit("norm_out", v);
        self.conv_out.visit("conv_out", v);
    }

    pub fn visit_mut(&mut self, v: &mut dyn ParamVisitorMut<T>) -> Result<()> {
        self.conv_in.visit_mut("conv_in", v)?;
        self.time_in.visit_mut("time_in", v)?;
        self.time_out.visit_mut("time_out", v)?;
        for (i, layers) in self.down.iter_mut().enumerate() {
            for (j, l) in layers.iter_mut().enumerate() {
                l.visit_mut(&layer_name("down", i, j), v)?;
            }
        }
        for (i, d) in self.downsample.iter_mut().enumerate() {
            d.visit_mut(&format!("downsample.{i}"), v)?;
        }
        self.mid.visit_mut("mid", v)?;
        for (i, layers) in self.up.iter_mut().enumerate().rev() {
            for (j, l) in layers.iter_mut().enumerate() {
                l.visit_mut(&layer_name("up", i, j), v)?;
            }
        }
        for (i, u) in self.upsample.iter_mut().enumerate() {
            u.visit_mut(&format!("upsample.{}", i + 1), v)?;
        }
        self.norm_out.visit_mut("norm_out", v)?;
        self.conv_out.visit_mut("conv_out", v)
    }

    /// Layers in forward order with their names.
    pub fn layers(&self) -> Vec<(String, &StLayer<T>)> {
        let mut out = Vec::new();
        for (i, layers) in self.down.iter().enumerate() {
            for (j, l) in layers.iter().enumerate() {
                out.push((layer_name("down", i, j), l));
            }
        }
        out.push(("mid".to_string(), &self.mid));
        for (i, layers) in self.up.iter().enumerate().rev() {
            for (j, l) in layers.iter().enumerate() {
                out.push((layer_name("up", i, j), l));
            }
        }
        out
    }

    /// Transformer blocks in forward order, named `<layer>.spatial` / `<layer>.temporal`.
    pub fn transformer_blocks(&self) -> Vec<(String, &TransformerBlock<T>)> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            if let Some(b) = &l.spatial_attn {
                out.push((format!("{name}.spatial"), b));
            }
            if let Some(b) = &l.temporal_attn {
                out.push((format!("{name}.temporal"), b));
            }
        }
        out
    }

    pub(crate) fn transformer_blocks_mut(&mut self) -> Vec<(String, &mut TransformerBlock<T>)> {
        let mut layers: Vec<(String, &mut StLayer<T>)> = Vec::new();
        for (i, ls) in self.down.iter_mut().enumerate() {
            for (j, l) in ls.iter_mut().enumerate() {
                layers.push((layer_name("down", i, j), l));
            }
        }
        layers.push(("mid".to_string(), &mut self.mid));
        for (i, ls) in self.up.iter_mut().enumerate().rev() {
            for (j, l) in ls.iter_mut().enumerate() {
                layers.push((layer_name("up", i, j), l));
            }
        }
        let mut out = Vec::new();
        for (name, l) in layers {
            if let Some(b) = l.spatial_attn.as_mut() {
                out.push((format!("{name}.spatial"), b));
            }
            if let Some(b) = l.temporal_attn.as_mut() {
                out.push((format!("{name}.temporal"), b));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_: &str, t: &Tensor<T>| n += t.len());
        n
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name: &str, t: &Tensor<T>| out.push((name.to_string(), t.clone())));
        out
    }
}

/// A spec together with matching weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub weights: ModelWeights<T>,
}

/// Weight directory manifest (`manifest.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub dtype: DType,
    pub params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    /// Seeded, untrained weights for `spec`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.vcut {
            return Err(Error::Config("initialize the original model, then apply surgery".into()));
        }
        let weights = ModelWeights::init(&spec, &mut Rng::new(seed))?;
        Ok(Self { spec, weights })
    }

    /// Zero-filled weights shaped for `spec`, including surgered specs.
    pub fn skeleton(spec: ModelSpec) -> Result<Self> {
        let mut weights = ModelWeights::init(&spec, &mut Rng::new(0))?;
        weights.visit_mut(&mut |_: &str, t: &mut Tensor<T>| {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            Ok(())
        })?;
        if spec.vcut {
            for (id, block) in weights.transformer_blocks_mut() {
                block.cross = match (&block.cross, block.regime) {
                    (CrossSlot::Attention { site, .. }, Regime::Spatial) => CrossSlot::Folded(FoldedAffine {
                        site: format!("{id}.cross"),
                        weight: Tensor::zeros(vec![site.source_dim(), site.channels()])?,
                        bias: Tensor::zeros(vec![site.channels()])?,
                    }),
                    _ => CrossSlot::Removed,
                };
            }
        }
        Ok(Self { spec, weights })
    }

    pub fn num_params(&self) -> usize {
        self.weights.num_params()
    }

    /// Folded maps of every spatial cross-attention site, in forward order.
    /// Original sites are folded on the fly; surgered ones are returned as stored.
    pub fn folded_sites(&self) -> Result<Vec<FoldedAffine<T>>> {
        self.weights
            .transformer_blocks()
            .into_iter()
            .filter(|(_, b)| b.regime == Regime::Spatial)
            .map(|(id, b)| match &b.cross {
                CrossSlot::Attention { site, .. } => fold_cross(site, &format!("{id}.cross")),
                CrossSlot::Folded(f) => Ok(f.clone()),
                CrossSlot::Removed => Err(Error::State(format!("{id}: spatial cross-attention missing"))),
            })
            .collect()
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        let mut failure = None;
        self.weights.visit(&mut |name: &str, t: &Tensor<T>| {
            if failure.is_some() {
                return;
            }
            let file = format!("{name}.vten");
            if let Err(e) = vten::write(dir.join(&file), t) {
                failure = Some(e);
                return;
            }
            entries.push(ManifestEntry {
                name: name.to_string(),
                file,
                dims: t.dims().to_vec(),
            });
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let manifest = WeightManifest {
            dtype: T::DTYPE,
            params: entries,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Loads weights written by [`save_dir`](Self::save_dir) for `spec`.
    pub fn load_dir(spec: ModelSpec, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: WeightManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "weights are {} but {} was requested",
                manifest.dtype,
                T::DTYPE
            )));
        }
        let mut files: BTreeMap<String, String> =
            manifest.params.into_iter().map(|e| (e.name, e.file)).collect();
        let mut model = Self::skeleton(spec)?;
        model.weights.visit_mut(&mut |name: &str, t: &mut Tensor<T>| {
            let file = files
                .remove(name)
                .ok_or_else(|| Error::Format(format!("manifest lacks parameter {name}")))?;
            let loaded = vten::read::<T>(dir.join(file))?;
            if loaded.dims() != t.dims() {
                return Err(shape_err!(
                    "parameter {name}: file has {:?}, spec expects {:?}",
                    loaded.dims(),
                    t.dims()
                ));
            }
            *t = loaded;
            Ok(())
        })?;
        if let Some(extra) = files.keys().next() {
            return Err(Error::Format(format!("manifest has unknown parameter {extra}")));
        }
        // Folded maps carry their site id, which the skeleton already set.
        Ok(model)
    }
}

/// How a spatial cross-attention site is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaPolicy {
    /// Full attention against the embedding.
    Attend,
    /// Folded affine map of the embedding, evaluated in this pass.
    Fold,
    /// Cached output read from the conditioner.
    Cached,
}

/// How a temporal cross-attention site is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcaPolicy {
    Attend,
    /// Folded constant added back in place of attention.
    Fold,
    /// Site skipped.
    Drop,
}

/// Forward variants of the denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    /// Full SCA and TCA attention.
    Baseline,
    /// SCA folded and evaluated every pass, TCA removed.
    Modified,
    /// SCA read from the cached conditioner, TCA removed.
    VcutCached,
}

impl ForwardMode {
    pub fn policies(self) -> (ScaPolicy, TcaPolicy) {
        match self {
            Self::Baseline => (ScaPolicy::Attend, TcaPolicy::Attend),
            Self::Modified => (ScaPolicy::Fold, TcaPolicy::Drop),
            Self::VcutCached => (ScaPolicy::Cached, TcaPolicy::Drop),
        }
    }
}

/// Conditioning signal of one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a, T> {
    Embedding(&'a ImageEmbedding<T>),
    /// Each cross-attention output is the average of its outputs for the two embeddings.
    Averaged {
        cond: &'a ImageEmbedding<T>,
        null: &'a ImageEmbedding<T>,
    },
    Cached {
        cache: &'a FoldedConditioner<T>,
        slot: CacheSlot,
    },
}

/// Sinusoidal embedding of a scalar timestep, `[cos(t w_i) ..., sin(t w_i) ...]`.
pub fn timestep_embedding<T: Scalar>(t: f64, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut v = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        v[i] = T::lit((t * freq).cos());
        v[half + i] = T::lit((t * freq).sin());
    }
    Tensor::new(vec![1, dim], v).expect("dim >= 1")
}

/// Adds `rows[s / rep]` to every position of sequence `s` in `[B, L, c]`.
fn add_sequence_rows<T: Scalar>(h: &Tensor<T>, rows: &Tensor<T>, rep: usize) -> Result<Tensor<T>> {
    let (bseq, l, c) = (h.dims()[0], h.dims()[1], h.dims()[2]);
    if rows.dims() != [bseq / rep, c] || bseq % rep != 0 {
        return Err(shape_err!(
            "cannot broadcast {:?} over sequences {:?} (repeat {rep})",
            rows.dims(),
            h.dims()
        ));
    }
    let mut out = h.clone();
    let rv = rows.data();
    for (s, seq) in out.data_mut().chunks_exact_mut(l * c).enumerate() {
        let row = &rv[(s / rep) * c..(s / rep + 1) * c];
        for tok in seq.chunks_exact_mut(c) {
            for (x, &r) in tok.iter_mut().zip(row) {
                *x += r;
            }
        }
    }
    Ok(out)
}

struct Pass<'a, T> {
    spec: &'a ModelSpec,
    cond: Conditioning<'a, T>,
    sca: ScaPolicy,
    tca: TcaPolicy,
    next_cached: usize,
}

impl<'a, T: Scalar> Pass<'a, T> {
    fn embeddings(&self) -> Result<Vec<&'a ImageEmbedding<T>>> {
        match self.cond {
            Conditioning::Embedding(e) => Ok(vec![e]),
            Conditioning::Averaged { cond, null } => Ok(vec![cond, null]),
            Conditioning::Cached { .. } => Err(Error::State(
                "cached conditioning only serves folded spatial sites".into(),
            )),
        }
    }

    fn check_embedding(&self, e: &ImageEmbedding<T>, batch: usize) -> Result<()> {
        if e.batch() != batch || e.dim() != self.spec.embed_dim {
            return Err(shape_err!(
                "embedding {:?} does not match batch {batch} and D={}",
                e.tensor().dims(),
                self.spec.embed_dim
            ));
        }
        Ok(())
    }

    /// Per-batch constant `[b, c]` from a folded map under the current conditioning.
    fn folded_rows(&self, f: &FoldedAffine<T>, batch: usize) -> Result<Tensor<T>> {
        let es = self.embeddings()?;
        for e in &es {
            self.check_embedding(e, batch)?;
        }
        match es.as_slice() {
            [e] => f.apply(e.tensor()),
            [c, n] => average(&f.apply(c.tensor())?, &f.apply(n.tensor())?),
            _ => unreachable!(),
        }
    }

    fn attend(&self, site: &AttentionSite<T>, hn: &Tensor<T>, batch: usize, rep: usize) -> Result<Tensor<T>> {
        let es = self.embeddings()?;
        let mut outs = Vec::with_capacity(es.len());
        for e in es {
            self.check_embedding(e, batch)?;
            outs.push(cross_attention(site, hn, &e.broadcast(rep)?)?);
        }
        match outs.as_slice() {
            [o] => Ok(o.clone()),
            [c, n] => average(c, n),
            _ => unreachable!(),
        }
    }

    fn cross(&mut self, id: &str, block: &TransformerBlock<T>, h: Tensor<T>, batch: usize, rep: usize) -> Result<Tensor<T>> {
        match block.regime {
            Regime::Spatial => match (self.sca, &block.cross) {
                (ScaPolicy::Attend, CrossSlot::Attention { norm, site }) => {
                    let out = self.attend(site, &norm.forward(&h)?, batch, rep)?;
                    h.add(&out)
                }
                (ScaPolicy::Fold, CrossSlot::Attention { site, .. }) => {
                    let f = fold_cross(site, &format!("{id}.cross"))?;
                    add_sequence_rows(&h, &self.folded_rows(&f, batch)?, rep)
                }
                (ScaPolicy::Fold, CrossSlot::Folded(f)) => add_sequence_rows(&h, &self.folded_rows(f, batch)?, rep),
                (ScaPolicy::Cached, CrossSlot::Attention { .. } | CrossSlot::Folded(_)) => {
                    let Conditioning::Cached { cache, slot } = self.cond else {
                        return Err(Error::State("cached mode requires a folded conditioner".into()));
                    };
                    let m = self.next_cached;
                    let entry = cache.sites.get(m).ok_or_else(|| {
                        Error::State(format!("conditioner has {} sites, model needs more", cache.sites.len()))
                    })?;
                    let want = format!("{id}.cross");
                    if entry.site != want {
                        return Err(Error::State(format!(
                            "conditioner site {m} is {} but the model is at {want}",
                            entry.site
                        )));
                    }
                    self.next_cached += 1;
                    add_sequence_rows(&h, entry.get(slot), rep)
                }
                (ScaPolicy::Attend, CrossSlot::Folded(_)) => Err(Error::State(format!(
                    "{id}: baseline attention requested on a folded site"
                ))),
                (_, CrossSlot::Removed) => Err(Error::State(format!("{id}: spatial cross-attention missing"))),
            },
            Regime::Temporal => match (self.tca, &block.cross) {
                (TcaPolicy::Drop, _) => Ok(h),
                (TcaPolicy::Attend, CrossSlot::Attention { norm, site }) => {
                    let out = self.attend(site, &norm.forward(&h)?, batch, rep)?;
                    h.add(&out)
                }
                (TcaPolicy::Fold, CrossSlot::Attention { site, .. }) => {
                    let f = fold_cross(site, &format!("{id}.cross"))?;
                    add_sequence_rows(&h, &self.folded_rows(&f, batch)?, rep)
                }
                (_, _) => Err(Error::State(format!(
                    "{id}: temporal cross-attention was removed by surgery"
                ))),
            },
        }
    }

    fn transformer(&mut self, id: &str, block: &TransformerBlock<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = LatentVideo::new(x.clone())?;
        let dims = z.dims();
        let (seq, rep) = match block.regime {
            Regime::Spatial => (z.reshape_spatial()?, dims.frames),
            Regime::Temporal => (z.reshape_temporal()?, dims.positions()),
        };
        let h = seq.add(&self_attention(&block.self_attn, &block.norm_self.forward(&seq)?)?)?;
        let h = self.cross(id, block, h, dims.batch, rep)?;
        let h = h.add(&block.ff.forward(&block.norm_ff.forward(&h)?)?)?;
        let out = match block.regime {
            Regime::Spatial => LatentVideo::from_spatial(h, dims)?,
            Regime::Temporal => LatentVideo::from_temporal(h, dims)?,
        };
        Ok(out.into_tensor())
    }

    fn layer(&mut self, id: &str, layer: &StLayer<T>, x: &Tensor<T>, temb: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = layer.spatial_res.forward(x, temb)?;
        if let Some(b) = &layer.spatial_attn {
            h = self.transformer(&format!("{id}.spatial"), b, &h)?;
        }
        h = layer.temporal_res.forward(&h, temb)?;
        if let Some(b) = &layer.temporal_attn {
            h = self.transformer(&format!("{id}.temporal"), b, &h)?;
        }
        Ok(h)
    }
}

/// Lower-level forward with explicit per-kind policies.
pub fn forward_with<T: Scalar>(
    model: &Model<T>,
    z: &LatentVideo<T>,
    timestep: f64,
    cond: Conditioning<'_, T>,
    sca: ScaPolicy,
    tca: TcaPolicy,
) -> Result<LatentVideo<T>> {
    let spec = &model.spec;
    let w = &model.weights;
    let d = z.dims();
    if d.channels != spec.latent_channels || d.height != spec.height || d.width != spec.width {
        return Err(shape_err!(
            "latent {:?} does not match spec ({} channels, {}x{})",
            z.tensor().dims(),
            spec.latent_channels,
            spec.height,
            spec.width
        ));
    }
    if matches!(cond, Conditioning::Cached { .. }) != (sca == ScaPolicy::Cached) {
        return Err(Error::State(
            "cached conditioning and the cached SCA policy must be used together".into(),
        ));
    }
    let mut pass = Pass {
        spec,
        cond,
        sca,
        tca,
        next_cached: 0,
    };

    let t_emb = timestep_embedding::<T>(timestep, spec.base_channels());
    let temb = w.time_out.forward(&silu(&w.time_in.forward(&t_emb)?))?;
    let temb = temb.repeat_interleave0(d.batch)?;

    let mut x = w.conv_in.forward(z.tensor())?;
    let mut skips = vec![x.clone()];
    for (i, layers) in w.down.iter().enumerate() {
        for (j, l) in layers.iter().enumerate() {
            x = pass.layer(&layer_name("down", i, j), l, &x, &temb)?;
            skips.push(x.clone());
        }
        if let Some(ds) = w.downsample.get(i) {
            x = ds.forward(&x)?;
            skips.push(x.clone());
        }
    }
    x = pass.layer("mid", &w.mid, &x, &temb)?;
    for (i, layers) in w.up.iter().enumerate().rev() {
        for (j, l) in layers.iter().enumerate() {
            let skip = skips
                .pop()
                .ok_or_else(|| Error::State("skip stack exhausted".into()))?;
            if skip.dims()[3..] != x.dims()[3..] {
                return Err(shape_err!(
                    "skip {:?} and activation {:?} drifted at up.{i}.{j}",
                    skip.dims(),
                    x.dims()
                ));
            }
            x = Tensor::concat(&[&x, &skip], 1)?;
            x = pass.layer(&layer_name("up", i, j), l, &x, &temb)?;
        }
        if i > 0 {
            x = w.upsample[i - 1].forward(&upsample_nearest2(&x)?)?;
        }
    }
    let out = w.conv_out.forward(&silu(&w.norm_out.forward_channels(&x)?))?;
    if out.dims() != z.tensor().dims() {
        return Err(shape_err!(
            "output {:?} drifted from input {:?}",
            out.dims(),
            z.tensor().dims()
        ));
    }
    if let Conditioning::Cached { cache, .. } = cond {
        if pass.next_cached != cache.sites.len() {
            return Err(Error::State(format!(
                "conditioner has {} sites but the model used {}",
                cache.sites.len(),
                pass.next_cached
            )));
        }
    }
    LatentVideo::new(out)
}

/// Noise prediction `eps(z, t, cond)` in the requested mode.
pub fn forward_unet<T: Scalar>(
    model: &Model<T>,
    z: &LatentVideo<T>,
    timestep: f64,
    cond: Conditioning<'_, T>,
    mode: ForwardMode,
) -> Result<LatentVideo<T>> {
    let (sca, tca) = mode.policies();
    forward_with(model, z, timestep, cond, sca, tca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::latent::VideoDims;
    use crate::surgery::{apply_vcut, build_cache};

    fn setup(spec: ModelSpec) -> (Model<f64>, LatentVideo<f64>, ImageEmbedding<f64>, ImageEmbedding<f64>) {
        let dims = VideoDims {
            batch: 1,
            channels: spec.latent_channels,
            frames: spec.frames,
            height: spec.height,
            width: spec.width,
        };
        let d = spec.embed_dim;
        let model = Model::init(spec, 7).unwrap();
        let z = LatentVideo::noise(dims, 3, 1.0).unwrap();
        (model, z, ImageEmbedding::random(1, d, 11).unwrap(), ImageEmbedding::null(1, d).unwrap())
    }

    #[test]
    fn forward_preserves_shape_and_is_finite() {
        for spec in [ModelSpec::tiny(), ModelSpec::toy_svd()] {
            let (m, z, e, _) = setup(spec);
            let out = forward_unet(&m, &z, 0.3, Conditioning::Embedding(&e), ForwardMode::Baseline).unwrap();
            assert_eq!(out.tensor().dims(), z.tensor().dims());
            assert!(out.tensor().all_finite());
        }
    }

    #[test]
    fn folding_every_cross_site_matches_attention() {
        let (m, z, e, _) = setup(ModelSpec::toy_svd());
        let cond = Conditioning::Embedding(&e);
        let a = forward_with(&m, &z, 0.5, cond, ScaPolicy::Attend, TcaPolicy::Attend).unwrap();
        let b = forward_with(&m, &z, 0.5, cond, ScaPolicy::Fold, TcaPolicy::Fold).unwrap();
        assert!(a.tensor().max_abs_diff(b.tensor()).unwrap() <= 1e-12);
    }

    #[test]
    fn surgered_model_matches_fold_and_drop() {
        let (m, z, e, n) = setup(ModelSpec::toy_svd());
        let (cut, report) = apply_vcut(&m).unwrap();
        assert_eq!(report.sites_removed.len(), 16);
        assert_eq!(report.sites_folded.len(), 16);
        let cond = Conditioning::Embedding(&e);
        let a = forward_with(&m, &z, 0.5, cond, ScaPolicy::Fold, TcaPolicy::Drop).unwrap();
        let b = forward_unet(&cut, &z, 0.5, cond, ForwardMode::Modified).unwrap();
        assert!(a.tensor().bitwise_eq(b.tensor()));

        let cache = build_cache(&cut.folded_sites().unwrap(), &e, &n).unwrap();
        for (slot, on_the_fly) in [
            (CacheSlot::Cond, Conditioning::Embedding(&e)),
            (CacheSlot::Null, Conditioning::Embedding(&n)),
            (CacheSlot::Mean, Conditioning::Averaged { cond: &e, null: &n }),
        ] {
            let cached = forward_unet(&cut, &z, 0.5, Conditioning::Cached { cache: &cache, slot }, ForwardMode::VcutCached)
                .unwrap();
            let fly = forward_unet(&cut, &z, 0.5, on_the_fly, ForwardMode::Modified).unwrap();
            assert!(cached.tensor().bitwise_eq(fly.tensor()), "{slot:?}");
        }
    }

    #[test]
    fn surgered_model_rejects_baseline() {
        let (m, z, e, _) = setup(ModelSpec::tiny());
        let (cut, _) = apply_vcut(&m).unwrap();
        assert!(forward_unet(&cut, &z, 0.0, Conditioning::Embedding(&e), ForwardMode::Baseline).is_err());
    }

    #[test]
    fn cached_mode_needs_cached_conditioning() {
        let (m, z, e, _) = setup(ModelSpec::tiny());
        assert!(matches!(
            forward_unet(&m, &z, 0.0, Conditioning::Embedding(&e), ForwardMode::VcutCached),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn wrong_embedding_width_is_rejected() {
        let (m, z, _, _) = setup(ModelSpec::tiny());
        let e = ImageEmbedding::random(1, 5, 1).unwrap();
        assert!(forward_unet(&m, &z, 0.0, Conditioning::Embedding(&e), ForwardMode::Baseline).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::<f32>::init(ModelSpec::tiny(), 5).unwrap();
        let b = Model::<f32>::init(ModelSpec::tiny(), 5).unwrap();
        let c = Model::<f32>::init(ModelSpec::tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn weights_roundtrip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::<f32>::init(ModelSpec::tiny(), 9).unwrap();
        let (cut, _) = apply_vcut(&m).unwrap();
        for (k, model) in [m, cut].into_iter().enumerate() {
            let path = dir.path().join(k.to_string());
            model.save_dir(&path).unwrap();
            let back = Model::<f32>::load_dir(model.spec.clone(), &path).unwrap();
            assert_eq!(back, model);
            assert!(Model::<f64>::load_dir(model.spec.clone(), &path).is_err());
        }
    }

    #[test]
    fn timestep_embedding_layout() {
        let t = timestep_embedding::<f64>(0.0, 8);
        assert_eq!(t.data(), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
