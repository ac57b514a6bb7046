//! Analytical MAC and parameter accounting.
//!
//! An [`ArchSpec`] is a flat layer inventory whose token counts are stated per
//! frame, so one file covers every frame count. MACs count multiply-accumulates
//! only; normalization, softmax and elementwise work are free.

pub mod published;
mod svd;
mod toy;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::model::attention::AttentionKind;

pub use svd::{svd_arch, SVD_ARCH_JSON};
pub use toy::arch_from_model_spec;

/// Number of tokens a layer is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tokens {
    pub count: usize,
    /// Multiply `count` by the frame count.
    #[serde(default)]
    pub per_frame: bool,
}

impl Tokens {
    pub fn fixed(count: usize) -> Self {
        Self { count, per_frame: false }
    }

    pub fn per_frame(count: usize) -> Self {
        Self { count, per_frame: true }
    }

    pub fn resolve(self, frames: usize) -> u64 {
        self.count as u64 * if self.per_frame { frames as u64 } else { 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Affine {
        name: String,
        inputs: usize,
        outputs: usize,
        bias: bool,
        tokens: Tokens,
    },
    /// Convolution with `kernel` taps per input channel group.
    Conv {
        name: String,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        #[serde(default = "one")]
        groups: usize,
        bias: bool,
        /// Output positions.
        tokens: Tokens,
    },
    /// Attention site. Spatial kinds run `f` sequences of `positions` queries,
    /// temporal kinds `positions` sequences of `f` queries. Cross kinds read a
    /// single key from a `source_dim`-wide embedding.
    Attention {
        name: String,
        kind: AttentionKind,
        channels: usize,
        heads: usize,
        source_dim: usize,
        positions: usize,
        qkv_bias: bool,
        out_bias: bool,
        /// Norm on the query path that exists only for this site.
        #[serde(default)]
        query_norm: bool,
    },
    /// Affine/group norm with gain and bias.
    Norm { name: String, channels: usize },
    /// Free-standing scalar parameters (blend factors).
    Scalar { name: String, count: usize },
    /// Folded cross-attention map, evaluated once per run for each embedding.
    Folded {
        name: String,
        source_dim: usize,
        channels: usize,
    },
}

fn one() -> usize {
    1
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Self::Affine { name, .. }
            | Self::Conv { name, .. }
            | Self::Attention { name, .. }
            | Self::Norm { name, .. }
            | Self::Scalar { name, .. }
            | Self::Folded { name, .. } => name,
        }
    }

    pub fn params(&self) -> u64 {
        let u = |v: usize| v as u64;
        match *self {
            Self::Affine {
                inputs, outputs, bias, ..
            } => u(inputs * outputs) + if bias { u(outputs) } else { 0 },
            Self::Conv {
                c_in,
                c_out,
                kernel,
                groups,
                bias,
                ..
            } => u(c_out * (c_in / groups) * kernel) + if bias { u(c_out) } else { 0 },
            Self::Attention {
                channels: c,
                source_dim: src,
                qkv_bias,
                out_bias,
                query_norm,
                ..
            } => {
                let w = u(2 * c * c + 2 * src * c);
                let b = if qkv_bias { u(3 * c) } else { 0 } + if out_bias { u(c) } else { 0 };
                w + b + if query_norm { u(2 * c) } else { 0 }
            }
            Self::Norm { channels, .. } => u(2 * channels),
            Self::Scalar { count, .. } => u(count),
            Self::Folded {
                source_dim, channels, ..
            } => u(source_dim * channels + channels),
        }
    }

    pub fn macs(&self, frames: usize) -> MacBreakdown {
        let mut m = MacBreakdown::default();
        match *self {
            Self::Affine {
                inputs,
                outputs,
                tokens,
                ..
            } => m.affine = tokens.resolve(frames) * (inputs * outputs) as u64,
            Self::Conv {
                c_in,
                c_out,
                kernel,
                groups,
                tokens,
                ..
            } => m.conv = tokens.resolve(frames) * (c_out * (c_in / groups) * kernel) as u64,
            Self::Attention {
                kind,
                channels,
                source_dim,
                positions,
                ..
            } => {
                let g = AttentionGeometry::new(kind, positions, frames);
                let (c, src) = (channels as u64, source_dim as u64);
                m.attention_proj = g.sequences * (2 * g.query_len * c * c + 2 * g.key_len * src * c);
                m.attention_scores = g.sequences * 2 * g.query_len * g.key_len * c;
            }
            Self::Norm { .. } | Self::Scalar { .. } => {}
            Self::Folded {
                source_dim, channels, ..
            } => m.once_per_run = 2 * (source_dim * channels) as u64,
        }
        m
    }
}

/// Sequence geometry of one attention site at a given frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionGeometry {
    pub sequences: u64,
    pub query_len: u64,
    pub key_len: u64,
}

impl AttentionGeometry {
    pub fn new(kind: AttentionKind, positions: usize, frames: usize) -> Self {
        let (p, f) = (positions as u64, frames as u64);
        let (sequences, query_len) = if kind.is_temporal() { (p, f) } else { (f, p) };
        Self {
            sequences,
            query_len,
            key_len: if kind.is_cross() { 1 } else { query_len },
        }
    }
}

/// Which products count toward a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacConvention {
    /// Every multiply-accumulate, including attention scores and the weighted sum.
    Full,
    /// Parametrized layers only (convolutions, affine maps, attention
    /// projections), the way module-hook profilers count.
    OpCounter,
}

impl std::str::FromStr for MacConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "op-counter" => Ok(Self::OpCounter),
            other => Err(arg_err!("unknown MAC convention {other:?} (full, op-counter)")),
        }
    }
}

impl std::fmt::Display for MacConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::OpCounter => "op-counter",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacBreakdown {
    pub conv: u64,
    pub affine: u64,
    pub attention_proj: u64,
    pub attention_scores: u64,
    /// Folded conditioner evaluations, once per run rather than per pass.
    pub once_per_run: u64,
}

impl MacBreakdown {
    pub fn per_pass(&self, convention: MacConvention) -> u64 {
        let base = self.conv + self.affine + self.attention_proj;
        match convention {
            MacConvention::Full => base + self.attention_scores,
            MacConvention::OpCounter => base,
        }
    }
}

impl std::ops::Add for MacBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            conv: self.conv + o.conv,
            affine: self.affine + o.affine,
            attention_proj: self.attention_proj + o.attention_proj,
            attention_scores: self.attention_scores + o.attention_scores,
            once_per_run: self.once_per_run + o.once_per_run,
        }
    }
}

/// Layer inventory of a denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub embed_dim: usize,
    pub layers: Vec<Layer>,
}

impl ArchSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let arch: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            let bad = match *l {
                Layer::Affine {
                    inputs,
                    outputs,
                    tokens,
                    ..
                } => inputs == 0 || outputs == 0 || tokens.count == 0,
                Layer::Conv {
                    c_in,
                    c_out,
                    kernel,
                    groups,
                    tokens,
                    ..
                } => {
                    c_in == 0
                        || c_out == 0
                        || kernel == 0
                        || groups == 0
                        || c_in % groups != 0
                        || c_out % groups != 0
                        || tokens.count == 0
                }
                Layer::Attention {
                    kind,
                    channels,
                    heads,
                    source_dim,
                    positions,
                    ..
                } => {
                    channels == 0
                        || heads == 0
                        || channels % heads != 0
                        || source_dim == 0
                        || positions == 0
                        || (!kind.is_cross() && source_dim != channels)
                }
                Layer::Norm { channels, .. } => channels == 0,
                Layer::Scalar { count, .. } => count == 0,
                Layer::Folded {
                    source_dim, channels, ..
                } => source_dim == 0 || channels == 0,
            };
            if bad {
                return Err(Error::Config(format!("layer {} has invalid extents", l.name())));
            }
        }
        Ok(())
    }

    pub fn sites(&self, kind: AttentionKind) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Attention { kind: k, .. } if *k == kind))
            .count()
    }

    /// Whether cross-attention has already been cut from this inventory.
    pub fn is_vcut(&self) -> bool {
        self.sites(AttentionKind::Sca) == 0
            && self.sites(AttentionKind::Tca) == 0
            && self.layers.iter().any(|l| matches!(l, Layer::Folded { .. }))
    }
}

pub fn count_params(arch: &ArchSpec) -> u64 {
    arch.layers.iter().map(Layer::params).sum()
}

/// MACs of one forward pass at batch 1, by category.
pub fn count_macs(arch: &ArchSpec, frames: usize) -> MacBreakdown {
    arch.layers
        .iter()
        .map(|l| l.macs(frames))
        .fold(MacBreakdown::default(), |a, b| a + b)
}

/// Drops TCA sites (with their query norms) and replaces each SCA site by its folded map.
pub fn vcut_arch(arch: &ArchSpec) -> Result<ArchSpec> {
    if arch.is_vcut() {
        return Err(Error::Transform(format!("{} is already cut", arch.name)));
    }
    let mut layers = Vec::with_capacity(arch.layers.len());
    for l in &arch.layers {
        match l {
            Layer::Attention {
                kind: AttentionKind::Tca,
                ..
            } => {}
            Layer::Attention {
                name,
                kind: AttentionKind::Sca,
                channels,
                source_dim,
                ..
            } => layers.push(Layer::Folded {
                name: name.clone(),
                source_dim: *source_dim,
                channels: *channels,
            }),
            other => layers.push(other.clone()),
        }
    }
    Ok(ArchSpec {
        name: format!("{}+vcut", arch.name),
        embed_dim: arch.embed_dim,
        layers,
    })
}

/// Like [`vcut_arch`] but only deletes TCA sites; SCA is left as attention.
pub fn drop_tca_arch(arch: &ArchSpec) -> ArchSpec {
    ArchSpec {
        name: format!("{}-tca", arch.name),
        embed_dim: arch.embed_dim,
        layers: arch
            .layers
            .iter()
            .filter(|l| !matches!(l, Layer::Attention { kind: AttentionKind::Tca, .. }))
            .cloned()
            .collect(),
    }
}

/// `(c - 1) p + (T - c + 1) p / 2`, with `p` the guided (two-pass) cost of a step.
pub fn vcut_totals(per_step: f64, steps: usize, cut_step: usize) -> Result<f64> {
    if steps == 0 || cut_step == 0 || cut_step > steps + 1 {
        return Err(arg_err!("cut step {cut_step} outside 1..={}", steps + 1));
    }
    let dual = (cut_step - 1) as f64;
    let single = (steps + 1 - cut_step) as f64;
    Ok(dual * per_step + single * per_step / 2.0)
}

/// Latency under a single MACs-to-seconds constant calibrated on the baseline.
pub fn latency_model(total_macs: f64, baseline_macs: f64, baseline_latency: f64) -> Result<f64> {
    if !(baseline_macs > 0.0) || !(baseline_latency >= 0.0) || !(total_macs >= 0.0) {
        return Err(arg_err!(
            "latency model needs positive baseline MACs and non-negative values"
        ));
    }
    Ok(baseline_latency * total_macs / baseline_macs)
}

/// Side of a [`CostReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSide {
    pub arch: String,
    pub macs_per_pass: u64,
    /// Two passes (guided step).
    pub macs_per_step: u64,
    pub macs_total: f64,
    pub macs_once_per_run: u64,
    pub params: u64,
    pub breakdown: MacBreakdown,
    pub latency_s: Option<f64>,
}

/// Baseline against the cut architecture at a given cut step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub frames: usize,
    pub steps: usize,
    pub cut_step: usize,
    pub convention: MacConvention,
    pub baseline: CostSide,
    pub vcut: CostSide,
    pub delta_macs_per_step: i64,
    pub delta_macs_total: f64,
    pub delta_params: i64,
    pub latency_reduction: Option<f64>,
}

pub fn cost_report(
    arch: &ArchSpec,
    frames: usize,
    steps: usize,
    cut_step: usize,
    convention: MacConvention,
    baseline_latency: Option<f64>,
) -> Result<CostReport> {
    arch.validate()?;
    if frames == 0 {
        return Err(arg_err!("frames must be positive"));
    }
    let cut = if arch.is_vcut() { arch.clone() } else { vcut_arch(arch)? };
    let side = |a: &ArchSpec, c: usize| -> Result<CostSide> {
        let b = count_macs(a, frames);
        let pass = b.per_pass(convention);
        let total = vcut_totals(2.0 * pass as f64, steps, c)? + b.once_per_run as f64;
        Ok(CostSide {
            arch: a.name.clone(),
            macs_per_pass: pass,
            macs_per_step: 2 * pass,
            macs_total: total,
            macs_once_per_run: b.once_per_run,
            params: count_params(a),
            breakdown: b,
            latency_s: None,
        })
    };
    let mut base = side(arch, steps + 1)?;
    let mut vcut = side(&cut, cut_step)?;
    let mut reduction = None;
    if let Some(lat) = baseline_latency {
        base.latency_s = Some(lat);
        let l = latency_model(vcut.macs_total, base.macs_total, lat)?;
        vcut.latency_s = Some(l);
        reduction = Some(if lat > 0.0 { 1.0 - l / lat } else { 0.0 });
    }
    Ok(CostReport {
        frames,
        steps,
        cut_step,
        convention,
        delta_macs_per_step: base.macs_per_step as i64 - vcut.macs_per_step as i64,
        delta_macs_total: base.macs_total - vcut.macs_total,
        delta_params: base.params as i64 - vcut.params as i64,
        baseline: base,
        vcut,
        latency_reduction: reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(i: usize, o: usize, n: usize) -> Layer {
        Layer::Affine {
            name: "a".into(),
            inputs: i,
            outputs: o,
            bias: true,
            tokens: Tokens::fixed(n),
        }
    }

    #[test]
    fn single_affine() {
        let l = affine(3, 2, 1);
        assert_eq!(l.macs(1).per_pass(MacConvention::Full), 6);
        assert_eq!(l.params(), 8);
    }

    /// Scalar attention forward that counts every multiply it performs.
    fn counted_attention(c: usize, heads: usize, lq: usize, lk: usize, d: usize) -> u64 {
        let dk = c / heads;
        let mut n = 0u64;
        let mut acc = 0.0f64;
        let mut mul = |a: f64, b: f64| {
            n += 1;
            acc += a * b;
        };
        for _ in 0..lq {
            for _ in 0..c {
                for _ in 0..c {
                    mul(1.0, 1.0); // q
                }
            }
        }
        for _ in 0..lk {
            for _ in 0..c {
                for _ in 0..d {
                    mul(1.0, 1.0); // k
                    mul(1.0, 1.0); // v
                }
            }
        }
        for _ in 0..heads {
            for _ in 0..lq {
                for _ in 0..lk {
                    for _ in 0..dk {
                        mul(1.0, 1.0); // score
                        mul(1.0, 1.0); // weighted value
                    }
                }
            }
        }
        for _ in 0..lq {
            for _ in 0..c {
                for _ in 0..c {
                    mul(1.0, 1.0); // output projection
                }
            }
        }
        assert!(acc > 0.0);
        n
    }

    #[test]
    fn attention_matches_enumeration() {
        // Spatial self-attention with one frame: one sequence of `positions` queries.
        let l = Layer::Attention {
            name: "s".into(),
            kind: AttentionKind::Ssa,
            channels: 4,
            heads: 1,
            source_dim: 4,
            positions: 2,
            qkv_bias: true,
            out_bias: true,
            query_norm: false,
        };
        assert_eq!(l.macs(1).per_pass(MacConvention::Full), counted_attention(4, 1, 2, 2, 4));
        let cross = Layer::Attention {
            name: "t".into(),
            kind: AttentionKind::Tca,
            channels: 8,
            heads: 2,
            source_dim: 16,
            positions: 5,
            qkv_bias: false,
            out_bias: true,
            query_norm: true,
        };
        // Temporal: 5 sequences of 3 frames, one key each.
        assert_eq!(cross.macs(3).per_pass(MacConvention::Full), 5 * counted_attention(8, 2, 3, 1, 16));
        assert_eq!(cross.params(), 2 * 64 + 2 * 16 * 8 + 8 + 16);
    }

    #[test]
    fn totals_law() {
        assert!((vcut_totals(35.1, 25, 17).unwrap() - 719.55).abs() < 1e-9);
        assert!((vcut_totals(62.86, 25, 20).unwrap() - 1382.92).abs() < 1e-9);
        assert_eq!(vcut_totals(36.11, 25, 26).unwrap(), 25.0 * 36.11);
        assert!(vcut_totals(1.0, 25, 27).is_err());
        assert!(vcut_totals(1.0, 25, 0).is_err());
    }

    #[test]
    fn latency_scales_with_macs() {
        assert_eq!(latency_model(903.0, 903.0, 68.4).unwrap(), 68.4);
        assert!((latency_model(719.0, 903.0, 68.4).unwrap() - 54.46).abs() < 0.01);
        assert!(latency_model(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn removing_layers_never_increases_cost() {
        let arch = svd_arch();
        let cut = vcut_arch(&arch).unwrap();
        for f in [1, 14, 25] {
            for conv in [MacConvention::Full, MacConvention::OpCounter] {
                assert!(count_macs(&cut, f).per_pass(conv) <= count_macs(&arch, f).per_pass(conv));
                assert!(count_macs(&drop_tca_arch(&arch), f).per_pass(conv) <= count_macs(&arch, f).per_pass(conv));
            }
        }
        assert!(count_params(&cut) < count_params(&arch));
        assert!(vcut_arch(&cut).is_err());
    }

    #[test]
    fn report_at_no_cut_has_no_step_savings_beyond_surgery() {
        let arch = svd_arch();
        let r = cost_report(&arch, 14, 25, 26, MacConvention::OpCounter, Some(68.4)).unwrap();
        let expect = 25.0 * r.vcut.macs_per_step as f64 + r.vcut.macs_once_per_run as f64;
        assert_eq!(r.vcut.macs_total, expect);
        assert!(r.vcut.macs_total <= r.baseline.macs_total);
        assert!(r.vcut.latency_s.unwrap() <= 68.4);
    }

    #[test]
    fn conditioner_is_negligible() {
        let arch = vcut_arch(&svd_arch()).unwrap();
        let m = count_macs(&arch, 14);
        assert!((m.once_per_run as f64) < 1e-4 * m.per_pass(MacConvention::OpCounter) as f64);
    }
}
