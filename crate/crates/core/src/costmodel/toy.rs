//! Inventory of the desk-scale denoiser, derived from its spec alone.

use crate::model::attention::AttentionKind;
use crate::model::layers::{FF_EXPANSION, TEMPORAL_KERNEL};
use crate::model::spec::ModelSpec;

use super::{ArchSpec, Layer, Tokens};

fn affine(out: &mut Vec<Layer>, name: String, inputs: usize, outputs: usize, tokens: Tokens) {
    out.push(Layer::Affine {
        name,
        inputs,
        outputs,
        bias: true,
        tokens,
    });
}

fn conv(out: &mut Vec<Layer>, name: String, c_in: usize, c_out: usize, kernel: usize, groups: usize, positions: usize) {
    out.push(Layer::Conv {
        name,
        c_in,
        c_out,
        kernel,
        groups,
        bias: true,
        tokens: Tokens::per_frame(positions),
    });
}

fn norm(out: &mut Vec<Layer>, name: String, channels: usize) {
    out.push(Layer::Norm { name, channels });
}

fn st_layer(out: &mut Vec<Layer>, spec: &ModelSpec, p: &str, c_in: usize, c: usize, attention: bool, positions: usize) {
    let temb = spec.time_embed_dim();
    norm(out, format!("{p}.spatial_res.norm1"), c_in);
    conv(out, format!("{p}.spatial_res.conv1"), c_in, c, 9, 1, positions);
    affine(out, format!("{p}.spatial_res.temb"), temb, c, Tokens::fixed(1));
    norm(out, format!("{p}.spatial_res.norm2"), c);
    conv(out, format!("{p}.spatial_res.conv2"), c, c, 9, 1, positions);
    if c_in != c {
        conv(out, format!("{p}.spatial_res.shortcut"), c_in, c, 1, 1, positions);
    }
    if attention {
        block(out, spec, &format!("{p}.spatial"), c, positions, AttentionKind::Ssa, AttentionKind::Sca);
    }
    norm(out, format!("{p}.temporal_res.norm1"), c);
    conv(out, format!("{p}.temporal_res.conv1"), c, c, TEMPORAL_KERNEL, c, positions);
    affine(out, format!("{p}.temporal_res.temb"), temb, c, Tokens::fixed(1));
    norm(out, format!("{p}.temporal_res.norm2"), c);
    conv(out, format!("{p}.temporal_res.conv2"), c, c, TEMPORAL_KERNEL, c, positions);
    if attention {
        block(out, spec, &format!("{p}.temporal"), c, positions, AttentionKind::Tsa, AttentionKind::Tca);
    }
}

fn block(
    out: &mut Vec<Layer>,
    spec: &ModelSpec,
    p: &str,
    c: usize,
    positions: usize,
    self_kind: AttentionKind,
    cross_kind: AttentionKind,
) {
    norm(out, format!("{p}.norm_self"), c);
    for (kind, src, suffix) in [(self_kind, c, "self"), (cross_kind, spec.embed_dim, "cross")] {
        out.push(Layer::Attention {
            name: format!("{p}.{suffix}"),
            kind,
            channels: c,
            heads: spec.heads,
            source_dim: src,
            positions,
            qkv_bias: true,
            out_bias: true,
            query_norm: kind.is_cross(),
        });
    }
    norm(out, format!("{p}.norm_ff"), c);
    let hidden = FF_EXPANSION * c;
    affine(out, format!("{p}.ff.up"), c, hidden, Tokens::per_frame(positions));
    affine(out, format!("{p}.ff.down"), hidden, c, Tokens::per_frame(positions));
}

/// Inventory of `Model::init(spec, _)` at batch 1.
pub fn arch_from_model_spec(spec: &ModelSpec) -> ArchSpec {
    let mut out = Vec::new();
    let c0 = spec.base_channels();
    let n = spec.levels.len();
    let pos = |i: usize| {
        let (h, w) = spec.level_extent(i);
        h * w
    };
    conv(&mut out, "conv_in".into(), spec.latent_channels, c0, 9, 1, pos(0));
    affine(&mut out, "time_in".into(), c0, spec.time_embed_dim(), Tokens::fixed(1));
    affine(&mut out, "time_out".into(), spec.time_embed_dim(), spec.time_embed_dim(), Tokens::fixed(1));

    let mut skips = vec![c0];
    let mut cur = c0;
    for (i, level) in spec.levels.iter().enumerate() {
        for j in 0..spec.layers_per_level {
            st_layer(&mut out, spec, &format!("down.{i}.{j}"), cur, level.channels, level.attention, pos(i));
            cur = level.channels;
            skips.push(cur);
        }
        if i + 1 < n {
            conv(&mut out, format!("downsample.{i}"), cur, cur, 9, 1, pos(i + 1));
            skips.push(cur);
        }
    }
    st_layer(&mut out, spec, "mid", cur, cur, spec.mid_attention, pos(n - 1));
    for i in (0..n).rev() {
        let level = &spec.levels[i];
        for j in 0..=spec.layers_per_level {
            let skip = skips.pop().expect("one skip per decoder layer");
            st_layer(&mut out, spec, &format!("up.{i}.{j}"), cur + skip, level.channels, level.attention, pos(i));
            cur = level.channels;
        }
        if i > 0 {
            conv(&mut out, format!("upsample.{i}"), cur, cur, 9, 1, pos(i - 1));
        }
    }
    norm(&mut out, "norm_out".into(), cur);
    conv(&mut out, "conv_out".into(), cur, spec.latent_channels, 9, 1, pos(0));
    ArchSpec {
        name: "toy".into(),
        embed_dim: spec.embed_dim,
        layers: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{count_params, vcut_arch};
    use crate::model::unet::Model;
    use crate::surgery::apply_vcut;

    #[test]
    fn counter_matches_model_and_surgery() {
        for spec in [ModelSpec::tiny(), ModelSpec::toy_svd()] {
            let model = Model::<f32>::init(spec.clone(), 0).unwrap();
            let arch = arch_from_model_spec(&spec);
            assert_eq!(count_params(&arch), model.num_params() as u64);
            let (cut, report) = apply_vcut(&model).unwrap();
            let cut_arch = vcut_arch(&arch).unwrap();
            assert_eq!(count_params(&cut_arch), cut.num_params() as u64);
            assert_eq!(count_params(&arch) - count_params(&cut_arch), report.param_delta as u64);
            for kind in AttentionKind::ALL {
                assert_eq!(arch.sites(kind), spec.site_layout(kind).total());
            }
        }
    }
}
