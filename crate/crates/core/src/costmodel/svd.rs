//! Layer inventory of the SVD image-to-video UNet at 576x1024 (latent 72x128).

use crate::model::attention::AttentionKind;

use super::{ArchSpec, Layer, Tokens};

/// The bundled inventory, identical to [`svd_arch`].
pub const SVD_ARCH_JSON: &str = include_str!("../../data/svd_arch.json");

const EMBED_DIM: usize = 1024;
const TIME_DIM: usize = 1280;
const CHANNELS: [usize; 4] = [320, 640, 1280, 1280];
const HEADS: [usize; 4] = [5, 10, 20, 20];
const ATTENTION: [bool; 4] = [true, true, true, false];
const LATENT: (usize, usize) = (72, 128);
const IN_CHANNELS: usize = 8;
const OUT_CHANNELS: usize = 4;
const DOWN_LAYERS: usize = 2;

struct Builder {
    layers: Vec<Layer>,
}

impl Builder {
    fn affine(&mut self, name: String, inputs: usize, outputs: usize, bias: bool, tokens: Tokens) {
        self.layers.push(Layer::Affine {
            name,
            inputs,
            outputs,
            bias,
            tokens,
        });
    }

    fn conv(&mut self, name: String, c_in: usize, c_out: usize, kernel: usize, positions: usize) {
        self.layers.push(Layer::Conv {
            name,
            c_in,
            c_out,
            kernel,
            groups: 1,
            bias: true,
            tokens: Tokens::per_frame(positions),
        });
    }

    fn norm(&mut self, name: String, channels: usize) {
        self.layers.push(Layer::Norm { name, channels });
    }

    fn scalar(&mut self, name: String) {
        self.layers.push(Layer::Scalar { name, count: 1 });
    }

    fn attention(&mut self, name: String, kind: AttentionKind, c: usize, heads: usize, positions: usize) {
        let cross = kind.is_cross();
        self.layers.push(Layer::Attention {
            name,
            kind,
            channels: c,
            heads,
            source_dim: if cross { EMBED_DIM } else { c },
            positions,
            qkv_bias: false,
            out_bias: true,
            query_norm: cross,
        });
    }

    /// GEGLU feed-forward: `c -> 2 * 4c` then `4c -> out`.
    fn geglu(&mut self, p: &str, c: usize, positions: usize) {
        self.affine(format!("{p}.proj"), c, 8 * c, true, Tokens::per_frame(positions));
        self.affine(format!("{p}.out"), 4 * c, c, true, Tokens::per_frame(positions));
    }

    fn res(&mut self, p: &str, c_in: usize, c_out: usize, positions: usize) {
        let s = format!("{p}.spatial_res");
        self.norm(format!("{s}.norm1"), c_in);
        self.conv(format!("{s}.conv1"), c_in, c_out, 9, positions);
        self.affine(format!("{s}.time_emb_proj"), TIME_DIM, c_out, true, Tokens::per_frame(1));
        self.norm(format!("{s}.norm2"), c_out);
        self.conv(format!("{s}.conv2"), c_out, c_out, 9, positions);
        if c_in != c_out {
            self.conv(format!("{s}.conv_shortcut"), c_in, c_out, 1, positions);
        }
        let t = format!("{p}.temporal_res");
        self.norm(format!("{t}.norm1"), c_out);
        self.conv(format!("{t}.conv1"), c_out, c_out, 3, positions);
        self.affine(format!("{t}.time_emb_proj"), TIME_DIM, c_out, true, Tokens::per_frame(1));
        self.norm(format!("{t}.norm2"), c_out);
        self.conv(format!("{t}.conv2"), c_out, c_out, 3, positions);
        self.scalar(format!("{p}.time_mixer"));
    }

    fn transformer(&mut self, p: &str, c: usize, heads: usize, positions: usize) {
        self.norm(format!("{p}.norm"), c);
        self.affine(format!("{p}.proj_in"), c, c, true, Tokens::per_frame(positions));

        let s = format!("{p}.spatial");
        self.norm(format!("{s}.norm1"), c);
        self.attention(format!("{s}.attn1"), AttentionKind::Ssa, c, heads, positions);
        self.attention(format!("{s}.attn2"), AttentionKind::Sca, c, heads, positions);
        self.norm(format!("{s}.norm3"), c);
        self.geglu(&format!("{s}.ff"), c, positions);

        self.affine(format!("{p}.time_pos_embed.linear_1"), c, 4 * c, true, Tokens::per_frame(1));
        self.affine(format!("{p}.time_pos_embed.linear_2"), 4 * c, c, true, Tokens::per_frame(1));

        let t = format!("{p}.temporal");
        self.norm(format!("{t}.norm_in"), c);
        self.geglu(&format!("{t}.ff_in"), c, positions);
        self.norm(format!("{t}.norm1"), c);
        self.attention(format!("{t}.attn1"), AttentionKind::Tsa, c, heads, positions);
        self.attention(format!("{t}.attn2"), AttentionKind::Tca, c, heads, positions);
        self.norm(format!("{t}.norm3"), c);
        self.geglu(&format!("{t}.ff"), c, positions);

        self.scalar(format!("{p}.time_mixer"));
        self.affine(format!("{p}.proj_out"), c, c, true, Tokens::per_frame(positions));
    }
}

/// Builds the inventory from the published block structure.
///
/// Down path: three attended levels and one plain level, two layers each, with
/// stride-2 downsampling between levels. Up path mirrors it with three layers
/// per level, each consuming one skip connection.
pub fn svd_arch() -> ArchSpec {
    let mut b = Builder { layers: Vec::new() };
    let positions: Vec<usize> = (0..4).map(|i| (LATENT.0 >> i) * (LATENT.1 >> i)).collect();
    let c0 = CHANNELS[0];

    b.conv("conv_in".into(), IN_CHANNELS, c0, 9, positions[0]);
    b.affine("time_embedding.linear_1".into(), c0, TIME_DIM, true, Tokens::fixed(1));
    b.affine("time_embedding.linear_2".into(), TIME_DIM, TIME_DIM, true, Tokens::fixed(1));
    b.affine("add_embedding.linear_1".into(), 768, TIME_DIM, true, Tokens::fixed(1));
    b.affine("add_embedding.linear_2".into(), TIME_DIM, TIME_DIM, true, Tokens::fixed(1));

    let mut skips = vec![c0];
    let mut cur = c0;
    for i in 0..4 {
        for j in 0..DOWN_LAYERS {
            let p = format!("down.{i}.{j}");
            b.res(&p, cur, CHANNELS[i], positions[i]);
            cur = CHANNELS[i];
            if ATTENTION[i] {
                b.transformer(&format!("{p}.attn"), cur, HEADS[i], positions[i]);
            }
            skips.push(cur);
        }
        if i < 3 {
            b.conv(format!("down.{i}.downsample"), cur, cur, 9, positions[i + 1]);
            skips.push(cur);
        }
    }

    b.res("mid.0", cur, cur, positions[3]);
    b.transformer("mid.attn", cur, HEADS[3], positions[3]);
    b.res("mid.1", cur, cur, positions[3]);

    for i in (0..4).rev() {
        for j in 0..=DOWN_LAYERS {
            let skip = skips.pop().expect("one skip per up layer");
            let p = format!("up.{i}.{j}");
            b.res(&p, cur + skip, CHANNELS[i], positions[i]);
            cur = CHANNELS[i];
            if ATTENTION[i] {
                b.transformer(&format!("{p}.attn"), cur, HEADS[i], positions[i]);
            }
        }
        if i > 0 {
            b.conv(format!("up.{i}.upsample"), cur, cur, 9, positions[i - 1]);
        }
    }

    b.norm("conv_norm_out".into(), c0);
    b.conv("conv_out".into(), c0, OUT_CHANNELS, 9, positions[0]);

    ArchSpec {
        name: "svd".into(),
        embed_dim: EMBED_DIM,
        layers: b.layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{count_params, drop_tca_arch, vcut_arch};

    #[test]
    fn bundled_file_matches_builder() {
        let bundled: ArchSpec = serde_json::from_str(SVD_ARCH_JSON).unwrap();
        assert_eq!(bundled, svd_arch());
    }

    #[test]
    fn site_layout_is_sixteen_per_kind() {
        let arch = svd_arch();
        for kind in AttentionKind::ALL {
            assert_eq!(arch.sites(kind), 16, "{kind}");
        }
        let cut = vcut_arch(&arch).unwrap();
        assert_eq!(cut.sites(AttentionKind::Tca), 0);
        assert_eq!(cut.sites(AttentionKind::Sca), 0);
    }

    #[test]
    fn parameter_count_of_the_published_unet() {
        assert_eq!(count_params(&svd_arch()), 1_524_623_082);
    }

    #[test]
    fn deleting_tca_alone_removes_about_fifty_million() {
        let arch = svd_arch();
        let delta = count_params(&arch) - count_params(&drop_tca_arch(&arch));
        assert!((50_000_000..51_000_000).contains(&delta), "{delta}");
    }

    /// Rewrites `data/svd_arch.json` from the builder.
    #[test]
    #[ignore]
    fn regenerate_bundled_arch() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/svd_arch.json");
        svd_arch().save(path).unwrap();
    }
}
