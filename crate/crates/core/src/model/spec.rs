use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::attention::AttentionKind;

/// One resolution level of the UNet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub channels: usize,
    /// Whether the layers of this level carry spatial and temporal transformer blocks.
    pub attention: bool,
}

/// Declarative description of the toy spatio-temporal denoiser.
///
/// The encoder runs `layers_per_level` layers per level, the decoder one more
/// (each decoder layer consumes a skip connection). Every level except the
/// last halves the spatial extent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub latent_channels: usize,
    pub levels: Vec<LevelSpec>,
    pub layers_per_level: usize,
    pub heads: usize,
    /// Width `D` of the pooled image embedding.
    pub embed_dim: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_true")]
    pub mid_attention: bool,
    /// Set once temporal cross-attention is removed and spatial cross-attention folded.
    #[serde(default)]
    pub vcut: bool,
}

fn default_true() -> bool {
    true
}

/// Count of attention sites of one kind, split by UNet section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub encoder: usize,
    pub mid: usize,
    pub decoder: usize,
}

impl SiteLayout {
    pub fn total(&self) -> usize {
        self.encoder + self.mid + self.decoder
    }
}

impl ModelSpec {
    /// Four levels with attention on the first three, two encoder layers per
    /// level and an attended middle block: 6 + 1 + 9 sites per attention kind.
    pub fn svd_layout(channels: [usize; 4], heads: usize, embed_dim: usize) -> Self {
        Self {
            latent_channels: 4,
            levels: channels
                .iter()
                .enumerate()
                .map(|(i, &c)| LevelSpec { channels: c, attention: i < 3 })
                .collect(),
            layers_per_level: 2,
            heads,
            embed_dim,
            frames: 3,
            height: 8,
            width: 8,
            mid_attention: true,
            vcut: false,
        }
    }

    /// Desk-scale model with the 16-sites-per-kind layout.
    pub fn toy_svd() -> Self {
        Self::svd_layout([8, 16, 16, 16], 2, 32)
    }

    /// Two levels, one site of each kind per section. Used where speed matters.
    pub fn tiny() -> Self {
        Self {
            latent_channels: 4,
            levels: vec![
                LevelSpec { channels: 8, attention: true },
                LevelSpec { channels: 8, attention: false },
            ],
            layers_per_level: 1,
            heads: 2,
            embed_dim: 16,
            frames: 3,
            height: 4,
            width: 4,
            mid_attention: true,
            vcut: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.levels.is_empty() {
            return err("at least one level is required".into());
        }
        if self.layers_per_level == 0 {
            return err("layers_per_level must be positive".into());
        }
        for (name, v) in [
            ("latent_channels", self.latent_channels),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.channels == 0 || l.channels % self.heads != 0 {
                return err(format!(
                    "level {i}: {} channels not divisible by {} heads",
                    l.channels, self.heads
                ));
            }
        }
        let factor = 1usize << (self.levels.len() - 1);
        if !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return err(format!(
                "{}x{} latent is not divisible by {factor} for {} levels",
                self.height,
                self.width,
                self.levels.len()
            ));
        }
        Ok(())
    }

    pub fn base_channels(&self) -> usize {
        self.levels[0].channels
    }

    pub fn time_embed_dim(&self) -> usize {
        4 * self.base_channels()
    }

    /// Spatial extent `(h, w)` at `level`.
    pub fn level_extent(&self, level: usize) -> (usize, usize) {
        (self.height >> level, self.width >> level)
    }

    /// Number of sites of `kind` in each section; zero for removed kinds.
    pub fn site_layout(&self, kind: AttentionKind) -> SiteLayout {
        if self.vcut && kind == AttentionKind::Tca {
            return SiteLayout { encoder: 0, mid: 0, decoder: 0 };
        }
        let attended = self.levels.iter().filter(|l| l.attention).count();
        SiteLayout {
            encoder: attended * self.layers_per_level,
            mid: usize::from(self.mid_attention),
            decoder: attended * (self.layers_per_level + 1),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
