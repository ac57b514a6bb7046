pub mod attention;
pub mod latent;
pub mod layers;
pub mod params;
pub mod spec;
pub mod unet;

pub use attention::{cross_attention, self_attention, AttentionKind, AttentionSite};
pub use latent::{EmbeddingKind, ImageEmbedding, LatentVideo, VideoDims};
pub use spec::{LevelSpec, ModelSpec, SiteLayout};
pub use unet::{
    forward_unet, forward_with, timestep_embedding, Conditioning, CrossSlot, ForwardMode, Model, ModelWeights, Regime,
    ScaPolicy, TcaPolicy, TransformerBlock,
};
