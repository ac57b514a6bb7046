pub mod cost;
pub mod equiv;
pub mod init;
pub mod metrics;
pub mod run;
pub mod surgery;
pub mod sweep;
pub mod tables;

use std::path::Path;

use vcut::model::{Model, ModelSpec, VideoDims};
use vcut::Scalar;

use crate::error::{CliError, CliResult};

pub fn load_spec(path: &Path) -> CliResult<ModelSpec> {
    let spec = ModelSpec::load(path).map_err(|e| match e {
        vcut::Error::Io(io) => CliError::io(path.display(), io),
        other => CliError::Argument(format!("{}: {other}", path.display())),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Loads weights from `weights`, or seeds fresh ones when it is absent.
pub fn load_model<T: Scalar>(spec: ModelSpec, weights: Option<&Path>, init_seed: u64) -> CliResult<Model<T>> {
    match weights {
        Some(dir) => Model::load_dir(spec, dir).map_err(|e| match e {
            vcut::Error::Argument(_) | vcut::Error::Config(_) | vcut::Error::Shape(_) => {
                CliError::Argument(format!("{}: {e}", dir.display()))
            }
            other => CliError::io(dir.display(), other),
        }),
        None => Ok(Model::init(spec, init_seed)?),
    }
}

pub fn video_dims(spec: &ModelSpec) -> VideoDims {
    VideoDims {
        batch: 1,
        channels: spec.latent_channels,
        frames: spec.frames,
        height: spec.height,
        width: spec.width,
    }
}

/// Seed offset for the conditional embedding drawn when none is supplied.
pub const EMBEDDING_SEED_SALT: u64 = 0x5eed;
