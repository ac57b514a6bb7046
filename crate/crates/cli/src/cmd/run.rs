use std::path::{Path, PathBuf};

use serde::Serialize;
use vcut::model::{ImageEmbedding, LatentVideo, Model, ModelSpec};
use vcut::sampler::{run_with_policy, CachePolicy, RunStats, SamplerConfig, SamplerMode, Trajectory};
use vcut::surgery::apply_vcut;
use vcut::{DType, Scalar};

use super::{load_model, video_dims, EMBEDDING_SEED_SALT};
use crate::error::{CliError, CliResult};
use crate::io::{digest, ensure_dir, read_tensor, to_json, write_json, write_tensor};

pub struct RunArgs {
    pub mode: SamplerMode,
    pub steps: usize,
    pub cut_step: Option<usize>,
    pub seed: u64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub cache_policy: CachePolicy,
    pub embedding: Option<PathBuf>,
    pub init_seed: u64,
    pub save_eps: bool,
}

/// Default cut: 17 for vcut, none for the other modes.
pub fn resolve_cut(mode: SamplerMode, steps: usize, cut_step: Option<usize>) -> usize {
    cut_step.unwrap_or(match mode {
        SamplerMode::Vcut => 17.min(steps + 1),
        _ => steps + 1,
    })
}

pub fn load_embedding<T: Scalar>(path: Option<&Path>, spec: &ModelSpec, seed: u64) -> CliResult<ImageEmbedding<T>> {
    let Some(path) = path else {
        return Ok(ImageEmbedding::random(1, spec.embed_dim, seed ^ EMBEDDING_SEED_SALT)?);
    };
    let t = read_tensor::<T>(path)?;
    let t = match t.rank() {
        1 => t.reshape(vec![1, 1, spec.embed_dim]),
        2 => {
            let b = t.dims()[0];
            t.reshape(vec![b, 1, spec.embed_dim])
        }
        _ => Ok(t),
    }
    .map_err(|e| CliError::Argument(format!("{}: {e}", path.display())))?;
    ImageEmbedding::conditional(t).map_err(|e| CliError::Argument(format!("{}: {e}", path.display())))
}

/// Runs one sampler configuration. Vcut runs on an original model go through
/// in-memory surgery first; the flag in the result says so.
pub fn execute<T: Scalar>(
    model: &Model<T>,
    cut: Option<&Model<T>>,
    config: &SamplerConfig,
    mode: SamplerMode,
    policy: CachePolicy,
    e_cond: &ImageEmbedding<T>,
) -> CliResult<(Trajectory<T>, RunStats)> {
    let spec = &model.spec;
    let e_null = ImageEmbedding::null(e_cond.batch(), spec.embed_dim)?;
    if e_cond.dim() != spec.embed_dim {
        return Err(CliError::Argument(format!(
            "embedding has {} features, model expects {}",
            e_cond.dim(),
            spec.embed_dim
        )));
    }
    let mut dims = video_dims(spec);
    dims.batch = e_cond.batch();
    let z = LatentVideo::noise(dims, config.seed, config.sigma_max)?;
    let target = match (mode, cut) {
        (SamplerMode::Vcut, Some(c)) => c,
        _ => model,
    };
    Ok(run_with_policy(target, config, mode, policy, e_cond, &e_null, &z)?)
}

#[derive(Serialize)]
struct RunReport {
    dtype: DType,
    config: SamplerConfig,
    cache_policy: CachePolicy,
    /// True when this run folded an original model in memory.
    surgery_applied: bool,
    embedding: String,
    final_digest: String,
    trajectory_digest: String,
    stats: RunStats,
}

/// Writes `states/z_NNN.vten` (000 is the initial noise), optionally
/// `eps/eps_NNN.vten`, the embedding used, and `run_stats.json`.
pub fn cmd<T: Scalar>(spec: ModelSpec, weights: Option<&Path>, args: &RunArgs, out: &Path) -> CliResult<String> {
    let model = load_model::<T>(spec, weights, args.init_seed)?;
    let config = SamplerConfig {
        steps: args.steps,
        cut_step: resolve_cut(args.mode, args.steps, args.cut_step),
        sigma_max: args.sigma_max,
        sigma_min: args.sigma_min,
        seed: args.seed,
    };
    config.validate()?;
    let needs_surgery = args.mode == SamplerMode::Vcut && !model.spec.vcut;
    let cut = if needs_surgery { Some(apply_vcut(&model)?.0) } else { None };
    let e_cond = load_embedding::<T>(args.embedding.as_deref(), &model.spec, args.seed)?;
    let (traj, stats) = execute(&model, cut.as_ref(), &config, args.mode, args.cache_policy, &e_cond)?;

    let states_dir = out.join("states");
    ensure_dir(&states_dir)?;
    for (i, s) in traj.states.iter().enumerate() {
        write_tensor(&states_dir.join(format!("z_{i:03}.vten")), s.tensor())?;
    }
    if args.save_eps {
        let eps_dir = out.join("eps");
        ensure_dir(&eps_dir)?;
        for (i, e) in traj.eps.iter().enumerate() {
            write_tensor(&eps_dir.join(format!("eps_{:03}.vten", i + 1)), e.tensor())?;
        }
    }
    write_tensor(&out.join("embedding.vten"), e_cond.tensor())?;
    let report = RunReport {
        dtype: T::DTYPE,
        config,
        cache_policy: args.cache_policy,
        surgery_applied: needs_surgery,
        embedding: match &args.embedding {
            Some(p) => p.display().to_string(),
            None => format!("random(seed ^ {EMBEDDING_SEED_SALT:#x})"),
        },
        final_digest: digest([traj.last().tensor()])?,
        trajectory_digest: digest(traj.states.iter().map(|s| s.tensor()))?,
        stats,
    };
    write_json(&out.join("run_stats.json"), &report)?;
    to_json(&report)
}
