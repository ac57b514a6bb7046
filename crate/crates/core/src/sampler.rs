//! Two-stage guided sampler.
//!
//! Steps `1..c` run classifier-free guidance with two forward passes each.
//! From step `c` onward a single pass conditions every cross-attention site on
//! the average of its conditional and unconditional outputs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::model::latent::{ImageEmbedding, LatentVideo};
use crate::model::unet::{forward_unet, Conditioning, ForwardMode, Model};
use crate::scalar::Scalar;
use crate::surgery::{build_cache, CacheSlot, FoldedConditioner};

/// Per-frame guidance weights `lambda_k = 1 + 2k / (f - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    lambdas: Vec<f64>,
}

impl GuidanceSchedule {
    pub fn linear(frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(arg_err!("guidance schedule needs at least one frame"));
        }
        let lambdas = if frames == 1 {
            vec![1.0]
        } else {
            (0..frames)
                .map(|k| 1.0 + 2.0 * k as f64 / (frames - 1) as f64)
                .collect()
        };
        Ok(Self { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn frames(&self) -> usize {
        self.lambdas.len()
    }
}

/// `eps_null + lambda_k (eps_cond - eps_null)`, frame by frame.
pub fn cfg_combine<T: Scalar>(
    eps_null: &LatentVideo<T>,
    eps_cond: &LatentVideo<T>,
    sched: &GuidanceSchedule,
) -> Result<LatentVideo<T>> {
    let d = eps_null.dims();
    if eps_cond.dims() != d {
        return Err(shape_err!(
            "guidance operands differ: {:?} vs {:?}",
            eps_null.tensor().dims(),
            eps_cond.tensor().dims()
        ));
    }
    if sched.frames() != d.frames {
        return Err(shape_err!(
            "schedule covers {} frames, latent has {}",
            sched.frames(),
            d.frames
        ));
    }
    let hw = d.positions();
    let lambdas: Vec<T> = sched.lambdas.iter().map(|&l| T::lit(l)).collect();
    let (n, c) = (eps_null.tensor().data(), eps_cond.tensor().data());
    let mut out = Vec::with_capacity(n.len());
    for (i, (&a, &b)) in n.iter().zip(c).enumerate() {
        let k = (i / hw) % d.frames;
        out.push(a + lambdas[k] * (b - a));
    }
    LatentVideo::new(crate::numerics::Tensor::new(d.to_vec(), out)?)
}

/// Which denoiser variant drives the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Original attention everywhere.
    Baseline,
    /// TCA removed, SCA folded and re-evaluated on every pass.
    Modified,
    /// TCA removed, SCA outputs read from the conditioner cache.
    Vcut,
}

impl SamplerMode {
    fn forward_mode(self) -> ForwardMode {
        match self {
            Self::Baseline => ForwardMode::Baseline,
            Self::Modified => ForwardMode::Modified,
            Self::Vcut => ForwardMode::VcutCached,
        }
    }
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "modified" => Ok(Self::Modified),
            "vcut" => Ok(Self::Vcut),
            other => Err(arg_err!("unknown mode {other:?} (baseline, modified, vcut)")),
        }
    }
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Modified => "modified",
            Self::Vcut => "vcut",
        })
    }
}

/// When the conditioner cache is built in vcut mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    ComputeOnce,
    RecomputeEveryStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    /// First single-pass step, 1-indexed. `steps + 1` never cuts.
    pub cut_step: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            cut_step: 17,
            sigma_max: 700.0,
            sigma_min: 0.002,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn never_cut(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            cut_step: steps + 1,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(arg_err!("steps must be positive"));
        }
        if self.cut_step == 0 || self.cut_step > self.steps + 1 {
            return Err(arg_err!(
                "cut step {} outside 1..={}",
                self.cut_step,
                self.steps + 1
            ));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) || !self.sigma_max.is_finite() {
            return Err(arg_err!(
                "sigma schedule needs 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min,
                self.sigma_max
            ));
        }
        Ok(())
    }

    /// `steps` log-linearly spaced noise levels from `sigma_max` to `sigma_min`, then 0.
    pub fn sigmas(&self) -> Vec<f64> {
        let n = self.steps;
        let (hi, lo) = (self.sigma_max.ln(), self.sigma_min.ln());
        let mut s: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    self.sigma_max
                } else {
                    (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();
        s.push(0.0);
        s
    }

    pub fn forward_passes(&self) -> usize {
        pass_count(self.steps, self.cut_step)
    }

    /// Whether 1-indexed `step` runs guided with two passes.
    pub fn is_dual(&self, step: usize) -> bool {
        step < self.cut_step
    }
}

/// `2(c - 1) + (T - c + 1)`.
pub fn pass_count(steps: usize, cut_step: usize) -> usize {
    2 * (cut_step - 1) + (steps + 1 - cut_step)
}

/// Timestep value fed to the denoiser at noise level `sigma`.
pub fn timestep_of(sigma: f64) -> f64 {
    0.25 * sigma.ln()
}

/// States `z_T .. z_0` and the combined noise prediction of every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<LatentVideo<T>>,
    pub eps: Vec<LatentVideo<T>>,
}

/// First point where two trajectories disagree bitwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// 1-indexed step whose output state differs; 0 means the initial state.
    pub step: usize,
    pub differing_elements: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.eps.len()
    }

    pub fn last(&self) -> &LatentVideo<T> {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Compares states `0..=upto` (all when `None`).
    pub fn first_divergence(&self, other: &Self, upto: Option<usize>) -> Option<Divergence> {
        let n = self.states.len().min(other.states.len());
        let n = upto.map_or(n, |u| n.min(u + 1));
        for i in 0..n {
            let count = self.states[i].tensor().bitwise_diff_count(other.states[i].tensor());
            if count > 0 {
                return Some(Divergence {
                    step: i,
                    differing_elements: count,
                });
            }
        }
        if upto.is_none() && self.states.len() != other.states.len() {
            return Some(Divergence {
                step: n,
                differing_elements: usize::MAX,
            });
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mode: SamplerMode,
    pub steps: usize,
    pub cut_step: usize,
    pub seed: u64,
    pub forward_passes: usize,
    pub dual_steps: usize,
    pub single_steps: usize,
    pub cache_builds: usize,
    /// Folded-map evaluations spent on conditioner caches.
    pub folded_evaluations: usize,
    pub step_seconds: Vec<f64>,
    pub total_seconds: f64,
}

/// Embedding change applied from a given step on; used as a checker control.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Perturbation {
    pub from_step: usize,
    pub delta: f64,
}

pub fn run<T: Scalar>(
    model: &Model<T>,
    config: &SamplerConfig,
    mode: SamplerMode,
    e_cond: &ImageEmbedding<T>,
    e_null: &ImageEmbedding<T>,
    z_init: &LatentVideo<T>,
) -> Result<(Trajectory<T>, RunStats)> {
    run_with(model, config, mode, CachePolicy::ComputeOnce, e_cond, e_null, z_init, None)
}

pub fn run_with_policy<T: Scalar>(
    model: &Model<T>,
    config: &SamplerConfig,
    mode: SamplerMode,
    policy: CachePolicy,
    e_cond: &ImageEmbedding<T>,
    e_null: &ImageEmbedding<T>,
    z_init: &LatentVideo<T>,
) -> Result<(Trajectory<T>, RunStats)> {
    run_with(model, config, mode, policy, e_cond, e_null, z_init, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_with<T: Scalar>(
    model: &Model<T>,
    config: &SamplerConfig,
    mode: SamplerMode,
    policy: CachePolicy,
    e_cond: &ImageEmbedding<T>,
    e_null: &ImageEmbedding<T>,
    z_init: &LatentVideo<T>,
    perturb: Option<Perturbation>,
) -> Result<(Trajectory<T>, RunStats)> {
    config.validate()?;
    if mode == SamplerMode::Baseline && model.spec.vcut {
        return Err(Error::State("baseline sampling needs the original model".into()));
    }
    if z_init.dims().frames != model.spec.frames {
        return Err(shape_err!(
            "latent has {} frames, model expects {}",
            z_init.dims().frames,
            model.spec.frames
        ));
    }
    let sched = GuidanceSchedule::linear(model.spec.frames)?;
    let sigmas = config.sigmas();
    let fmode = mode.forward_mode();
    let started = Instant::now();

    let folded = if mode == SamplerMode::Vcut {
        Some(model.folded_sites()?)
    } else {
        None
    };
    let mut cache: Option<FoldedConditioner<T>> = None;
    let mut stats = RunStats {
        mode,
        steps: config.steps,
        cut_step: config.cut_step,
        seed: config.seed,
        forward_passes: 0,
        dual_steps: 0,
        single_steps: 0,
        cache_builds: 0,
        folded_evaluations: 0,
        step_seconds: Vec::with_capacity(config.steps),
        total_seconds: 0.0,
    };

    let mut z = z_init.clone();
    let mut states = vec![z.clone()];
    let mut eps_all = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let t0 = Instant::now();
        let cond_emb = match perturb {
            Some(p) if step >= p.from_step => {
                let d = T::lit(p.delta);
                ImageEmbedding::new(e_cond.tensor().map(|v| v + d), e_cond.kind())?
            }
            _ => e_cond.clone(),
        };
        if let Some(folded) = &folded {
            if cache.is_none() || policy == CachePolicy::RecomputeEveryStep {
                let built = build_cache(folded, &cond_emb, e_null)?;
                stats.cache_builds += 1;
                stats.folded_evaluations += built.evaluations;
                cache = Some(built);
            }
        }
        let sigma = sigmas[step - 1];
        let c_in = T::lit(1.0 / (sigma * sigma + 1.0).sqrt());
        let x = LatentVideo::new(z.tensor().scale(c_in))?;
        let t = timestep_of(sigma);
        let conditioning = |slot: CacheSlot| -> Result<Conditioning<'_, T>> {
            Ok(match (&cache, slot) {
                (Some(cache), slot) => Conditioning::Cached { cache, slot },
                (None, CacheSlot::Cond) => Conditioning::Embedding(&cond_emb),
                (None, CacheSlot::Null) => Conditioning::Embedding(e_null),
                (None, CacheSlot::Mean) => Conditioning::Averaged {
                    cond: &cond_emb,
                    null: e_null,
                },
            })
        };
        if mode == SamplerMode::Vcut && cache.is_none() {
            return Err(Error::State("vcut sampling without a conditioner cache".into()));
        }
        let eps = if config.is_dual(step) {
            let eps_cond = forward_unet(model, &x, t, conditioning(CacheSlot::Cond)?, fmode)?;
            let eps_null = forward_unet(model, &x, t, conditioning(CacheSlot::Null)?, fmode)?;
            stats.forward_passes += 2;
            stats.dual_steps += 1;
            cfg_combine(&eps_null, &eps_cond, &sched)?
        } else {
            stats.forward_passes += 1;
            stats.single_steps += 1;
            forward_unet(model, &x, t, conditioning(CacheSlot::Mean)?, fmode)?
        };
        let dt = T::lit(sigmas[step] - sigma);
        z = LatentVideo::new(z.tensor().zip_map(eps.tensor(), |a, e| a + dt * e)?)?;
        if !z.tensor().all_finite() {
            return Err(Error::Numeric(format!("non-finite latent after step {step}")));
        }
        states.push(z.clone());
        eps_all.push(eps);
        stats.step_seconds.push(t0.elapsed().as_secs_f64());
    }
    stats.total_seconds = started.elapsed().as_secs_f64();
    debug_assert_eq!(stats.forward_passes, config.forward_passes());
    Ok((Trajectory { states, eps: eps_all }, stats))
}

/// Outcome of comparing compute-once against recompute-every-step caching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheCheckReport {
    pub seeds: Vec<u64>,
    pub identical: bool,
    /// Per seed: first divergence, if any.
    pub divergences: Vec<Option<Divergence>>,
    pub cache_builds_once: usize,
    pub cache_builds_every_step: usize,
}

/// Runs the vcut sampler under both cache policies for each seed and compares
/// trajectories bitwise. With `negative_control` the recomputing run sees a
/// perturbed embedding from step 2, so a working checker must report step 2.
pub fn cache_policy_check<T: Scalar>(
    model: &Model<T>,
    config: &SamplerConfig,
    seeds: &[u64],
    negative_control: bool,
) -> Result<CacheCheckReport> {
    if seeds.is_empty() {
        return Err(arg_err!("at least one seed is required"));
    }
    let spec = &model.spec;
    let dims = crate::model::latent::VideoDims {
        batch: 1,
        channels: spec.latent_channels,
        frames: spec.frames,
        height: spec.height,
        width: spec.width,
    };
    let mut report = CacheCheckReport {
        seeds: seeds.to_vec(),
        identical: true,
        divergences: Vec::new(),
        cache_builds_once: 0,
        cache_builds_every_step: 0,
    };
    for &seed in seeds {
        let cfg = SamplerConfig { seed, ..config.clone() };
        let e_cond = ImageEmbedding::random(1, spec.embed_dim, seed ^ 0x5eed)?;
        let e_null = ImageEmbedding::null(1, spec.embed_dim)?;
        let z = LatentVideo::noise(dims, seed, cfg.sigma_max)?;
        let perturb = negative_control.then_some(Perturbation {
            from_step: 2,
            delta: 0.25,
        });
        let (a, sa) = run_with(model, &cfg, SamplerMode::Vcut, CachePolicy::ComputeOnce, &e_cond, &e_null, &z, None)?;
        let (b, sb) = run_with(
            model,
            &cfg,
            SamplerMode::Vcut,
            CachePolicy::RecomputeEveryStep,
            &e_cond,
            &e_null,
            &z,
            perturb,
        )?;
        report.cache_builds_once += sa.cache_builds;
        report.cache_builds_every_step += sb.cache_builds;
        let div = a.first_divergence(&b, None);
        report.identical &= div.is_none();
        report.divergences.push(div);
    }
    Ok(report)
}
