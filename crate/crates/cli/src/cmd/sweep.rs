use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vcut::costmodel::{arch_from_model_spec, count_macs, vcut_arch, MacConvention};
use vcut::model::{Model, ModelSpec};
use vcut::sampler::{CachePolicy, RunStats, SamplerConfig, SamplerMode, Trajectory};
use vcut::surgery::apply_vcut;
use vcut::{DType, Scalar};

use super::run::{execute, load_embedding};
use super::{load_model, load_spec};
use crate::error::{CliError, CliResult};
use crate::io::{digest, ensure_dir, to_json, write_csv, write_json, write_tensor};

fn default_steps() -> usize {
    25
}

fn default_cuts() -> Vec<usize> {
    vec![17]
}

/// Modes, cut steps and seeds to cross. Every mode reuses the same seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Model spec file; the `toy-svd` preset when absent.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    /// Weight directory; seeded from `init_seed` when absent.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub init_seed: u64,
    pub modes: Vec<SamplerMode>,
    /// Applied to vcut rows; baseline and modified rows never cut.
    #[serde(default = "default_cuts")]
    pub cut_steps: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Conditional embedding shared by all rows; per-seed random when absent.
    #[serde(default)]
    pub embedding: Option<PathBuf>,
    /// Scales the modeled latency ratio to seconds.
    #[serde(default)]
    pub baseline_latency: Option<f64>,
    /// Write each row's final latent to `finals/<run_id>.vten`.
    #[serde(default)]
    pub save_finals: bool,
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Argument(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.modes.is_empty() {
            return Err(CliError::Argument("plan has no modes".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Argument("plan has no seeds".into()));
        }
        if self.modes.contains(&SamplerMode::Vcut) && self.cut_steps.is_empty() {
            return Err(CliError::Argument("vcut rows need at least one cut step".into()));
        }
        for &c in &self.cut_steps {
            SamplerConfig {
                steps: self.steps,
                cut_step: c,
                ..SamplerConfig::default()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Row keys in output order: modes as listed, then cut steps, then seeds.
    pub fn rows(&self) -> Vec<(SamplerMode, usize, u64)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            let cuts = match mode {
                SamplerMode::Vcut => self.cut_steps.clone(),
                _ => vec![self.steps + 1],
            };
            for c in cuts {
                for &seed in &self.seeds {
                    out.push((mode, c, seed));
                }
            }
        }
        out
    }
}

/// One CSV line. No wall-clock fields, so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub mode: SamplerMode,
    pub steps: usize,
    pub cut_step: usize,
    pub seed: u64,
    pub status: String,
    pub forward_passes: Option<usize>,
    pub dual_steps: Option<usize>,
    pub single_steps: Option<usize>,
    pub cache_builds: Option<usize>,
    /// Modeled MACs of the whole run on the loaded model, in G.
    #[serde(rename = "macs_total_G")]
    pub macs_total_g: Option<f64>,
    /// Modeled latency relative to a never-cut baseline run.
    pub latency_rel: Option<f64>,
    pub latency_s: Option<f64>,
    pub final_digest: Option<String>,
    pub trajectory_digest: Option<String>,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    dtype: DType,
    plan: &'a ExperimentPlan,
    mac_convention: MacConvention,
    rows: &'a [SweepRow],
}

struct Costs {
    full_pass: f64,
    cut_pass: f64,
    cut_once: f64,
}

impl Costs {
    fn new(spec: &ModelSpec) -> CliResult<Self> {
        let mut original = spec.clone();
        original.vcut = false;
        let arch = arch_from_model_spec(&original);
        let cut = count_macs(&vcut_arch(&arch)?, spec.frames);
        Ok(Self {
            full_pass: count_macs(&arch, spec.frames).per_pass(MacConvention::Full) as f64,
            cut_pass: cut.per_pass(MacConvention::Full) as f64,
            cut_once: cut.once_per_run as f64,
        })
    }

    /// Folded maps are evaluated once per run with the cache, once per pass without.
    fn run_total(&self, mode: SamplerMode, passes: usize) -> f64 {
        let p = passes as f64;
        match mode {
            SamplerMode::Baseline => self.full_pass * p,
            SamplerMode::Modified => (self.cut_pass + self.cut_once) * p,
            SamplerMode::Vcut => self.cut_pass * p + self.cut_once,
        }
    }
}

fn run_id(mode: SamplerMode, cut: usize, seed: u64) -> String {
    format!("{mode}-c{cut}-s{seed}")
}

struct Ctx<'a, T> {
    plan: &'a ExperimentPlan,
    model: &'a Model<T>,
    cut: Option<&'a Model<T>>,
    costs: &'a Costs,
    finals: Option<&'a Path>,
}

fn one_row<T: Scalar>(ctx: &Ctx<'_, T>, mode: SamplerMode, cut_step: usize, seed: u64) -> SweepRow {
    let plan = ctx.plan;
    let mut row = SweepRow {
        run_id: run_id(mode, cut_step, seed),
        mode,
        steps: plan.steps,
        cut_step,
        seed,
        status: "ok".into(),
        forward_passes: None,
        dual_steps: None,
        single_steps: None,
        cache_builds: None,
        macs_total_g: None,
        latency_rel: None,
        latency_s: None,
        final_digest: None,
        trajectory_digest: None,
        error: None,
    };
    let attempt = || -> CliResult<(Trajectory<T>, RunStats)> {
        let config = SamplerConfig {
            steps: plan.steps,
            cut_step,
            seed,
            ..SamplerConfig::default()
        };
        let e = load_embedding::<T>(plan.embedding.as_deref(), &ctx.model.spec, seed)?;
        execute(ctx.model, ctx.cut, &config, mode, CachePolicy::ComputeOnce, &e)
    };
    let result = attempt().and_then(|(traj, stats)| {
        if let Some(dir) = ctx.finals {
            write_tensor(&dir.join(format!("{}.vten", row.run_id)), traj.last().tensor())?;
        }
        Ok((
            stats,
            digest([traj.last().tensor()])?,
            digest(traj.states.iter().map(|s| s.tensor()))?,
        ))
    });
    match result {
        Ok((stats, fin, all)) => {
            let total = ctx.costs.run_total(mode, stats.forward_passes);
            let base = ctx.costs.run_total(SamplerMode::Baseline, 2 * plan.steps);
            let rel = total / base;
            row.forward_passes = Some(stats.forward_passes);
            row.dual_steps = Some(stats.dual_steps);
            row.single_steps = Some(stats.single_steps);
            row.cache_builds = Some(stats.cache_builds);
            row.macs_total_g = Some(total / 1e9);
            row.latency_rel = Some(rel);
            row.latency_s = plan.baseline_latency.map(|l| l * rel);
            row.final_digest = Some(fin);
            row.trajectory_digest = Some(all);
        }
        Err(e) => {
            row.status = "error".into();
            row.error = Some(e.to_string());
        }
    }
    row
}

/// Runs every row on the current rayon pool and writes `sweep.csv` and
/// `sweep.json` in plan order. Failed rows are kept with their error.
pub fn cmd<T: Scalar>(plan: &ExperimentPlan, out: &Path) -> CliResult<(String, usize)> {
    plan.validate()?;
    let spec = match &plan.spec {
        Some(p) => load_spec(p)?,
        None => ModelSpec::toy_svd(),
    };
    let model = load_model::<T>(spec, plan.weights.as_deref(), plan.init_seed)?;
    let cut = if plan.modes.contains(&SamplerMode::Vcut) && !model.spec.vcut {
        Some(apply_vcut(&model)?.0)
    } else {
        None
    };
    let costs = Costs::new(&model.spec)?;
    ensure_dir(out)?;
    let finals = out.join("finals");
    if plan.save_finals {
        ensure_dir(&finals)?;
    }
    let ctx = Ctx {
        plan,
        model: &model,
        cut: cut.as_ref(),
        costs: &costs,
        finals: plan.save_finals.then_some(finals.as_path()),
    };
    let rows: Vec<SweepRow> = plan
        .rows()
        .into_par_iter()
        .map(|(mode, c, seed)| one_row(&ctx, mode, c, seed))
        .collect();
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    write_csv(&out.join("sweep.csv"), &rows)?;
    let report = SweepReport {
        dtype: T::DTYPE,
        plan,
        mac_convention: MacConvention::Full,
        rows: &rows,
    };
    write_json(&out.join("sweep.json"), &report)?;
    Ok((to_json(&report)?, failed))
}
