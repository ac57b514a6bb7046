use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use vcut::costmodel::{arch_from_model_spec, cost_report, svd_arch, ArchSpec, CostReport, MacConvention};
use vcut::model::{ImageEmbedding, LatentVideo, Model, ModelSpec};
use vcut::sampler::{run, SamplerConfig, SamplerMode};
use vcut::surgery::apply_vcut;
use vcut::Scalar;

use super::{video_dims, EMBEDDING_SEED_SALT};
use crate::error::{CliError, CliResult};
use crate::io::{append_csv, ensure_dir, to_json, write_json};

pub struct CostArgs {
    pub arch: Option<PathBuf>,
    pub frames: usize,
    pub steps: usize,
    pub cut_step: usize,
    pub baseline_latency: Option<f64>,
    pub convention: MacConvention,
    pub measure: bool,
}

#[derive(Debug, Serialize)]
pub struct CostRow {
    pub method: String,
    pub arch: String,
    pub frames: usize,
    pub steps: usize,
    pub cut_step: usize,
    pub convention: String,
    #[serde(rename = "macs_per_step_T")]
    pub macs_per_step_t: f64,
    #[serde(rename = "macs_T")]
    pub macs_t: f64,
    #[serde(rename = "params_B")]
    pub params_b: f64,
    pub latency_s: Option<f64>,
    #[serde(rename = "delta_macs_T")]
    pub delta_macs_t: f64,
    #[serde(rename = "delta_params_M")]
    pub delta_params_m: f64,
    pub latency_reduction_pct: Option<f64>,
}

/// Wall-clock sanity check on the toy model; never used for published-number claims.
#[derive(Serialize)]
struct Measured {
    model: &'static str,
    steps: usize,
    cut_step: usize,
    baseline_s: f64,
    vcut_s: f64,
    measured_ratio: f64,
    modeled_ratio: f64,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    cost: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    measured: Option<Measured>,
}

pub fn rows(r: &CostReport) -> Vec<CostRow> {
    let conv = r.convention.to_string();
    let side = |method: &str, cut: usize, s: &vcut::costmodel::CostSide, delta: bool| CostRow {
        method: method.into(),
        arch: s.arch.clone(),
        frames: r.frames,
        steps: r.steps,
        cut_step: cut,
        convention: conv.clone(),
        macs_per_step_t: s.macs_per_step as f64 / 1e12,
        macs_t: s.macs_total / 1e12,
        params_b: s.params as f64 / 1e9,
        latency_s: s.latency_s,
        delta_macs_t: if delta { r.delta_macs_total / 1e12 } else { 0.0 },
        delta_params_m: if delta { r.delta_params as f64 / 1e6 } else { 0.0 },
        latency_reduction_pct: if delta { r.latency_reduction.map(|x| 100.0 * x) } else { None },
    };
    vec![
        side("baseline", r.steps + 1, &r.baseline, false),
        side("vcut", r.cut_step, &r.vcut, true),
    ]
}

fn measure<T: Scalar>(steps: usize, cut_step: usize) -> CliResult<Measured> {
    let spec = ModelSpec::toy_svd();
    let model = Model::<T>::init(spec.clone(), 0)?;
    let (cut, _) = apply_vcut(&model)?;
    let e = ImageEmbedding::random(1, spec.embed_dim, EMBEDDING_SEED_SALT)?;
    let n = ImageEmbedding::null(1, spec.embed_dim)?;
    let never = SamplerConfig::never_cut(steps, 0);
    let cfg = SamplerConfig { cut_step, ..never.clone() };
    let z = LatentVideo::noise(video_dims(&spec), 0, cfg.sigma_max)?;
    let t0 = Instant::now();
    run(&model, &never, SamplerMode::Baseline, &e, &n, &z)?;
    let baseline_s = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    run(&cut, &cfg, SamplerMode::Vcut, &e, &n, &z)?;
    let vcut_s = t0.elapsed().as_secs_f64();
    let toy = cost_report(&arch_from_model_spec(&spec), spec.frames, steps, cut_step, MacConvention::Full, None)?;
    Ok(Measured {
        model: "toy-svd",
        steps,
        cut_step,
        baseline_s,
        vcut_s,
        measured_ratio: vcut_s / baseline_s,
        modeled_ratio: toy.vcut.macs_total / toy.baseline.macs_total,
    })
}

pub fn load_arch(path: Option<&Path>) -> CliResult<ArchSpec> {
    match path {
        None => Ok(svd_arch()),
        Some(p) => ArchSpec::load(p).map_err(|e| match e {
            vcut::Error::Io(io) => CliError::io(p.display(), io),
            other => CliError::Argument(format!("{}: {other}", p.display())),
        }),
    }
}

/// Prints the report; with `out`, also writes `cost_report.json` and appends to `cost.csv`.
pub fn cmd<T: Scalar>(args: &CostArgs, out: Option<&Path>) -> CliResult<String> {
    let arch = load_arch(args.arch.as_deref())?;
    let cost = cost_report(
        &arch,
        args.frames,
        args.steps,
        args.cut_step,
        args.convention,
        args.baseline_latency,
    )?;
    let measured = if args.measure {
        Some(measure::<T>(args.steps, args.cut_step)?)
    } else {
        None
    };
    let table = rows(&cost);
    let report = Report { cost, measured };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("cost_report.json"), &report)?;
        append_csv(&dir.join("cost.csv"), &table)?;
    }
    to_json(&report)
}
