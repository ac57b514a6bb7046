use std::path::{Path, PathBuf};

use serde::Serialize;
use vcut::metrics::{
    background_consistency, block_matching_flow, cosine_probe, dynamic_degree, motion_smoothness,
    subject_consistency, video_image_background_consistency, video_image_subject_consistency, Metric, Midpoint,
};
use vcut::numerics::Tensor;

use crate::error::{CliError, CliResult};
use crate::io::{append_csv, ensure_dir, read_tensor_f64, to_json, write_json};

pub struct MetricArgs {
    pub metric: Metric,
    pub inputs: Vec<PathBuf>,
    pub reference: Option<PathBuf>,
    pub theta: f64,
    pub lo: f64,
    pub hi: f64,
    pub from_frames: bool,
    pub block: usize,
    pub radius: usize,
}

#[derive(Serialize)]
struct Report {
    metric: &'static str,
    score: f64,
    inputs: Vec<String>,
    reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    range: Option<[f64; 2]>,
}

#[derive(Serialize)]
struct Row<'a> {
    metric: &'a str,
    score: f64,
    inputs: String,
    reference: String,
    theta: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
}

/// `[T, ...]` flattened to `[T, D]`.
fn as_rows(t: Tensor<f64>) -> CliResult<Tensor<f64>> {
    if t.rank() < 2 {
        return Err(CliError::Argument(format!("feature sequence must have rank >= 2, got {:?}", t.dims())));
    }
    let n = t.dims()[0];
    let d = t.len() / n.max(1);
    Ok(t.reshape(vec![n, d])?)
}

fn single(inputs: &[PathBuf], metric: Metric) -> CliResult<&Path> {
    match inputs {
        [one] => Ok(one),
        _ => Err(CliError::Argument(format!("{} takes exactly one --in file", metric.name()))),
    }
}

pub fn score(args: &MetricArgs) -> CliResult<f64> {
    let m = args.metric;
    if args.inputs.is_empty() {
        return Err(CliError::Argument("at least one --in file is required".into()));
    }
    if m.needs_reference() && args.reference.is_none() {
        return Err(CliError::Argument(format!("{} needs --ref", m.name())));
    }
    let reference = args.reference.as_deref().map(read_tensor_f64).transpose()?;
    let s = match m {
        Metric::SubjectConsistency | Metric::BgConsistency => {
            let seq = as_rows(read_tensor_f64(single(&args.inputs, m)?)?)?;
            if m == Metric::SubjectConsistency {
                subject_consistency(&seq)?
            } else {
                background_consistency(&seq)?
            }
        }
        Metric::ViSubject | Metric::ViBg => {
            let seq = as_rows(read_tensor_f64(single(&args.inputs, m)?)?)?;
            let r = reference.expect("checked above");
            if m == Metric::ViSubject {
                video_image_subject_consistency(&seq, &r)?
            } else {
                video_image_background_consistency(&seq, &r)?
            }
        }
        Metric::MotionSmoothness => {
            let frames = read_tensor_f64(single(&args.inputs, m)?)?;
            motion_smoothness(&frames, args.lo, args.hi, &Midpoint)?
        }
        Metric::DynamicDegree => {
            let mut flows = Vec::with_capacity(args.inputs.len());
            for p in &args.inputs {
                let t = read_tensor_f64(p)?;
                flows.push(if args.from_frames {
                    block_matching_flow(&t, args.block, args.radius)?
                } else {
                    t
                });
            }
            dynamic_degree(&flows, args.theta)?
        }
        Metric::Cosine => {
            let a = read_tensor_f64(single(&args.inputs, m)?)?;
            cosine_probe(&a, &reference.expect("checked above"))?
        }
    };
    Ok(s)
}

/// Prints the score as JSON; with `out`, writes `metric_<name>.json` and appends to `metrics.csv`.
pub fn cmd(args: &MetricArgs, out: Option<&Path>) -> CliResult<String> {
    let score = score(args)?;
    let m = args.metric;
    let theta = (m == Metric::DynamicDegree).then_some(args.theta);
    let range = (m == Metric::MotionSmoothness).then_some([args.lo, args.hi]);
    let report = Report {
        metric: m.name(),
        score,
        inputs: args.inputs.iter().map(|p| p.display().to_string()).collect(),
        reference: args.reference.as_ref().map(|p| p.display().to_string()),
        theta,
        range,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join(format!("metric_{}.json", m.name())), &report)?;
        let row = Row {
            metric: m.name(),
            score,
            inputs: report.inputs.join(";"),
            reference: report.reference.clone().unwrap_or_default(),
            theta,
            lo: range.map(|r| r[0]),
            hi: range.map(|r| r[1]),
        };
        append_csv(&dir.join("metrics.csv"), &[row])?;
    }
    to_json(&report)
}
