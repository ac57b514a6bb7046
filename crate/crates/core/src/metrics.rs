//! Video consistency and motion scores over precomputed features, frames and flows.
//!
//! All arithmetic runs in f64 regardless of the input scalar.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

fn rows_f64<T: Scalar>(seq: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    if seq.rank() != 2 {
        return Err(shape_err!("feature sequence must be [T, D], got {:?}", seq.dims()));
    }
    let d = seq.dims()[1];
    Ok(seq
        .data()
        .chunks_exact(d)
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect())
}

fn check_norm(v: &[f64]) -> Result<()> {
    let n = dot(v, v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(arg_err!("feature vector has zero or non-finite norm"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine as `<a, b> / sqrt(<a, a> <b, b>)`, so that `cos(a, a)` is exactly 1.
fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()
}

/// `1/(T-1) sum_{t=2..T} (cos(a, d_t) + cos(d_{t-1}, d_t)) / 2` with `a` the
/// first row or a reference vector.
fn consistency(rows: &[Vec<f64>], reference: Option<&[f64]>) -> Result<f64> {
    if rows.len() < 2 {
        return Err(arg_err!("consistency needs at least 2 frames, got {}", rows.len()));
    }
    for r in rows {
        check_norm(r)?;
    }
    let anchor = match reference {
        Some(r) => {
            if r.len() != rows[0].len() {
                return Err(shape_err!(
                    "reference has {} features, frames have {}",
                    r.len(),
                    rows[0].len()
                ));
            }
            check_norm(r)?;
            r
        }
        None => &rows[0],
    };
    let sum: f64 = (1..rows.len())
        .map(|t| 0.5 * (cos(anchor, &rows[t]) + cos(&rows[t - 1], &rows[t])))
        .sum();
    Ok(sum / (rows.len() - 1) as f64)
}

fn reference_vec<T: Scalar>(r: &Tensor<T>) -> Vec<f64> {
    r.data().iter().map(|v| v.as_f64()).collect()
}

/// Subject consistency over per-frame subject features `[T, D]`.
pub fn subject_consistency<T: Scalar>(seq: &Tensor<T>) -> Result<f64> {
    consistency(&rows_f64(seq)?, None)
}

/// Subject consistency anchored on the reference image feature.
pub fn video_image_subject_consistency<T: Scalar>(seq: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    consistency(&rows_f64(seq)?, Some(&reference_vec(reference)))
}

/// Same functional as [`subject_consistency`], applied to background features.
pub fn background_consistency<T: Scalar>(seq: &Tensor<T>) -> Result<f64> {
    consistency(&rows_f64(seq)?, None)
}

pub fn video_image_background_consistency<T: Scalar>(seq: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    consistency(&rows_f64(seq)?, Some(&reference_vec(reference)))
}

/// Estimates a held-out frame from its two neighbours.
pub trait Interpolator {
    fn interpolate(&self, prev: &[f64], next: &[f64]) -> Vec<f64>;
}

/// `(prev + next) / 2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Midpoint;

impl Interpolator for Midpoint {
    fn interpolate(&self, prev: &[f64], next: &[f64]) -> Vec<f64> {
        prev.iter().zip(next).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// `1 - MAE(interpolated odd frames, odd frames) / (hi - lo)`, clamped to `[0, 1]`.
///
/// `frames` is `[T, H, W, ch]` with odd `T >= 3`. The MAE is global over every
/// pixel of every odd frame.
pub fn motion_smoothness<T: Scalar>(frames: &Tensor<T>, lo: f64, hi: f64, interp: &dyn Interpolator) -> Result<f64> {
    if frames.rank() != 4 {
        return Err(shape_err!("frames must be [T, H, W, ch], got {:?}", frames.dims()));
    }
    let n = frames.dims()[0];
    if n < 3 || n.is_multiple_of(2) {
        return Err(arg_err!("motion smoothness needs an odd frame count >= 3, got {n}"));
    }
    if !(hi > lo) {
        return Err(arg_err!("value range [{lo}, {hi}] is empty"));
    }
    let per = frames.len() / n;
    let frame = |k: usize| -> Vec<f64> { frames.data()[k * per..(k + 1) * per].iter().map(|v| v.as_f64()).collect() };
    let mut abs = 0.0;
    let mut count = 0usize;
    for k in (1..n).step_by(2) {
        let est = interp.interpolate(&frame(k - 1), &frame(k + 1));
        if est.len() != per {
            return Err(shape_err!("interpolator returned {} values, expected {per}", est.len()));
        }
        abs += est.iter().zip(frame(k)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        count += per;
    }
    let mae = abs / count as f64;
    Ok((1.0 - mae / (hi - lo)).clamp(0.0, 1.0))
}

/// Fraction of pooled magnitudes averaged as the motion statistic.
pub const TOP_FRACTION: f64 = 0.05;

/// Static/dynamic threshold in pixels.
pub const DEFAULT_THETA: f64 = 1.0;

/// Mean of the largest 5% (at least one) of per-pixel flow magnitudes pooled
/// over all frame pairs of a `[T-1, H, W, 2]` flow field.
pub fn pooled_flow_magnitude<T: Scalar>(flow: &Tensor<T>) -> Result<f64> {
    if flow.rank() != 4 || flow.dims()[3] != 2 {
        return Err(shape_err!("flow must be [T-1, H, W, 2], got {:?}", flow.dims()));
    }
    let mut mags: Vec<f64> = flow
        .data()
        .chunks_exact(2)
        .map(|uv| {
            let (u, v) = (uv[0].as_f64(), uv[1].as_f64());
            (u * u + v * v).sqrt()
        })
        .collect();
    if mags.iter().any(|m| !m.is_finite()) {
        return Err(arg_err!("flow field has non-finite values"));
    }
    let k = ((mags.len() as f64 * TOP_FRACTION).ceil() as usize).max(1);
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags[..k].iter().sum::<f64>() / k as f64)
}

/// Share of videos whose pooled flow magnitude exceeds `theta`.
pub fn dynamic_degree<T: Scalar>(flows: &[Tensor<T>], theta: f64) -> Result<f64> {
    if flows.is_empty() {
        return Err(arg_err!("dynamic degree needs at least one video"));
    }
    let mut dynamic = 0usize;
    for f in flows {
        if pooled_flow_magnitude(f)? > theta {
            dynamic += 1;
        }
    }
    Ok(dynamic as f64 / flows.len() as f64)
}

/// Exhaustive block-matching flow between consecutive frames of `[T, H, W, ch]`.
///
/// Every pixel of a `block`-sized tile gets the tile's displacement, chosen by
/// minimum sum of absolute differences within `radius`. Ties go to the
/// shorter displacement, then to scan order. Out-of-frame candidates are skipped.
pub fn block_matching_flow<T: Scalar>(frames: &Tensor<T>, block: usize, radius: usize) -> Result<Tensor<f64>> {
    if frames.rank() != 4 || frames.dims()[0] < 2 {
        return Err(shape_err!("frames must be [T >= 2, H, W, ch], got {:?}", frames.dims()));
    }
    if block == 0 {
        return Err(arg_err!("block size must be positive"));
    }
    let [n, h, w, ch] = [frames.dims()[0], frames.dims()[1], frames.dims()[2], frames.dims()[3]];
    let px = |k: usize, y: usize, x: usize, c: usize| frames.data()[((k * h + y) * w + x) * ch + c].as_f64();
    let r = radius as isize;
    let mut out = vec![0.0; (n - 1) * h * w * 2];
    for k in 0..n - 1 {
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let (ey, ex) = ((by + block).min(h), (bx + block).min(w));
                let mut best: Option<(f64, isize, isize)> = None;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if by as isize + dy < 0
                            || bx as isize + dx < 0
                            || ey as isize + dy > h as isize
                            || ex as isize + dx > w as isize
                        {
                            continue;
                        }
                        let mut sad = 0.0;
                        for y in by..ey {
                            for x in bx..ex {
                                let (ty, tx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                                for c in 0..ch {
                                    sad += (px(k, y, x, c) - px(k + 1, ty, tx, c)).abs();
                                }
                            }
                        }
                        let better = match best {
                            None => true,
                            Some((s, py, pxx)) => sad < s || (sad == s && dy * dy + dx * dx < py * py + pxx * pxx),
                        };
                        if better {
                            best = Some((sad, dy, dx));
                        }
                    }
                }
                let (_, dy, dx) = best.expect("zero displacement is always a candidate");
                for y in by..ey {
                    for x in bx..ex {
                        let o = ((k * h + y) * w + x) * 2;
                        out[o] = dx as f64;
                        out[o + 1] = dy as f64;
                    }
                }
            }
        }
    }
    Tensor::new(vec![n - 1, h, w, 2], out)
}

/// Cosine similarity of two feature vectors.
pub fn cosine_probe<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err!("vectors differ in length: {} vs {}", a.len(), b.len()));
    }
    let (a, b) = (reference_vec(a), reference_vec(b));
    check_norm(&a)?;
    check_norm(&b)?;
    Ok(cos(&a, &b))
}

/// Metric names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    SubjectConsistency,
    ViSubject,
    BgConsistency,
    ViBg,
    MotionSmoothness,
    DynamicDegree,
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Self::SubjectConsistency,
        Self::ViSubject,
        Self::BgConsistency,
        Self::ViBg,
        Self::MotionSmoothness,
        Self::DynamicDegree,
        Self::Cosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SubjectConsistency => "subject-consistency",
            Self::ViSubject => "vi-subject",
            Self::BgConsistency => "bg-consistency",
            Self::ViBg => "vi-bg",
            Self::MotionSmoothness => "motion-smoothness",
            Self::DynamicDegree => "dynamic-degree",
            Self::Cosine => "cosine",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, Self::ViSubject | Self::ViBg | Self::Cosine)
    }
}

impl std::str::FromStr for Metric {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| arg_err!("unknown metric {s:?}"))
    }
}
