//! Published SVD-family cost figures and the side-by-side tables built on them.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{count_macs, count_params, drop_tca_arch, latency_model, svd_arch, vcut_arch, vcut_totals, MacConvention};

pub const STEPS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedCut {
    pub cut_step: usize,
    /// Total MACs per video, in T.
    pub total: f64,
    pub latency_s: f64,
    /// Latency reduction in percent, as printed.
    pub reduction_pct: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedVariant {
    pub name: &'static str,
    pub frames: usize,
    /// Guided-step MACs in T, before and after surgery.
    pub per_step: f64,
    pub per_step_cut: f64,
    /// Parameters in billions, before and after surgery.
    pub params: f64,
    pub params_cut: f64,
    pub param_delta_m: f64,
    pub total: f64,
    pub latency_s: f64,
    pub cuts: [PublishedCut; 2],
}

pub const VARIANTS: [PublishedVariant; 3] = [
    PublishedVariant {
        name: "SVD",
        frames: 14,
        per_step: 36.11,
        per_step_cut: 35.1,
        params: 1.521,
        params_cut: 1.474,
        param_delta_m: 47.0,
        total: 903.0,
        latency_s: 68.4,
        cuts: [
            PublishedCut { cut_step: 17, total: 719.0, latency_s: 54.7, reduction_pct: 20.0 },
            PublishedCut { cut_step: 20, total: 772.0, latency_s: 58.2, reduction_pct: 15.0 },
        ],
    },
    PublishedVariant {
        name: "SVD-XT",
        frames: 25,
        per_step: 64.41,
        per_step_cut: 62.86,
        params: 1.524,
        params_cut: 1.474,
        param_delta_m: 50.0,
        total: 1610.0,
        latency_s: 120.6,
        cuts: [
            PublishedCut { cut_step: 17, total: 1288.0, latency_s: 97.3, reduction_pct: 19.0 },
            PublishedCut { cut_step: 20, total: 1382.0, latency_s: 103.2, reduction_pct: 14.0 },
        ],
    },
    PublishedVariant {
        name: "SVD-XT.1",
        frames: 25,
        per_step: 64.41,
        per_step_cut: 62.86,
        params: 1.524,
        params_cut: 1.474,
        param_delta_m: 50.0,
        total: 1610.0,
        latency_s: 119.8,
        cuts: [
            PublishedCut { cut_step: 17, total: 1288.0, latency_s: 97.1, reduction_pct: 19.0 },
            PublishedCut { cut_step: 20, total: 1382.0, latency_s: 102.8, reduction_pct: 14.0 },
        ],
    },
];

fn rel(ours: f64, published: f64) -> f64 {
    (ours - published) / published
}

/// Per-step cost of one architecture variant next to the published value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerStepRow {
    pub model: String,
    pub frames: usize,
    /// `baseline`, `tca-removed` or `vcut`.
    pub variant: String,
    pub tca: bool,
    pub sca: bool,
    pub macs_per_step_t: f64,
    pub published_macs_per_step_t: f64,
    pub macs_rel_err: f64,
    pub params_b: f64,
    pub published_params_b: f64,
    pub params_rel_err: f64,
    pub param_delta_m: f64,
    pub published_param_delta_m: f64,
    pub param_delta_rel_err: f64,
    pub macs_delta_t: f64,
    pub published_macs_delta_t: f64,
}

/// Guided-step MACs and parameters of the bundled inventory: baseline, TCA
/// deleted only, and the full surgery. Both cut rows are set against the
/// single published post-surgery figure.
pub fn per_step_rows(convention: MacConvention) -> Result<Vec<PerStepRow>> {
    let arch = svd_arch();
    let variants = [
        ("baseline", true, true, arch.clone()),
        ("tca-removed", false, true, drop_tca_arch(&arch)),
        ("vcut", false, false, vcut_arch(&arch)?),
    ];
    let base_params = count_params(&arch) as f64;
    let mut rows = Vec::new();
    for p in &VARIANTS {
        let base_step = 2.0 * count_macs(&arch, p.frames).per_pass(convention) as f64 / 1e12;
        for (name, tca, sca, a) in &variants {
            let step = 2.0 * count_macs(a, p.frames).per_pass(convention) as f64 / 1e12;
            let params = count_params(a) as f64;
            let cut = *name != "baseline";
            let (pub_step, pub_params) = if cut { (p.per_step_cut, p.params_cut) } else { (p.per_step, p.params) };
            let (pub_delta, pub_mdelta) = if cut {
                (p.param_delta_m, p.per_step - p.per_step_cut)
            } else {
                (0.0, 0.0)
            };
            let delta_m = (base_params - params) / 1e6;
            rows.push(PerStepRow {
                model: p.name.into(),
                frames: p.frames,
                variant: name.to_string(),
                tca: *tca,
                sca: *sca,
                macs_per_step_t: step,
                published_macs_per_step_t: pub_step,
                macs_rel_err: rel(step, pub_step),
                params_b: params / 1e9,
                published_params_b: pub_params,
                params_rel_err: rel(params / 1e9, pub_params),
                param_delta_m: delta_m,
                published_param_delta_m: pub_delta,
                param_delta_rel_err: if cut { rel(delta_m, pub_delta) } else { 0.0 },
                macs_delta_t: base_step - step,
                published_macs_delta_t: pub_mdelta,
            });
        }
    }
    Ok(rows)
}

/// Per-video totals and modeled latency from the published per-step values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalsRow {
    pub model: String,
    pub cut_step: usize,
    pub per_step_t: f64,
    pub total_t: f64,
    pub published_total_t: f64,
    pub total_abs_err_t: f64,
    pub latency_s: f64,
    pub published_latency_s: f64,
    pub reduction_pct: f64,
    pub published_reduction_pct: f64,
    /// Same total from the bundled inventory (full surgery, op-counter MACs).
    pub inventory_total_t: f64,
    pub inventory_reduction_pct: f64,
}

pub fn totals_rows() -> Result<Vec<TotalsRow>> {
    let arch = svd_arch();
    let cut_arch = vcut_arch(&arch)?;
    let mut rows = Vec::new();
    for p in &VARIANTS {
        let inv_base = 2.0 * count_macs(&arch, p.frames).per_pass(MacConvention::OpCounter) as f64 / 1e12;
        let inv_cut_macs = count_macs(&cut_arch, p.frames);
        let inv_cut = 2.0 * inv_cut_macs.per_pass(MacConvention::OpCounter) as f64 / 1e12;
        let inv_base_total = vcut_totals(inv_base, STEPS, STEPS + 1)?;
        let base_total = vcut_totals(p.per_step, STEPS, STEPS + 1)?;
        rows.push(TotalsRow {
            model: p.name.into(),
            cut_step: STEPS + 1,
            per_step_t: p.per_step,
            total_t: base_total,
            published_total_t: p.total,
            total_abs_err_t: (base_total - p.total).abs(),
            latency_s: p.latency_s,
            published_latency_s: p.latency_s,
            reduction_pct: 0.0,
            published_reduction_pct: 0.0,
            inventory_total_t: inv_base_total,
            inventory_reduction_pct: 0.0,
        });
        for c in &p.cuts {
            let total = vcut_totals(p.per_step_cut, STEPS, c.cut_step)?;
            let latency = latency_model(total, base_total, p.latency_s)?;
            let inv_total =
                vcut_totals(inv_cut, STEPS, c.cut_step)? + inv_cut_macs.once_per_run as f64 / 1e12;
            rows.push(TotalsRow {
                model: p.name.into(),
                cut_step: c.cut_step,
                per_step_t: p.per_step_cut,
                total_t: total,
                published_total_t: c.total,
                total_abs_err_t: (total - c.total).abs(),
                latency_s: latency,
                published_latency_s: c.latency_s,
                reduction_pct: 100.0 * (1.0 - latency / p.latency_s),
                published_reduction_pct: c.reduction_pct,
                inventory_total_t: inv_total,
                inventory_reduction_pct: 100.0 * (1.0 - inv_total / inv_base_total),
            });
        }
    }
    Ok(rows)
}
