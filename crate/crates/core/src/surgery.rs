//! VCUT graph surgery: temporal cross-attention is deleted, each spatial
//! cross-attention site collapses into one affine map of the pooled embedding,
//! and the per-site outputs for the conditional and null embeddings are cached
//! once per run.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::attention::{AttentionKind, AttentionSite};
use crate::model::latent::ImageEmbedding;
use crate::model::unet::{CrossSlot, Model};
use crate::numerics::{affine, matmul, Tensor};
use crate::scalar::Scalar;

/// Single affine map `e . weight + bias` replacing `o(v(e))`.
///
/// `weight = W_V . W_O` (`[D, c]`), `bias = b_V . W_O + b_O` (`[c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedAffine<T> {
    pub site: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> FoldedAffine<T> {
    pub fn source_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Evaluates the map on a pooled embedding `[b, 1, D]`, giving `[b, c]`.
    pub fn apply(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        if e.rank() != 3 || e.dims()[1] != 1 || e.dims()[2] != self.source_dim() {
            return Err(shape_err!(
                "folded map of {} reads [b, 1, {}], got {:?}",
                self.site,
                self.source_dim(),
                e.dims()
            ));
        }
        let b = e.dims()[0];
        let flat = e.clone().reshape(vec![b, self.source_dim()])?;
        affine(&flat, &self.weight, &self.bias)
    }
}

/// Composes the value and output projections of a cross-attention site.
pub(crate) fn fold_cross<T: Scalar>(site: &AttentionSite<T>, id: &str) -> Result<FoldedAffine<T>> {
    if !site.kind.is_cross() {
        return Err(Error::Transform(format!("{id}: cannot fold {} (not cross-attention)", site.kind)));
    }
    site.validate()?;
    let weight = matmul(&site.v.weight, &site.o.weight)?;
    let c = site.channels();
    let bv = site.v.bias.clone().reshape(vec![1, c])?;
    let bias = affine(&bv, &site.o.weight, &site.o.bias)?.reshape(vec![c])?;
    Ok(FoldedAffine {
        site: id.to_string(),
        weight,
        bias,
    })
}

/// Folds a spatial cross-attention site. Temporal sites are deleted, never folded.
pub fn fold_site<T: Scalar>(site: &AttentionSite<T>, id: &str) -> Result<FoldedAffine<T>> {
    if site.kind != AttentionKind::Sca {
        return Err(Error::Transform(format!(
            "{id}: only SCA sites are folded, got {}",
            site.kind
        )));
    }
    fold_cross(site, id)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryReport {
    pub sites_removed: Vec<String>,
    pub sites_folded: Vec<String>,
    pub params_before: usize,
    pub params_after: usize,
    pub param_delta: usize,
    /// Share of the delta from deleted temporal cross-attention (projections and query norms).
    pub tca_param_delta: usize,
    /// Share of the delta from folding spatial cross-attention.
    pub sca_param_delta: usize,
}

/// Returns the transformed model; the input is left untouched.
///
/// Every parameter outside cross-attention is carried over unchanged.
pub fn apply_vcut<T: Scalar>(model: &Model<T>) -> Result<(Model<T>, SurgeryReport)> {
    if model.spec.vcut {
        return Err(Error::Transform("model has already been through VCUT surgery".into()));
    }
    let params_before = model.num_params();
    let mut out = model.clone();
    out.spec.vcut = true;
    let mut removed = Vec::new();
    let mut folded = Vec::new();
    let (mut tca_delta, mut sca_delta) = (0usize, 0usize);
    for (id, block) in out.weights.transformer_blocks_mut() {
        let slot = std::mem::replace(&mut block.cross, CrossSlot::Removed);
        let CrossSlot::Attention { norm, site } = slot else {
            return Err(Error::Transform(format!("{id}: cross-attention already transformed")));
        };
        let before = site.num_params() + norm.gain.len() + norm.bias.len();
        match site.kind {
            AttentionKind::Tca => {
                removed.push(format!("{id}.cross"));
                tca_delta += before;
            }
            AttentionKind::Sca => {
                let f = fold_site(&site, &format!("{id}.cross"))?;
                sca_delta += before - f.num_params();
                folded.push(f.site.clone());
                block.cross = CrossSlot::Folded(f);
            }
            other => {
                return Err(Error::Transform(format!("{id}: unexpected {other} in cross slot")));
            }
        }
    }
    let params_after = out.num_params();
    if params_after >= params_before {
        return Err(Error::Transform("surgery did not reduce the parameter count".into()));
    }
    let report = SurgeryReport {
        sites_removed: removed,
        sites_folded: folded,
        params_before,
        params_after,
        param_delta: params_before - params_after,
        tca_param_delta: tca_delta,
        sca_param_delta: sca_delta,
    };
    Ok((out, report))
}

/// Which cached vector a forward pass reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheSlot {
    /// `L(tau(y))`, the conditional output.
    Cond,
    /// `L(null)`, the unconditional output.
    Null,
    /// `(L(tau(y)) + L(null)) / 2`, used after the cut step.
    Mean,
}

/// Cached outputs of one folded site, each `[b, c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedSite<T> {
    pub site: String,
    pub cond: Tensor<T>,
    pub null: Tensor<T>,
    pub mean: Tensor<T>,
}

impl<T: Scalar> CachedSite<T> {
    pub fn get(&self, slot: CacheSlot) -> &Tensor<T> {
        match slot {
            CacheSlot::Cond => &self.cond,
            CacheSlot::Null => &self.null,
            CacheSlot::Mean => &self.mean,
        }
    }
}

/// Per-site cached conditioner outputs. Depends only on the folded weights and
/// the two embeddings, so one instance serves every timestep of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedConditioner<T> {
    pub sites: Vec<CachedSite<T>>,
    /// Number of folded-map evaluations spent building the cache (two per site).
    pub evaluations: usize,
}

impl<T: Scalar> FoldedConditioner<T> {
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.sites.len() == other.sites.len()
            && self.sites.iter().zip(&other.sites).all(|(a, b)| {
                a.site == b.site
                    && a.cond.bitwise_eq(&b.cond)
                    && a.null.bitwise_eq(&b.null)
                    && a.mean.bitwise_eq(&b.mean)
            })
    }
}

/// Elementwise `(a + b) / 2`. Shared by the cache and by on-the-fly averaging
/// so both paths round identically.
pub fn average<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let half = T::lit(0.5);
    a.zip_map(b, |x, y| (x + y) * half)
}

pub fn build_cache<T: Scalar>(
    folded: &[FoldedAffine<T>],
    e_cond: &ImageEmbedding<T>,
    e_null: &ImageEmbedding<T>,
) -> Result<FoldedConditioner<T>> {
    if e_cond.batch() != e_null.batch() || e_cond.dim() != e_null.dim() {
        return Err(shape_err!(
            "conditional embedding {:?} and null embedding {:?} disagree",
            e_cond.tensor().dims(),
            e_null.tensor().dims()
        ));
    }
    let mut sites = Vec::with_capacity(folded.len());
    for f in folded {
        let cond = f.apply(e_cond.tensor())?;
        let null = f.apply(e_null.tensor())?;
        let mean = average(&cond, &null)?;
        sites.push(CachedSite {
            site: f.site.clone(),
            cond,
            null,
            mean,
        });
    }
    Ok(FoldedConditioner {
        evaluations: 2 * sites.len(),
        sites,
    })
}
