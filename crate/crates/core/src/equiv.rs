//! Property suite behind `vcut equiv-check`: singleton-softmax exactness, fold
//! equivalence, cache identity and prefix equality.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::attention::{cross_attention, cross_attention_probs, AttentionKind, AttentionSite};
use crate::model::latent::{ImageEmbedding, LatentVideo, VideoDims};
use crate::model::spec::ModelSpec;
use crate::model::unet::{forward_with, Conditioning, CrossSlot, Model, ScaPolicy, TcaPolicy};
use crate::numerics::{Rng, Tensor};
use crate::sampler::{cache_policy_check, run, SamplerConfig, SamplerMode};
use crate::scalar::{DType, Scalar};
use crate::surgery::{apply_vcut, fold_cross, FoldedAffine};

/// Added to the first folded bias when the fold is deliberately corrupted.
pub const POISON: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivOptions {
    /// Random attention configurations in the degeneracy sweep.
    pub configs: usize,
    /// Seeds for the sampler-level checks.
    pub run_seeds: usize,
    pub steps: usize,
    pub cut_step: usize,
    pub seed: u64,
    /// Corrupt one folded map so the suite must fail.
    pub poison_fold: bool,
    pub spec: ModelSpec,
}

impl Default for EquivOptions {
    fn default() -> Self {
        Self {
            configs: 200,
            run_seeds: 5,
            steps: 25,
            cut_step: 17,
            seed: 0,
            poison_fold: false,
            spec: ModelSpec::tiny(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub max_error: Option<f64>,
    pub tolerance: Option<f64>,
    pub first_failure: Option<String>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            cases: 0,
            max_error: None,
            tolerance: None,
            first_failure: None,
        }
    }

    fn fail(&mut self, detail: String) {
        self.passed = false;
        if self.first_failure.is_none() {
            self.first_failure = Some(detail);
        }
    }

    fn error(&mut self, e: f64) {
        self.max_error = Some(self.max_error.map_or(e, |m| m.max(e)));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivReport {
    pub dtype: DType,
    pub options: EquivOptions,
    pub checks: Vec<CheckOutcome>,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<(&str, &str)> {
        self.checks
            .iter()
            .find(|c| !c.passed)
            .map(|c| (c.name.as_str(), c.first_failure.as_deref().unwrap_or("")))
    }
}

/// One randomly shaped cross-attention case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: AttentionKind,
    pub batch: usize,
    pub channels: usize,
    pub heads: usize,
    pub source_dim: usize,
    pub queries: usize,
}

impl SweepConfig {
    pub fn random(rng: &mut Rng) -> Self {
        let pick = |rng: &mut Rng, n: u64| (rng.next_u64() % n) as usize;
        let heads: usize = [1, 2, 4, 8][pick(rng, 4)];
        let channels = heads * (1 + pick(rng, (128 / heads) as u64));
        let channels = channels.max(8).div_ceil(heads) * heads;
        Self {
            kind: if pick(rng, 2) == 0 { AttentionKind::Sca } else { AttentionKind::Tca },
            batch: 1 + pick(rng, 3),
            channels,
            heads,
            source_dim: 16 + pick(rng, 1009),
            queries: 1 + pick(rng, 32),
        }
    }
}

/// Result of one sweep case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCase {
    pub config: SweepConfig,
    /// Post-softmax scores have shape `[B, H, L, 1]` and are all exactly 1.
    pub scores_exact: bool,
    pub max_fold_error: f64,
}

/// Evaluates one random site; `poison` shifts the folded bias.
pub fn sweep_case<T: Scalar>(seed: u64, poison: bool) -> Result<SweepCase> {
    let mut rng = Rng::new(seed);
    let cfg = SweepConfig::random(&mut rng);
    let site = AttentionSite::<T>::init(cfg.kind, cfg.channels, cfg.heads, cfg.source_dim, &mut rng)?;
    let x = rng.uniform::<T>(-2.0, 2.0, vec![cfg.batch, cfg.queries, cfg.channels])?;
    let e = rng.uniform::<T>(-1.0, 1.0, vec![cfg.batch, 1, cfg.source_dim])?;
    let probs = cross_attention_probs(&site, &x, &e)?;
    let scores_exact = probs.dims() == [cfg.batch, cfg.heads, cfg.queries, 1]
        && probs.data().iter().all(|&p| p == T::one());
    let out = cross_attention(&site, &x, &e)?;
    let mut fold = fold_cross(&site, "sweep")?;
    if poison {
        poison_bias(&mut fold);
    }
    let rows = fold.apply(&e)?;
    let folded = broadcast_rows(&rows, cfg.queries)?;
    Ok(SweepCase {
        config: cfg,
        scores_exact,
        max_fold_error: out.max_abs_diff(&folded)?,
    })
}

fn poison_bias<T: Scalar>(f: &mut FoldedAffine<T>) {
    let d = T::lit(POISON);
    f.bias.data_mut()[0] += d;
}

/// `[B, c] -> [B, L, c]`.
fn broadcast_rows<T: Scalar>(rows: &Tensor<T>, l: usize) -> Result<Tensor<T>> {
    let (b, c) = (rows.dims()[0], rows.dims()[1]);
    let r = rows.data();
    Tensor::from_fn(vec![b, l, c], |i| r[(i / (l * c)) * c + i % c])
}

fn degeneracy<T: Scalar>(opts: &EquivOptions) -> Result<(CheckOutcome, CheckOutcome)> {
    let mut scores = CheckOutcome::new("singleton-softmax");
    let mut fold = CheckOutcome::new("fold-equivalence");
    fold.tolerance = Some(T::FOLD_TOLERANCE);
    scores.tolerance = Some(0.0);
    for i in 0..opts.configs {
        let seed = opts.seed.wrapping_add(i as u64);
        let case = sweep_case::<T>(seed, opts.poison_fold && i == 0)?;
        scores.cases += 1;
        fold.cases += 1;
        if !case.scores_exact {
            scores.fail(format!("sweep seed {seed}: {:?}", case.config));
        }
        fold.error(case.max_fold_error);
        if !(case.max_fold_error <= T::FOLD_TOLERANCE) {
            fold.fail(format!(
                "sweep seed {seed} ({} c={} D={} H={} L={}): error {:.3e}",
                case.config.kind,
                case.config.channels,
                case.config.source_dim,
                case.config.heads,
                case.config.queries,
                case.max_fold_error
            ));
        }
    }
    Ok((scores, fold))
}

fn dims_of(spec: &ModelSpec) -> VideoDims {
    VideoDims {
        batch: 1,
        channels: spec.latent_channels,
        frames: spec.frames,
        height: spec.height,
        width: spec.width,
    }
}

/// Per-site fold check on a seeded model, plus the whole-network decomposition:
/// attention everywhere against folded maps everywhere.
fn model_sites<T: Scalar>(opts: &EquivOptions) -> Result<(CheckOutcome, CheckOutcome)> {
    let mut sites = CheckOutcome::new("model-site-fold");
    sites.tolerance = Some(T::FOLD_TOLERANCE);
    let model = Model::<T>::init(opts.spec.clone(), opts.seed)?;
    let mut rng = Rng::new(opts.seed ^ 0xfeed);
    let e = ImageEmbedding::<T>::random(1, opts.spec.embed_dim, opts.seed ^ 0xe)?;
    for (k, (id, block)) in model.weights.transformer_blocks().into_iter().enumerate() {
        let CrossSlot::Attention { site, .. } = &block.cross else { continue };
        let x = rng.uniform::<T>(-2.0, 2.0, vec![1, 5, site.channels()])?;
        let out = cross_attention(site, &x, e.tensor())?;
        let mut f = fold_cross(site, &format!("{id}.cross"))?;
        if opts.poison_fold && k == 0 {
            poison_bias(&mut f);
        }
        let err = out.max_abs_diff(&broadcast_rows(&f.apply(e.tensor())?, 5)?)?;
        sites.cases += 1;
        sites.error(err);
        if !(err <= T::FOLD_TOLERANCE) {
            sites.fail(format!("site {}: error {err:.3e}", f.site));
        }
    }

    let mut net = CheckOutcome::new("network-decomposition");
    let tol = T::FOLD_TOLERANCE;
    net.tolerance = Some(tol);
    let z = LatentVideo::<T>::noise(dims_of(&opts.spec), opts.seed, 1.0)?;
    let cond = Conditioning::Embedding(&e);
    let a = forward_with(&model, &z, 0.5, cond, ScaPolicy::Attend, TcaPolicy::Attend)?;
    let b = forward_with(&model, &z, 0.5, cond, ScaPolicy::Fold, TcaPolicy::Fold)?;
    let err = a.tensor().max_abs_diff(b.tensor())?;
    net.cases = 1;
    net.error(err);
    if !(err <= tol) {
        net.fail(format!("whole-network error {err:.3e}"));
    }
    Ok((sites, net))
}

fn sampler_checks<T: Scalar>(opts: &EquivOptions) -> Result<(CheckOutcome, CheckOutcome)> {
    let model = Model::<T>::init(opts.spec.clone(), opts.seed)?;
    let (cut, _) = apply_vcut(&model)?;
    let seeds: Vec<u64> = (0..opts.run_seeds as u64).map(|s| opts.seed.wrapping_add(s)).collect();
    let cfg = SamplerConfig {
        steps: opts.steps,
        cut_step: opts.cut_step,
        ..SamplerConfig::default()
    };

    let mut cache = CheckOutcome::new("cache-identity");
    cache.tolerance = Some(0.0);
    let report = cache_policy_check(&cut, &cfg, &seeds, false)?;
    cache.cases = seeds.len();
    for (seed, div) in seeds.iter().zip(&report.divergences) {
        if let Some(d) = div {
            cache.fail(format!(
                "seed {seed}: {} elements differ at step {}",
                d.differing_elements, d.step
            ));
        }
    }

    let mut prefix = CheckOutcome::new("prefix-equality");
    prefix.tolerance = Some(0.0);
    let never = SamplerConfig::never_cut(opts.steps, 0);
    let spec = &opts.spec;
    for &seed in &seeds {
        let e = ImageEmbedding::random(1, spec.embed_dim, seed ^ 0x5eed)?;
        let n = ImageEmbedding::null(1, spec.embed_dim)?;
        let z = LatentVideo::noise(dims_of(spec), seed, cfg.sigma_max)?;
        let (a, _) = run(&cut, &SamplerConfig { seed, ..cfg.clone() }, SamplerMode::Vcut, &e, &n, &z)?;
        let (b, _) = run(&cut, &SamplerConfig { seed, ..never.clone() }, SamplerMode::Modified, &e, &n, &z)?;
        prefix.cases += 1;
        if let Some(d) = a.first_divergence(&b, Some(opts.cut_step - 1)) {
            prefix.fail(format!(
                "seed {seed}: {} elements differ at step {}",
                d.differing_elements, d.step
            ));
        }
    }
    Ok((cache, prefix))
}

/// Runs every check. Sampler checks are skipped when `run_seeds` is 0.
pub fn run_suite<T: Scalar>(opts: &EquivOptions) -> Result<EquivReport> {
    opts.spec.validate()?;
    let mut checks = Vec::new();
    let (a, b) = degeneracy::<T>(opts)?;
    checks.extend([a, b]);
    let (a, b) = model_sites::<T>(opts)?;
    checks.extend([a, b]);
    if opts.run_seeds > 0 {
        SamplerConfig {
            steps: opts.steps,
            cut_step: opts.cut_step,
            ..SamplerConfig::default()
        }
        .validate()?;
        let (a, b) = sampler_checks::<T>(opts)?;
        checks.extend([a, b]);
    }
    Ok(EquivReport {
        dtype: T::DTYPE,
        options: opts.clone(),
        checks,
    })
}
