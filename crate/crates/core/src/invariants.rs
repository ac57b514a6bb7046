use proptest::prelude::*;

use crate::costmodel::{count_macs, count_params, svd_arch, vcut_arch, vcut_totals, MacConvention};
use crate::equiv::sweep_case;
use crate::metrics::{
    background_consistency, dynamic_degree, motion_smoothness, pooled_flow_magnitude, subject_consistency,
    video_image_background_consistency, video_image_subject_consistency, Midpoint,
};
use crate::model::attention::cross_attention_probs;
use crate::model::{cross_attention, AttentionKind, AttentionSite, Model, ModelSpec};
use crate::numerics::{affine, matmul, softmax_lastdim, Rng, Tensor};
use crate::sampler::{pass_count, GuidanceSchedule, SamplerConfig};
use crate::surgery::apply_vcut;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1e300..1e300f64, Just(0.0), Just(-0.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singleton_softmax_is_exactly_one(values in prop::collection::vec(finite(), 1..40)) {
        let n = values.len();
        let x = Tensor::new(vec![n, 1], values.clone()).unwrap();
        prop_assert!(softmax_lastdim(&x).unwrap().data().iter().all(|&p| p == 1.0));
        let x32 = Tensor::new(vec![n, 1], values.iter().map(|&v| (v as f32).clamp(-3e38, 3e38)).collect()).unwrap();
        prop_assert!(softmax_lastdim(&x32).unwrap().data().iter().all(|&p| p == 1.0f32));
    }

    #[test]
    fn matmul_is_deterministic_and_affine_adds_bias_exactly(
        seed in any::<u64>(), m in 1usize..9, k in 1usize..17, n in 1usize..9,
    ) {
        let mut rng = Rng::new(seed);
        let a: Tensor<f32> = rng.uniform(-3.0, 3.0, vec![m, k]).unwrap();
        let w: Tensor<f32> = rng.uniform(-3.0, 3.0, vec![k, n]).unwrap();
        let b: Tensor<f32> = rng.uniform(-3.0, 3.0, vec![n]).unwrap();
        let p = matmul(&a, &w).unwrap();
        prop_assert_eq!(p.bitwise_diff_count(&matmul(&a, &w).unwrap()), 0);
        let y = affine(&a, &w, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                prop_assert_eq!(y.data()[i * n + j].to_bits(), (p.data()[i * n + j] + b.data()[j]).to_bits());
            }
        }
    }

    #[test]
    fn cross_attention_ignores_the_queries(seed in any::<u64>(), tca in any::<bool>(), len in 1usize..12) {
        let mut rng = Rng::new(seed);
        let kind = if tca { AttentionKind::Tca } else { AttentionKind::Sca };
        let site = AttentionSite::<f64>::init(kind, 16, 4, 24, &mut rng).unwrap();
        let e: Tensor<f64> = rng.uniform(-1.0, 1.0, vec![2, 1, 24]).unwrap();
        let x1: Tensor<f64> = rng.uniform(-5.0, 5.0, vec![2, len, 16]).unwrap();
        let x2: Tensor<f64> = rng.uniform(-5.0, 5.0, vec![2, len, 16]).unwrap();
        let p = cross_attention_probs(&site, &x1, &e).unwrap();
        prop_assert!(p.data().iter().all(|&v| v == 1.0));
        let y1 = cross_attention(&site, &x1, &e).unwrap();
        let y2 = cross_attention(&site, &x2, &e).unwrap();
        prop_assert_eq!(y1.bitwise_diff_count(&y2), 0);
        for b in 0..2 {
            let first = &y1.data()[b * len * 16..b * len * 16 + 16];
            for l in 1..len {
                let row = &y1.data()[(b * len + l) * 16..(b * len + l + 1) * 16];
                prop_assert_eq!(first, row);
            }
        }
    }

    #[test]
    fn folding_matches_attention_for_random_shapes(seed in any::<u64>()) {
        let a = sweep_case::<f32>(seed, false).unwrap();
        prop_assert!(a.scores_exact);
        prop_assert!(a.max_fold_error <= 1e-5, "{:?} {}", a.config, a.max_fold_error);
        let b = sweep_case::<f64>(seed, false).unwrap();
        prop_assert!(b.scores_exact);
        prop_assert!(b.max_fold_error <= 1e-12, "{:?} {}", b.config, b.max_fold_error);
    }

    #[test]
    fn pass_count_and_totals(steps in 1usize..80, frac in 0.0f64..=1.0, per_step in 0.1f64..100.0) {
        let c = 1 + ((steps as f64) * frac).round() as usize;
        let cfg = SamplerConfig { steps, cut_step: c, ..SamplerConfig::default() };
        prop_assert_eq!(cfg.forward_passes(), 2 * (c - 1) + (steps + 1 - c));
        prop_assert_eq!(pass_count(steps, c), cfg.forward_passes());
        let dual = (1..=steps).filter(|&s| cfg.is_dual(s)).count();
        prop_assert_eq!(dual, c - 1);
        let total = vcut_totals(per_step, steps, c).unwrap();
        let expect = per_step * (c - 1) as f64 + per_step / 2.0 * (steps + 1 - c) as f64;
        prop_assert!((total - expect).abs() <= 1e-9 * expect.max(1.0));
        prop_assert!(total <= vcut_totals(per_step, steps, steps + 1).unwrap() + 1e-9);
    }

    #[test]
    fn guidance_runs_linearly_from_one_to_three(frames in 2usize..64) {
        let s = GuidanceSchedule::linear(frames).unwrap();
        let l = s.lambdas();
        prop_assert_eq!(l[0], 1.0);
        prop_assert_eq!(l[frames - 1], 3.0);
        for k in 0..frames {
            prop_assert!((l[k] - (1.0 + 2.0 * k as f64 / (frames - 1) as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn removing_a_layer_never_raises_cost(pick in any::<prop::sample::Index>(), frames in 1usize..30) {
        let arch = svd_arch();
        let mut smaller = arch.clone();
        smaller.layers.remove(pick.index(arch.layers.len()));
        for conv in [MacConvention::Full, MacConvention::OpCounter] {
            prop_assert!(count_macs(&smaller, frames).per_pass(conv) <= count_macs(&arch, frames).per_pass(conv));
        }
        prop_assert!(count_params(&smaller) <= count_params(&arch));
    }

    #[test]
    fn consistency_is_scale_invariant(
        seed in any::<u64>(), t in 2usize..10, d in 2usize..20, scales in prop::collection::vec(1e-3f64..1e3, 10),
    ) {
        let mut rng = Rng::new(seed);
        let seq: Tensor<f64> = rng.uniform(-1.0, 1.0, vec![t, d]).unwrap();
        let reference: Tensor<f64> = rng.uniform(-1.0, 1.0, vec![d]).unwrap();
        let scaled = Tensor::from_fn(vec![t, d], |i| seq.data()[i] * scales[i / d]).unwrap();
        let tol = 1e-12;
        prop_assert!((subject_consistency(&seq).unwrap() - subject_consistency(&scaled).unwrap()).abs() < tol);
        let a = video_image_subject_consistency(&seq, &reference).unwrap();
        let b = video_image_subject_consistency(&scaled, &reference.map(|v| v * scales[9])).unwrap();
        prop_assert!((a - b).abs() < tol);
        prop_assert_eq!(subject_consistency(&seq).unwrap(), background_consistency(&seq).unwrap());
        prop_assert_eq!(a, video_image_background_consistency(&seq, &reference).unwrap());
        prop_assert!((-1.0 - 1e-15..=1.0 + 1e-15).contains(&a));
    }

    #[test]
    fn identical_rows_score_exactly_one(seed in any::<u64>(), t in 2usize..12, d in 1usize..40, scale in 1e-3f64..1e3) {
        let row: Tensor<f64> = Rng::new(seed).uniform(0.1, 2.0, vec![d]).unwrap();
        let seq = Tensor::new(vec![t, d], row.data().repeat(t)).unwrap();
        prop_assert_eq!(subject_consistency(&seq).unwrap(), 1.0);
        prop_assert_eq!(video_image_subject_consistency(&seq, &row).unwrap(), 1.0);
        let scaled = video_image_subject_consistency(&seq, &row.map(|v| v * scale)).unwrap();
        prop_assert!((scaled - 1.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn motion_scores_on_trivial_videos(
        seed in any::<u64>(), half in 1usize..5, h in 1usize..6, w in 1usize..6, level in 0.0f64..1.0,
    ) {
        let n = 2 * half + 1;
        let still = Tensor::new(vec![n, h, w, 1], vec![level; n * h * w]).unwrap();
        prop_assert_eq!(motion_smoothness(&still, 0.0, 1.0, &Midpoint).unwrap(), 1.0);
        let flow: Tensor<f64> = Rng::new(seed).uniform(-4.0, 4.0, vec![n - 1, h, w, 2]).unwrap();
        let top = pooled_flow_magnitude(&flow).unwrap();
        prop_assert_eq!(dynamic_degree(std::slice::from_ref(&flow), top + 1e-9).unwrap(), 0.0);
        let max = flow.data().chunks(2).map(|uv| uv[0].hypot(uv[1])).fold(0.0, f64::max);
        prop_assert!(top <= max + 1e-12);
    }
}

#[test]
fn surgery_keeps_every_other_parameter_bitwise() {
    for spec in [ModelSpec::tiny(), ModelSpec::toy_svd()] {
        let model = Model::<f32>::init(spec, 4).unwrap();
        let (cut, _) = apply_vcut(&model).unwrap();
        let after: std::collections::HashMap<String, Tensor<f32>> = cut.weights.named_params().into_iter().collect();
        let cross = |n: &str| n.contains(".cross.") || n.contains(".norm_cross.");
        let mut kept = 0;
        for (name, t) in model.weights.named_params() {
            if cross(&name) {
                continue;
            }
            let other = after.get(&name).unwrap_or_else(|| panic!("{name} missing after surgery"));
            assert_eq!(t.bitwise_diff_count(other), 0, "{name}");
            kept += 1;
        }
        assert!(kept > 0);
        let before: std::collections::HashSet<String> =
            model.weights.named_params().into_iter().map(|(n, _)| n).collect();
        for name in after.keys().filter(|n| !before.contains(*n)) {
            assert!(cross(name), "surgery added {name}");
        }
    }
}

#[test]
fn folded_conditioner_is_negligible_at_full_scale() {
    let cut = vcut_arch(&svd_arch()).unwrap();
    for frames in [14, 25] {
        let m = count_macs(&cut, frames);
        let share = m.once_per_run as f64 / m.per_pass(MacConvention::OpCounter) as f64;
        assert!(share > 0.0 && share < 1e-4, "{share}");
    }
}
