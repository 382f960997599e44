//! Randomized invariants over the numeric core. Each block states a law the
//! implementation must satisfy on every input, not just on the unit fixtures.

use proptest::prelude::*;
use ssb_core::bridge::{self, SampleConfig};
use ssb_core::loss::{clamp01, soft_dice};
use ssb_core::metrics::{
    ci_score, d_max, dice, diversity_agreement, ged, iou, js_divergence, ddi, DiceMatrix,
    MaskRole, MaskSet,
};
use ssb_core::predictor::{ExpertId, Predictor};
use ssb_core::rng::{stream, stream_indexed};
use ssb_core::schedule::Schedule;
use ssb_core::synthdata::{gen_record, DatasetConfig};
use ssb_core::Grid;
use rand::Rng;

/// Predictor that answers with one fixed grid per guidance branch.
struct TwoBranch {
    cond: Grid,
    uncond: Grid,
}

impl Predictor for TwoBranch {
    fn predict(&self, _x: &Grid, label: Option<ExpertId>, _step: usize) -> ssb_core::Result<Grid> {
        Ok(if label.is_some() { self.cond.clone() } else { self.uncond.clone() })
    }
}

fn unit_grid(h: usize, w: usize) -> impl Strategy<Value = Grid> {
    proptest::collection::vec(0.0f64..=1.0, h * w)
        .prop_map(move |v| Grid::from_vec(h, w, v).unwrap())
}

fn binary_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0)], len)
}

/// Two same-shape mask sets, 1 to 4 masks each.
fn two_mask_sets() -> impl Strategy<Value = (MaskSet, MaskSet)> {
    (2usize..=4, 2usize..=4)
        .prop_flat_map(|(h, w)| {
            (
                proptest::collection::vec(binary_vec(h * w), 1..=4),
                proptest::collection::vec(binary_vec(h * w), 1..=4),
                Just((h, w)),
            )
        })
        .prop_map(|(gs, es, (h, w))| {
            let build = |vs: Vec<Vec<f64>>, role| {
                let masks = vs.into_iter().map(|v| Grid::from_vec(h, w, v).unwrap()).collect();
                MaskSet::new(masks, role).unwrap()
            };
            (build(gs, MaskRole::Generated), build(es, MaskRole::Expert))
        })
}

proptest! {
    #[test]
    fn schedule_accounting_holds(n in 1usize..120, total in 0.01f64..10.0) {
        let s = Schedule::with_total_variance(n, total).unwrap();
        prop_assert_eq!(s.sigma_sq()[0], 0.0);
        prop_assert_eq!(s.sigma_sq()[n], total);
        prop_assert_eq!(s.sigma_bar_sq()[0], total);
        prop_assert_eq!(s.sigma_bar_sq()[n], 0.0);
        for k in 0..n {
            prop_assert!(s.sigma_sq()[k] <= s.sigma_sq()[k + 1]);
        }
        for k in 0..=n {
            let sum = s.sigma_sq()[k] + s.sigma_bar_sq()[k];
            prop_assert!((sum - total).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn bridge_coeffs_are_convex_weights(n in 1usize..120, total in 0.01f64..10.0) {
        let s = Schedule::with_total_variance(n, total).unwrap();
        for k in 0..=n {
            let c = s.bridge_coeffs(k).unwrap();
            prop_assert!((c.w0 + c.w1 - 1.0).abs() <= 1e-12);
            prop_assert!(c.w0 >= 0.0 && c.w1 >= 0.0);
            prop_assert!(c.var >= 0.0);
            // w0*w1 <= 1/4, so the marginal variance caps at total/4
            prop_assert!(c.var <= 0.25 * total * (1.0 + 1e-12));
        }
        let c0 = s.bridge_coeffs(0).unwrap();
        prop_assert_eq!((c0.w0, c0.w1, c0.var), (1.0, 0.0, 0.0));
        let cn = s.bridge_coeffs(n).unwrap();
        prop_assert_eq!((cn.w0, cn.w1, cn.var), (0.0, 1.0, 0.0));
    }

    #[test]
    fn tent_rates_stay_symmetric(n in 1usize..120, total in 0.01f64..10.0) {
        let s = Schedule::with_total_variance(n, total).unwrap();
        for i in 0..n {
            let a = s.beta()[i];
            let b = s.beta()[n - 1 - i];
            prop_assert!((a - b).abs() <= 1e-10 * total, "i={} a={} b={}", i, a, b);
        }
    }

    #[test]
    fn ladder_descends_strictly(
        (n, nfe) in (1usize..400).prop_flat_map(|n| (Just(n), 1..=n)),
    ) {
        let ladder = bridge::step_ladder(n, nfe).unwrap();
        prop_assert_eq!(ladder.len(), nfe + 1);
        prop_assert_eq!(ladder[0], n);
        prop_assert_eq!(ladder[nfe], 0);
        for w in ladder.windows(2) {
            prop_assert!(w[1] < w[0], "ladder not strictly decreasing: {:?}", ladder);
        }
    }

    #[test]
    fn training_target_inverts_the_draw(
        seed in any::<u64>(),
        (n, step) in (2usize..40).prop_flat_map(|n| (Just(n), 1..=n)),
    ) {
        let s = Schedule::with_total_variance(n, 1.0).unwrap();
        let mut rng = stream(seed, &[b"prop-bridge"]);
        let x0 = Grid::randn(3, 3, &mut rng).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let x1 = Grid::randn(3, 3, &mut rng).map(|v| 0.5 + 0.2 * v);
        let x_t = bridge::sample_xt(&x0, &x1, step, &s, &mut rng).unwrap();
        let eps = bridge::training_target(&x_t, &x0, step, &s).unwrap();
        let back = bridge::predict_x0(&x_t, &eps, step, &s).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            prop_assert!((a - b).abs() <= 1e-9, "x0 round trip off: {} vs {}", a, b);
        }
    }

    #[test]
    fn guidance_is_affine_in_omega(
        omega in 0.0f64..8.0,
        c in proptest::collection::vec(-2.0f64..2.0, 4),
        u in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let stub = TwoBranch {
            cond: Grid::from_vec(2, 2, c).unwrap(),
            uncond: Grid::from_vec(2, 2, u).unwrap(),
        };
        let x = Grid::zeros(2, 2);
        let g = bridge::guided_eps(&stub, &x, ExpertId::new(1).unwrap(), 1, omega).unwrap();
        for i in 0..4 {
            let want = (1.0 + omega) * stub.cond.data()[i] - omega * stub.uncond.data()[i];
            prop_assert!((g.data()[i] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn clamp_is_idempotent_and_bounded(g in unit_grid(3, 3).prop_map(|g| g.map(|v| v * 4.0 - 2.0))) {
        let c = clamp01(&g);
        prop_assert!(c.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(clamp01(&c), c);
    }

    #[test]
    fn soft_dice_is_a_symmetric_unit_score(
        (p, t) in (2usize..=4, 2usize..=4).prop_flat_map(|(h, w)| (unit_grid(h, w), unit_grid(h, w))),
    ) {
        let d = soft_dice(&p, &t, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(soft_dice(&t, &p, 1.0).unwrap(), d);
    }

    #[test]
    fn soft_dice_is_exactly_one_on_binary_match(v in binary_vec(9)) {
        let t = Grid::from_vec(3, 3, v).unwrap();
        prop_assert_eq!(soft_dice(&t, &t, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn overlap_scores_are_ordered(
        (a, b) in (2usize..=4, 2usize..=4).prop_flat_map(|(h, w)| {
            (binary_vec(h * w), binary_vec(h * w), Just((h, w)))
        }).prop_map(|(a, b, (h, w))| {
            (Grid::from_vec(h, w, a).unwrap(), Grid::from_vec(h, w, b).unwrap())
        }),
    ) {
        let d = dice(&a, &b).unwrap();
        let j = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert!(j <= d + 1e-15, "iou {} exceeds dice {}", j, d);
        prop_assert_eq!(dice(&b, &a).unwrap(), d);
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn set_metrics_stay_in_range((gen, exp) in two_mask_sets()) {
        let g = ged(&gen, &exp).unwrap();
        prop_assert!(g >= 0.0 && g.is_finite());
        let dm = d_max(&gen, &exp).unwrap();
        prop_assert!((0.0..=1.0).contains(&dm));
        let ci = ci_score(&gen, &exp).unwrap();
        prop_assert!((0.0..=1.0).contains(&ci));
        match diversity_agreement(&gen, &exp).unwrap() {
            Some(da) => {
                prop_assert!(gen.len() >= 2 && exp.len() >= 2);
                prop_assert!((0.0..=1.0).contains(&da));
            }
            None => prop_assert!(gen.len() < 2 || exp.len() < 2),
        }
    }

    #[test]
    fn ged_of_a_set_with_itself_is_zero((gen, _) in two_mask_sets()) {
        let same = MaskSet::new(gen.masks().to_vec(), MaskRole::Expert).unwrap();
        prop_assert_eq!(ged(&gen, &same).unwrap(), 0.0);
    }

    #[test]
    fn js_divergence_is_a_bounded_symmetric_distance(
        (p, q) in (2usize..=6).prop_flat_map(|k| {
            let weights = proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], k)
                .prop_filter("needs mass", |v| v.iter().sum::<f64>() > 0.0)
                .prop_map(|v| {
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
                });
            (weights.clone(), weights)
        }),
    ) {
        let d = js_divergence(&p, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        let r = js_divergence(&q, &p).unwrap();
        prop_assert!((d - r).abs() <= 1e-12);
        prop_assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn ddi_is_bounded_and_gated_on_set_size((gen, exp) in two_mask_sets()) {
        let matrix = DiceMatrix::compute(&exp, &gen).unwrap();
        let (over_experts, over_generated) = ddi(&matrix).unwrap();
        match over_experts {
            Some(v) => {
                prop_assert!(exp.len() >= 2);
                prop_assert!((0.0..=6.0 + 1e-9).contains(&v));
            }
            None => prop_assert_eq!(exp.len(), 1),
        }
        match over_generated {
            Some(v) => {
                prop_assert!(gen.len() >= 2);
                prop_assert!((0.0..=6.0 + 1e-9).contains(&v));
            }
            None => prop_assert_eq!(gen.len(), 1),
        }
    }

    #[test]
    fn distinct_streams_disagree(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        let a = stream_indexed(seed, "prop", i).gen::<u64>();
        let b = stream_indexed(seed, "prop", j).gen::<u64>();
        prop_assert_ne!(a, b);
    }

    #[test]
    fn sampler_config_validation_is_total(
        omega in -1.0f64..10.0,
        nfe in 0usize..100,
    ) {
        let cfg = SampleConfig { omega, nfe, stochastic: true, seed: 0 };
        let ok = cfg.validate().is_ok();
        prop_assert_eq!(ok, omega >= 0.0 && nfe >= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn records_are_well_formed(
        seed in 0u64..1000,
        index in 0u64..6,
        grid_size in 8usize..=16,
        experts in 1u32..=5,
        ambiguity in 0.0f64..=1.0,
    ) {
        let cfg = DatasetConfig { count: 8, grid_size, experts, ambiguity, split: 0.9, seed };
        let r = gen_record(&cfg, index).unwrap();
        prop_assert_eq!(r.image.height(), grid_size);
        prop_assert!(r.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(r.expert_masks.len(), experts as usize);
        for m in &r.expert_masks {
            prop_assert!(m.is_binary());
            prop_assert!(m.same_shape(&r.image));
        }
    }
}
