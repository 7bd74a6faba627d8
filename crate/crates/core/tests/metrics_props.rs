use ood_baseline::metrics::{
    auroc, average_precision, build_report, pr_curve, rank_sum_test, roc_curve, ConfusionCounts,
};
use ood_baseline::scores::{
    kl_from_uniform, max_prob, neg_entropy, score_sequence, softmax, Aggregator, Logits, ScoreKind,
};
use proptest::prelude::*;

/// Populations drawn either from a coarse grid (heavy ties) or continuously.
fn population() -> impl Strategy<Value = Vec<f64>> {
    sized_population(1)
}

fn sized_population(min: usize) -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec((-6i32..=6).prop_map(|k| k as f64 / 2.0), min..60),
        prop::collection::vec(-50.0f64..50.0, min..60),
    ]
}

fn logits(k: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(|n| prop::collection::vec(-20.0f64..20.0, n))
}

proptest! {
    #[test]
    fn auroc_in_unit_interval_and_complementary(p in population(), n in population()) {
        let a = auroc(&p, &n).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a + auroc(&n, &p).unwrap(), 1.0);
    }

    #[test]
    fn auroc_negation_swaps_roles(p in population(), n in population()) {
        let np: Vec<f64> = p.iter().map(|x| -x).collect();
        let nn: Vec<f64> = n.iter().map(|x| -x).collect();
        prop_assert_eq!(auroc(&p, &n).unwrap(), auroc(&nn, &np).unwrap());
    }

    #[test]
    fn auroc_ignores_strictly_increasing_maps(p in population(), n in population(), scale in 0.1f64..10.0) {
        let f = |x: &f64| (scale * x).atan();
        let fp: Vec<f64> = p.iter().map(f).collect();
        let fnn: Vec<f64> = n.iter().map(f).collect();
        prop_assert_eq!(auroc(&p, &n).unwrap(), auroc(&fp, &fnn).unwrap());
    }

    #[test]
    fn roc_curve_is_monotone_with_endpoints(p in population(), n in population()) {
        let curve = roc_curve(&p, &n).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
        prop_assert!((curve.area() - auroc(&p, &n).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn pr_curve_bounds(p in population(), n in population()) {
        let curve = pr_curve(&p, &n).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].recall <= w[1].recall);
        }
        for pt in &curve.points {
            prop_assert!((0.0..=1.0).contains(&pt.precision));
            prop_assert!((0.0..=1.0).contains(&pt.recall));
        }
        let ap = average_precision(&p, &n).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert!((curve.step_area() - ap).abs() <= 1e-12);
    }

    #[test]
    fn confusion_counts_partition(p in population(), n in population(), t in -50.0f64..50.0) {
        let c = ConfusionCounts::at_threshold(&p, &n, t);
        prop_assert_eq!(c.tp + c.fn_, p.len());
        prop_assert_eq!(c.fp + c.tn, n.len());
        prop_assert_eq!(c.tp, p.iter().filter(|&&x| x >= t).count());
    }

    #[test]
    fn report_is_well_formed(p in sized_population(2), n in sized_population(2)) {
        let r = build_report(&p, &n).unwrap();
        let total = (p.len() + n.len()) as f64;
        prop_assert_eq!(r.base_rate_positive, p.len() as f64 / total);
        for v in [r.auroc, r.aupr_positive, r.aupr_negative, r.ranksum_p] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn rank_sum_p_is_symmetric(p in population(), n in population()) {
        let a = rank_sum_test(&p, &n).unwrap();
        let b = rank_sum_test(&n, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert!((a.p_value - b.p_value).abs() <= 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(v in logits(2..12)) {
        let d = softmax(&Logits::new(v.clone()).unwrap());
        let sum: f64 = d.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        let (top, arg) = max_prob(&d);
        prop_assert!(top >= 1.0 / v.len() as f64 - 1e-15);
        prop_assert_eq!(d.probs()[arg], top);
    }

    #[test]
    fn kl_and_neg_entropy_differ_by_log_k(v in logits(2..12)) {
        let d = softmax(&Logits::new(v.clone()).unwrap());
        let gap = kl_from_uniform(&d) - neg_entropy(&d);
        prop_assert!((gap - (v.len() as f64).ln()).abs() <= 1e-12);
        prop_assert!(kl_from_uniform(&d) >= -1e-15);
    }

    #[test]
    fn blank_exclusion_equals_renormalization(v in logits(3..10), pick in any::<prop::sample::Index>()) {
        let blank = pick.index(v.len());
        let frame = Logits::new(v.clone()).unwrap();
        let full = softmax(&frame);
        let rest: f64 = full
            .probs()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != blank)
            .map(|(_, p)| p)
            .sum();
        let renorm = full
            .probs()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != blank)
            .map(|(_, p)| p / rest)
            .fold(0.0f64, f64::max);
        let got = score_sequence(&[frame], Some(blank), ScoreKind::MaxProb, Aggregator::Mean).unwrap();
        prop_assert!((got - renorm).abs() <= 1e-9 * renorm.max(1.0));
    }
}
