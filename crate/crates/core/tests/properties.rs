use std::collections::BTreeSet;

use proptest::prelude::*;

use dsc::aligner::{init_aligner, AlignerConfig};
use dsc::corpus::{split_dataset, Dataset, Sample, SplitSpec};
use dsc::stats::{
    aggregate, fisher, gaps, inv_fisher, lcc, significant_difference, srcc, CorrelationKind, CorrelationSet,
};

fn paired(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3..max).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
        )
    })
}

fn corr_set(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.999..0.999f64, 1..max)
}

fn set(v: &[f64]) -> CorrelationSet {
    CorrelationSet::new(CorrelationKind::Lcc, v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn lcc_bounded_symmetric_affine_invariant((x, y) in paired(60), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let r = lcc(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - lcc(&y, &x).unwrap()).abs() < 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((r - lcc(&xs, &y).unwrap()).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((r + lcc(&neg, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn srcc_monotone_invariant((x, y) in paired(60)) {
        let s = srcc(&x, &y).unwrap();
        let warped: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        prop_assert!((s - srcc(&warped, &y).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn fisher_round_trip(r in -0.999999..0.999999f64) {
        prop_assert!((inv_fisher(fisher(r)) - r).abs() < 1e-12);
    }

    #[test]
    fn aggregate_within_range(v in corr_set(12)) {
        let a = aggregate(&set(&v));
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a.r_avg >= lo - 1e-12 && a.r_avg <= hi + 1e-12);
        prop_assert!(a.z_se >= 0.0);
        prop_assert_eq!(a.n, v.len());
    }

    #[test]
    fn aggregate_is_order_free(mut v in corr_set(12)) {
        let a = aggregate(&set(&v));
        v.reverse();
        let b = aggregate(&set(&v));
        prop_assert!((a.r_avg - b.r_avg).abs() < 1e-12);
    }

    #[test]
    fn significance_is_antisymmetric(a in corr_set(10), b in corr_set(10)) {
        let ab = significant_difference(&set(&a), &set(&b));
        let ba = significant_difference(&set(&b), &set(&a));
        prop_assert_eq!(ab.significant, ba.significant);
        if !ab.infinite_width {
            prop_assert!((ab.ci.lo + ba.ci.hi).abs() < 1e-9);
        }
        prop_assert!(!significant_difference(&set(&a), &set(&a)).significant);
    }

    #[test]
    fn gaps_telescope(i in corr_set(6), g in corr_set(6), c in corr_set(6)) {
        let (si, sg, sc) = (set(&i), set(&g), set(&c));
        let (ai, ag, ac) = (aggregate(&si), aggregate(&sg), aggregate(&sc));
        let r = gaps(&ai, &ag, &ac, &si, &sg, &sc);
        prop_assert!((r.v + r.c - (ai.r_avg.abs() - ac.r_avg.abs())).abs() <= 1e-12);
    }

    #[test]
    fn split_is_a_partition(
        n in 10usize..300,
        train in 0.5..0.9f64,
        val_share in 0.1..0.9f64,
        seed in any::<u64>(),
    ) {
        let val = (1.0 - train) * val_share;
        let samples = (0..n)
            .map(|i| Sample {
                file_id: format!("clip{i:04}"),
                features: vec![i as f64],
                mos: 3.0,
                votes: 1,
                condition_id: None,
            })
            .collect();
        let d = Dataset::new("p", samples);
        let spec = SplitSpec { fractions: (train, val, 1.0 - train - val), seed, honor_curated: true };
        let s = split_dataset(&d, &spec).unwrap();
        let all: BTreeSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        prop_assert_eq!(s, split_dataset(&d, &spec).unwrap());
    }

    #[test]
    fn reference_mapping_is_identity(s in any::<f64>(), seed in any::<u64>(), scale in 0.0..2.0f64) {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|x| x.to_string()).collect();
        let mut cfg = AlignerConfig::new("b");
        cfg.init_scale = scale;
        let al = init_aligner(&cfg, "b", &ids, seed).unwrap();
        prop_assert_eq!(al.apply(s, "b").unwrap().to_bits(), s.to_bits());
        if (1.0..=5.0).contains(&s) {
            prop_assert!((al.apply(s, "a").unwrap() - s).abs() <= scale + 1e-12);
        }
    }
}
