mod common;

use common::{brute_eer, brute_min_dcf};
use petl_sv::evalkit::{compute_eer, compute_min_dcf, DcfParams, ScoreSet};
use petl_sv::numcore::checkpoint::{decode, encode};
use petl_sv::numcore::{softmax_rows, ParamGroup, Tensor};
use proptest::prelude::*;

fn score_sets() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(-20i32..20).prop_map(|v| v as f64 * 0.25), -5.0f64..5.0], n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shift(
        rows in 1usize..6,
        cols in 1usize..12,
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
    ) {
        let mut rng = petl_sv::numcore::Rng::new(seed);
        let x = rng.normal_tensor::<f64>(&[rows, cols], 3.0);
        let p = softmax_rows(&x).unwrap();
        for r in 0..rows {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
        }
        let shifted = softmax_rows(&x.map(|v| v + shift)).unwrap();
        prop_assert!(p.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn metrics_match_brute_force((scores, labels) in score_sets()) {
        let set = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
        let eer = compute_eer(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&eer));
        prop_assert!((eer - brute_eer(&scores, &labels)).abs() <= 1e-12);
        for p in [DcfParams::p01(), DcfParams::p05()] {
            let d = compute_min_dcf(&set, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - brute_min_dcf(&scores, &labels, p.p_tar, p.c_miss, p.c_fa)).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_increasing_transforms((scores, labels) in score_sets(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
        let t = ScoreSet::new(scores.iter().map(|&s| (a * s + b).powi(3) + s).collect(), labels.clone()).unwrap();
        prop_assert!((compute_eer(&base).unwrap() - compute_eer(&t).unwrap()).abs() <= 1e-12);
        let p = DcfParams::p01();
        prop_assert!((compute_min_dcf(&base, &p).unwrap() - compute_min_dcf(&t, &p).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn eer_symmetric_under_negation_and_label_flip((scores, labels) in score_sets()) {
        let a = compute_eer(&ScoreSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        let neg = ScoreSet::new(scores.iter().map(|s| -s).collect(), labels.iter().map(|l| !l).collect()).unwrap();
        prop_assert!((a - compute_eer(&neg).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical(
        shapes in prop::collection::vec((0usize..5, 1usize..7, any::<bool>()), 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = petl_sv::numcore::Rng::new(seed);
        let groups: Vec<ParamGroup> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c, tr))| {
                let t: Tensor<f32> = rng.normal_tensor(&[r, c], 1.0);
                ParamGroup::new(format!("g{i}.w"), t, tr)
            })
            .collect();
        let bytes = encode(&groups, None).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back.groups, &groups);
        prop_assert_eq!(encode(&back.groups, None).unwrap(), bytes);
    }
}
