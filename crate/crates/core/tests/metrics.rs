use odseg::data::LabelMap;
use odseg::metrics::{
    aggregate, compute_cdr, confusion, evaluate_pair, structure_mask, SegMetrics, Structure,
    CDR_SCREEN_THRESHOLD,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{brute_counts, brute_ratios};

fn random_map(rng: &mut ChaCha8Rng, side: u32) -> LabelMap {
    let data = (0..side * side).map(|_| rng.random_range(0..3u8)).collect();
    LabelMap::new(side, side, data).unwrap()
}

fn check_against_oracle(pred: &LabelMap, gt: &LabelMap) {
    let pair = evaluate_pair(pred, gt).unwrap();
    for (structure, m) in [(Structure::Disc, pair.od), (Structure::Cup, pair.oc)] {
        let member = |l: u8| match structure {
            Structure::Disc => l >= 1,
            Structure::Cup => l == 2,
        };
        let expected = brute_counts(pred.as_slice(), gt.as_slice(), member);
        let c = confusion(
            &structure_mask(pred, structure),
            &structure_mask(gt, structure),
        )
        .unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), expected);
        let got = [m.dice, m.jaccard, m.sensitivity, m.specificity];
        for (g, o) in got.iter().zip(brute_ratios(expected)) {
            if let Some(o) = o {
                assert!((g - o).abs() <= 1e-12, "{g} vs {o}");
            }
        }
        let o = m.jaccard;
        assert_eq!(m.dice, 2.0 * o / (1.0 + o));
        assert_eq!(m.overlap_error, 1.0 - o);
        assert_eq!(m.balanced_accuracy, (m.sensitivity + m.specificity) / 2.0);
    }
}

#[test]
fn two_hundred_random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let pred = random_map(&mut rng, 16);
        let gt = random_map(&mut rng, 16);
        check_against_oracle(&pred, &gt);
    }
}

#[test]
fn self_comparison_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_map(&mut rng, 16);
    let pair = evaluate_pair(&m, &m).unwrap();
    assert_eq!(pair.od.values(), [1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(pair.oc.values(), [1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn aggregate_equals_column_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<SegMetrics> = (0..37)
        .map(|_| {
            evaluate_pair(&random_map(&mut rng, 16), &random_map(&mut rng, 16))
                .unwrap()
                .oc
        })
        .collect();
    let agg = aggregate(&rows).unwrap();
    for (j, v) in agg.values().iter().enumerate() {
        let mean = rows.iter().map(|r| r.values()[j]).sum::<f64>() / rows.len() as f64;
        assert!((v - mean).abs() <= 1e-12);
    }
    assert!(aggregate(&[]).is_err());
}

fn concentric(side: u32, disc_r: f64, cup_r: f64) -> LabelMap {
    let c = side as f64 / 2.0;
    LabelMap::from_fn(side, side, |x, y| {
        let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
        if d <= cup_r {
            odseg::data::Class::Cup
        } else if d <= disc_r {
            odseg::data::Class::Rim
        } else {
            odseg::data::Class::Background
        }
    })
}

#[test]
fn cdr_on_concentric_circles() {
    for (disc, cup) in [(40.0, 20.0), (30.5, 15.25), (11.0, 5.5)] {
        let r = compute_cdr(&concentric(128, disc, cup)).unwrap();
        assert!((r.cdr - 0.5).abs() <= 0.05, "{r:?}");
        assert!(!r.screen_positive);
    }
    let whole = compute_cdr(&concentric(128, 0.0, 30.0)).unwrap();
    assert_eq!(whole.cdr, 1.0);
    assert!(whole.screen_positive);
    assert!(compute_cdr(&concentric(64, 0.0, 0.0)).is_err());
}

proptest! {
    #[test]
    fn ratio_fields_bounded_and_identities_exact(seed in any::<u64>(), side in 1u32..=16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_map(&mut rng, side);
        let gt = random_map(&mut rng, side);
        check_against_oracle(&pred, &gt);
        let pair = evaluate_pair(&pred, &gt).unwrap();
        for v in pair.od.values().into_iter().chain(pair.oc.values()) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // overlap measures are symmetric in prediction and ground truth
        let swapped = evaluate_pair(&gt, &pred).unwrap();
        prop_assert_eq!(swapped.od.dice, pair.od.dice);
        prop_assert_eq!(swapped.oc.jaccard, pair.oc.jaccard);
    }

    #[test]
    fn screening_follows_threshold(disc in 10.0f64..40.0, ratio in 0.1f64..1.0) {
        let r = compute_cdr(&concentric(96, disc, disc * ratio)).unwrap();
        prop_assert_eq!(r.screen_positive, r.cdr > CDR_SCREEN_THRESHOLD);
        prop_assert!(r.cdr <= 1.0);
    }
}
