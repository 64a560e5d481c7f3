mod common;

use proptest::prelude::*;

use sdped_core::eval::{benchmark, thin, BenchmarkOptions, BenchmarkReport, ToleranceSpec};
use sdped_core::maps::{EdgeMap, SoftEdgeMap};

fn row(scores: &[(usize, f32)]) -> SoftEdgeMap {
    let mut v = vec![0.0; 8];
    for &(c, s) in scores {
        v[c] = s;
    }
    SoftEdgeMap::from_vec(8, 1, v).unwrap()
}

fn hand_report() -> BenchmarkReport {
    let gt = EdgeMap::from_points(8, 1, &[(0, 0), (0, 6)]).unwrap();
    let a = row(&[(0, 0.905), (3, 0.605), (6, 0.305)]);
    let b = row(&[(0, 0.805), (2, 0.705), (4, 0.205)]);
    let tol = ToleranceSpec::pixels(0.5).unwrap();
    benchmark(&[a, b], &[gt.clone(), gt], tol, &BenchmarkOptions::default()).unwrap()
}

// Aggregate points, from the top threshold down:
// (R, P) = (.25, 1), (.5, 1), (.5, 2/3), (.5, .5), (.75, .6), (.75, .5)
#[test]
fn two_image_hand_scores() {
    let r = hand_report();
    assert!((r.ods - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.ods_threshold - 0.71).abs() < 1e-12);
    // A: best at t <= 0.305 (tp 2, fp 1); B: best at 0.71..=0.80 (tp 1, fp 0).
    assert_eq!((r.images[0].tp, r.images[0].fp, r.images[0].fn_), (2, 1, 0));
    assert_eq!((r.images[1].tp, r.images[1].fp, r.images[1].fn_), (1, 0, 1));
    assert!((r.ois - 0.75).abs() < 1e-12);
    // 0.25 * 1 + 0.25 * 1 + 0.25 * (0.5 + 0.6) / 2
    assert!((r.ap - 0.6375).abs() < 1e-12);
}

#[test]
fn top_thresholds_with_no_predictions_are_reported() {
    let r = hand_report();
    let top = r.curve.last().unwrap();
    assert_eq!((top.tp, top.fp, top.fn_), (0, 0, 4));
    assert_eq!(top.precision, 0.0);
}

#[test]
fn low_confidence_perfect_ranking_scores_one() {
    let mut rng = common::rng(4);
    let gt = thin(&common::synthetic_edges(&mut rng, 24, 24));
    let pred = SoftEdgeMap::from_vec(24, 24, gt.data().iter().map(|&b| if b { 0.3 } else { 0.0 }).collect()).unwrap();
    let r = benchmark(&[pred], &[gt], ToleranceSpec::pixels(1.0).unwrap(), &BenchmarkOptions::default()).unwrap();
    assert_eq!((r.ods, r.ois, r.ap), (1.0, 1.0, 1.0));
    assert!((r.ods_threshold - 0.01).abs() < 1e-12);
}

#[test]
fn report_round_trips_through_json() {
    let r = hand_report();
    assert_eq!(BenchmarkReport::from_json(&r.to_json()).unwrap(), r);
    assert_eq!(r.tolerance_pixels, Some(0.5));
    let tsv = r.curve_tsv();
    assert_eq!(tsv.lines().count(), 100);
    assert!(tsv.starts_with("threshold\ttp\tfp\tfn\t"));
}

#[test]
fn mixed_sizes_have_no_single_radius() {
    let mut rng = common::rng(9);
    let g1 = thin(&common::synthetic_edges(&mut rng, 20, 20));
    let g2 = thin(&common::synthetic_edges(&mut rng, 20, 30));
    let p1 = SoftEdgeMap::from_edge_map(&g1);
    let p2 = SoftEdgeMap::from_edge_map(&g2);
    let r = benchmark(&[p1, p2], &[g1, g2], ToleranceSpec::ratio(0.05).unwrap(), &BenchmarkOptions::default()).unwrap();
    assert_eq!(r.tolerance_pixels, None);
    assert_ne!(r.images[0].tolerance_pixels, r.images[1].tolerance_pixels);
}

#[test]
fn shape_mismatch_names_the_image() {
    let gt = EdgeMap::from_points(4, 4, &[(1, 1)]).unwrap();
    let pred = SoftEdgeMap::from_vec(5, 4, vec![0.0; 20]).unwrap();
    let err = benchmark(&[pred], &[gt], ToleranceSpec::pixels(1.0).unwrap(), &BenchmarkOptions::default()).unwrap_err();
    assert!(err.to_string().contains("image 0"), "{err}");
}

fn soft(rng: &mut impl rand::Rng, h: usize, w: usize) -> SoftEdgeMap {
    let data = (0..h * w).map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 }).collect();
    SoftEdgeMap::from_vec(w, h, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_are_ordered_and_bounded(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = common::rng(seed);
        let gts: Vec<EdgeMap> = (0..n).map(|_| thin(&common::synthetic_edges(&mut rng, 12, 12))).collect();
        let preds: Vec<SoftEdgeMap> = (0..n).map(|_| soft(&mut rng, 12, 12)).collect();
        let opts = BenchmarkOptions { n_thresholds: 19, ..Default::default() };
        let r = benchmark(&preds, &gts, ToleranceSpec::pixels(1.5).unwrap(), &opts).unwrap();
        for v in [r.ods, r.ois, r.ap] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let gt_total: usize = gts.iter().map(EdgeMap::count).sum();
        for p in &r.curve {
            prop_assert_eq!(p.tp + p.fn_, gt_total);
        }
    }

    #[test]
    fn single_image_ois_is_at_least_ods(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let gt = thin(&common::synthetic_edges(&mut rng, 12, 12));
        let pred = soft(&mut rng, 12, 12);
        let opts = BenchmarkOptions { n_thresholds: 19, ..Default::default() };
        let r = benchmark(&[pred], &[gt], ToleranceSpec::pixels(1.5).unwrap(), &opts).unwrap();
        prop_assert!(r.ois + 1e-12 >= r.ods);
    }

    #[test]
    fn without_thinning_recall_falls_with_threshold(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let gt = thin(&common::synthetic_edges(&mut rng, 12, 12));
        let pred = soft(&mut rng, 12, 12);
        let opts = BenchmarkOptions { n_thresholds: 19, thin_predictions: false, ..Default::default() };
        let r = benchmark(&[pred], &[gt], ToleranceSpec::pixels(1.5).unwrap(), &opts).unwrap();
        for w in r.curve.windows(2) {
            prop_assert!(w[1].tp + w[1].fp <= w[0].tp + w[0].fp);
            prop_assert!(w[1].tp <= w[0].tp);
        }
    }
}
