use proptest::prelude::*;

use ppp_cusum::baselines::{kie_statistic, mmd2_unbiased};
use ppp_cusum::embedding::{embed_window, CoordinateSplit, IntensityMatrix, PointWindow, RescaleStats};
use ppp_cusum::harness::{classify, read_report_csv, write_report_csv, DetectorSummary, ExperimentReport, Outcome};
use ppp_cusum::lowrank::{frobenius, restricted_svd_score, singular_values};

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..=1.0f64, dim), 0..max)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = IntensityMatrix> {
    prop::collection::vec(-5.0..5.0f64, rows * cols)
        .prop_map(move |d| IntensityMatrix::from_row_major(rows, cols, d).unwrap())
}

proptest! {
    #[test]
    fn embedding_is_additive_over_windows(a in points(3, 12), b in points(3, 12), m in 1usize..4) {
        let split = CoordinateSplit::new(vec![2], vec![0, 1]).unwrap();
        let both: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let ea = embed_window(&PointWindow::from_points(1, 3, &a).unwrap(), &split, m).unwrap();
        let eb = embed_window(&PointWindow::from_points(1, 3, &b).unwrap(), &split, m).unwrap();
        let ab = embed_window(&PointWindow::from_points(1, 3, &both).unwrap(), &split, m).unwrap();
        let mut sum = ea.clone();
        sum.add_assign(&eb);
        prop_assert!(sum.max_abs_diff(&ab) < 1e-9);
    }

    #[test]
    fn rescaled_values_stay_in_unit_cube(raw in prop::collection::vec(-50.0..50.0f64, 2), lo in -10.0..0.0f64, span in 0.1..10.0f64) {
        let stats = RescaleStats::new(vec![lo; 2], vec![lo + span; 2]).unwrap();
        for v in stats.apply(&raw).unwrap() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn singular_values_are_sorted_and_carry_the_energy(d in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = singular_values(&d).unwrap();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        let energy: f64 = s.iter().map(|v| v * v).sum();
        let f = frobenius(&d).unwrap();
        prop_assert!((energy - f * f).abs() < 1e-9 * (1.0 + f * f));
    }

    #[test]
    fn restricted_score_is_bounded_by_frobenius(d in matrix(9, 3), n2 in 1usize..400, r in 1usize..4) {
        let s = restricted_svd_score(&d, r, n2, 2, 1, 2.0).unwrap();
        prop_assert!(s >= 0.0 && s <= frobenius(&d).unwrap() + 1e-9);
    }

    // The trim level shrinks as r grows, so rank monotonicity only holds
    // once every rank keeps the full basis: n2 ≥ 3 · 3^6.
    #[test]
    fn restricted_score_is_monotone_in_rank_untrimmed(d in matrix(9, 3), n2 in 2187usize..5000) {
        let mut prev = 0.0;
        for r in 1..=3 {
            let s = restricted_svd_score(&d, r, n2, 2, 1, 2.0).unwrap();
            prop_assert!(s >= prev - 1e-12);
            prev = s;
        }
    }

    #[test]
    fn mmd_is_symmetric(a in points(2, 6), b in points(2, 6), h in 0.05..2.0f64) {
        let x: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        let y: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        prop_assert!((mmd2_unbiased(&x, &y, h) - mmd2_unbiased(&y, &x, h)).abs() < 1e-12);
    }

    #[test]
    fn kie_ignores_point_order(a in points(2, 8), b in points(2, 8)) {
        let wa = PointWindow::from_points(1, 2, &a).unwrap();
        let mut rev = a.clone();
        rev.reverse();
        let wr = PointWindow::from_points(1, 2, &rev).unwrap();
        let wb = PointWindow::from_points(2, 2, &b).unwrap();
        let h = [0.2, 0.3];
        let s1 = kie_statistic(std::slice::from_ref(&wa), std::slice::from_ref(&wb), &h, 6);
        let s2 = kie_statistic(std::slice::from_ref(&wr), std::slice::from_ref(&wb), &h, 6);
        prop_assert!((s1 - s2).abs() < 1e-9);
    }

    #[test]
    fn outcomes_partition_and_aggregate_order_free(
        alarms in prop::collection::vec(prop::option::of(1usize..40), 1..30),
        change in prop::option::of(5usize..30),
        shift in 0usize..30,
    ) {
        for a in &alarms {
            let o = classify(*a, change, 40);
            let hits = [matches!(o, Outcome::FalseAlarm), matches!(o, Outcome::Correct { .. }), matches!(o, Outcome::NoAlarm)];
            prop_assert_eq!(hits.iter().filter(|&&h| h).count(), 1);
        }
        let n = alarms.len();
        let mut rotated = alarms.clone();
        rotated.rotate_left(shift % n);
        let a = DetectorSummary::from_alarms("m", alarms, vec![1.0; n], change, 40);
        let b = DetectorSummary::from_alarms("m", rotated, vec![1.0; n], change, 40);
        prop_assert!((a.false_alarm_rate + a.correct_detection_rate + a.no_alarm_rate - 1.0).abs() < 1e-12);
        prop_assert_eq!(
            (a.false_alarm_rate, a.correct_detection_rate, a.no_alarm_rate, a.add_mean, a.add_sd),
            (b.false_alarm_rate, b.correct_detection_rate, b.no_alarm_rate, b.add_mean, b.add_sd)
        );
    }

    #[test]
    fn report_csv_round_trips(
        alarms in prop::collection::vec(prop::option::of(1usize..40), 1..10),
        thresholds in prop::collection::vec(0.0..100.0f64, 10),
        change in prop::option::of(5usize..30),
    ) {
        let n = alarms.len();
        let report = ExperimentReport {
            replications: n,
            n_train: 4,
            n_total: 40,
            change_at: change,
            detectors: vec![
                DetectorSummary::from_alarms("matrix", alarms.clone(), thresholds[..n].to_vec(), change, 40),
                DetectorSummary::from_alarms("kie", alarms, thresholds[..n].to_vec(), change, 40),
            ],
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report).unwrap();
        prop_assert_eq!(read_report_csv(buf.as_slice()).unwrap(), report);
    }
}
