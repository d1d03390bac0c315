//! Randomized property tests over the numerical kernel and the metric
//! layer. Each property is an invariant that must hold for every input in
//! its domain, not just the fixtures pinned in the unit tests.

use proptest::prelude::*;

use uqattn::calibration::{
    apply_temperature, bin_index, compute_ece, PredictionRecord,
};
use uqattn::linalg::{matmul, sample_dropout_mask, softmax_rows, Matrix, RngStream};
use uqattn::selective::{coverage_at_threshold, risk_coverage};

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-50.0f64..50.0, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

fn records_strategy(max_len: usize) -> impl Strategy<Value = Vec<PredictionRecord>> {
    proptest::collection::vec(
        (1e-9f64..=1.0, 0usize..4, 0usize..4, proptest::collection::vec(-8.0f64..8.0, 4)),
        1..max_len,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (confidence, true_label, predicted_class, mean_logits))| {
                PredictionRecord {
                    example_id: i as u64,
                    true_label,
                    predicted_class,
                    confidence,
                    mean_logits,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(m in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| matrix_strategy(r, c))) {
        let soft = softmax_rows(&m);
        for r in 0..soft.rows() {
            let sum: f64 = soft.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(soft.row(r).iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn matmul_is_associative_up_to_roundoff(
        a in matrix_strategy(3, 4),
        b in matrix_strategy(4, 5),
        c in matrix_strategy(5, 2),
    ) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for i in 0..left.rows() {
            for j in 0..left.cols() {
                let x = left.get(i, j);
                let y = right.get(i, j);
                let scale = x.abs().max(y.abs()).max(1.0);
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn dropout_masks_are_pure_functions_of_their_seed(
        seed in any::<u64>(),
        rows in 1usize..6,
        cols in 1usize..6,
        rate in 0.0f64..0.95,
    ) {
        let a = sample_dropout_mask(&mut RngStream::new(seed), (rows, cols), rate).unwrap();
        let b = sample_dropout_mask(&mut RngStream::new(seed), (rows, cols), rate).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ece_is_bounded_and_bins_partition(records in records_strategy(60), bins in 1usize..12) {
        let report = compute_ece(&records, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.ece));
        let total: usize = report.bins.iter().map(|b| b.count).sum();
        prop_assert_eq!(total, records.len());
        for r in &records {
            let b = bin_index(r.confidence, bins);
            prop_assert!(r.confidence <= report.bins[b].hi);
            prop_assert!(r.confidence > report.bins[b].lo || b == 0);
        }
    }

    #[test]
    fn aurc_lies_between_best_and_worst_orderings(records in records_strategy(40)) {
        let curve = risk_coverage(&records, &[]).unwrap();
        prop_assert!((0.0..=1.0).contains(&curve.aurc));
        for point in &curve.points {
            prop_assert!((0.0..=1.0).contains(&point.risk));
        }
        // Coverage is strictly increasing along the sweep.
        for pair in curve.points.windows(2) {
            prop_assert!(pair[1].coverage > pair[0].coverage);
        }
    }

    #[test]
    fn coverage_never_increases_with_tau(records in records_strategy(40)) {
        let lo = coverage_at_threshold(&records, 0.3).unwrap();
        let mid = coverage_at_threshold(&records, 0.6).unwrap();
        let hi = coverage_at_threshold(&records, 0.9).unwrap();
        prop_assert!(lo.coverage >= mid.coverage);
        prop_assert!(mid.coverage >= hi.coverage);
    }

    #[test]
    fn temperature_preserves_argmax(records in records_strategy(30), t in 0.01f64..100.0) {
        let scaled = apply_temperature(&records, t).unwrap();
        for (before, after) in records.iter().zip(&scaled) {
            prop_assert_eq!(before.predicted_class, after.predicted_class);
            prop_assert!(after.confidence > 0.0 && after.confidence <= 1.0);
        }
    }
}
