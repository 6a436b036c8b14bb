//! Uncertainty-quality curves: accuracy over the most-certain fraction of a
//! sample, and empirical-CDF counts over an uncertainty grid.

use crate::error::{Error, Result};
use crate::evaluation::report::CurvePoints;
use crate::uncertainty::UncertaintyScore;

/// Accuracy over the `τ·n` most-certain samples for retained fractions
/// τ ∈ {0.1, …, 1.0}. Sorting is stable: ties keep input order.
pub fn ue_accuracy_curve(scores: &[UncertaintyScore], correct: &[bool]) -> Result<CurvePoints> {
    if scores.is_empty() || scores.len() != correct.len() {
        return Err(Error::ShapeError(format!(
            "need equal, non-zero score/correctness counts (got {} and {})",
            scores.len(),
            correct.len()
        )));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].value().partial_cmp(&scores[b].value()).unwrap());
    let hits: Vec<f64> = order.iter().map(|&i| if correct[i] { 1.0 } else { 0.0 }).collect();

    let points = (1..=10)
        .map(|step| {
            // round(step/10 · n) in integers, at least one sample
            let m = ((step * n + 5) / 10).clamp(1, n);
            let acc = hits[..m].iter().sum::<f64>() / m as f64;
            (step as f64 / 10.0, acc)
        })
        .collect();
    CurvePoints::new("ue-accuracy", points)
}

/// Empirical CDF counts: for thresholds `u` on a uniform grid over
/// `[min, max]`, the number of scores ≤ u. A constant sample collapses to the
/// single point `(value, n)`.
pub fn count_vs_uncertainty_curve(
    scores: &[UncertaintyScore],
    grid_size: usize,
) -> Result<CurvePoints> {
    if scores.is_empty() {
        return Err(Error::ShapeError("no scores to bin".into()));
    }
    if grid_size < 2 {
        return Err(Error::ConfigError("count grid needs at least 2 thresholds".into()));
    }
    let mut sorted: Vec<f64> = scores.iter().map(UncertaintyScore::value).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return CurvePoints::new("count-vs-uncertainty", vec![(min, sorted.len() as f64)]);
    }
    let points = (0..grid_size)
        .map(|g| {
            // endpoints land exactly on min and max
            let u = if g == grid_size - 1 {
                max
            } else {
                min + (max - min) * g as f64 / (grid_size - 1) as f64
            };
            let count = sorted.partition_point(|&s| s <= u);
            (u, count as f64)
        })
        .collect();
    CurvePoints::new("count-vs-uncertainty", points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use approx::assert_abs_diff_eq;

    fn scores(values: &[f64]) -> Vec<UncertaintyScore> {
        values.iter().map(|&v| UncertaintyScore::new(v).unwrap()).collect()
    }

    #[test]
    fn all_correct_gives_a_constant_one_curve() {
        let s = scores(&[0.3, 0.1, 0.9, 0.5]);
        let curve = ue_accuracy_curve(&s, &[true; 4]).unwrap();
        assert_eq!(curve.points.len(), 10);
        for &(_, acc) in &curve.points {
            assert_abs_diff_eq!(acc, 1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn errors_with_the_highest_scores_keep_the_low_half_clean() {
        // 10 samples; the 5 wrong ones carry the 5 highest scores
        let values: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let correct: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let curve = ue_accuracy_curve(&scores(&values), &correct).unwrap();
        for &(tau, acc) in &curve.points {
            if tau <= 0.5 + 1e-12 {
                assert_abs_diff_eq!(acc, 1.0, epsilon = 0.0);
            } else {
                assert!(acc < 1.0);
            }
        }
        // fully retained → base accuracy
        assert_abs_diff_eq!(curve.points[9].1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ue_accuracy_matches_a_brute_force_oracle() {
        let mut rng = RngStream::new(10, 0);
        let values: Vec<f64> = (0..37).map(|_| rng.next_f64()).collect();
        let correct: Vec<bool> = (0..37).map(|_| rng.next_bool(0.7)).collect();
        let curve = ue_accuracy_curve(&scores(&values), &correct).unwrap();
        // oracle: re-sort pairs with an independent stable sort
        let mut pairs: Vec<(f64, bool)> = values.iter().copied().zip(correct.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (step, &(tau, acc)) in (1..=10).zip(&curve.points) {
            let m = ((step * 37 + 5) / 10).max(1);
            let expect =
                pairs[..m].iter().filter(|&&(_, c)| c).count() as f64 / m as f64;
            assert_abs_diff_eq!(tau, step as f64 / 10.0, epsilon = 1e-15);
            assert_abs_diff_eq!(acc, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn tied_scores_keep_input_order() {
        // all scores equal; first 2 of 4 correct. Stable sort keeps input
        // order, so the 25% point sees sample 0 (correct).
        let s = scores(&[0.5, 0.5, 0.5, 0.5]);
        let curve = ue_accuracy_curve(&s, &[true, true, false, false]).unwrap();
        assert_abs_diff_eq!(curve.points[2].1, 1.0, epsilon = 0.0); // τ=0.3 → m=1
        assert_abs_diff_eq!(curve.points[4].1, 1.0, epsilon = 0.0); // τ=0.5 → m=2
        assert_abs_diff_eq!(curve.points[9].1, 0.5, epsilon = 0.0);
    }

    #[test]
    fn count_curve_is_a_nondecreasing_cdf_ending_at_n() {
        let mut rng = RngStream::new(11, 0);
        let values: Vec<f64> = (0..50).map(|_| rng.next_f64() * 3.0).collect();
        let curve = count_vs_uncertainty_curve(&scores(&values), 17).unwrap();
        assert_eq!(curve.points.len(), 17);
        for w in curve.points.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert_abs_diff_eq!(curve.points[16].1, 50.0, epsilon = 0.0);
    }

    #[test]
    fn count_curve_matches_direct_counting() {
        let mut rng = RngStream::new(12, 0);
        let values: Vec<f64> = (0..23).map(|_| rng.next_f64()).collect();
        let curve = count_vs_uncertainty_curve(&scores(&values), 9).unwrap();
        for &(u, y) in &curve.points {
            let direct = values.iter().filter(|&&v| v <= u).count() as f64;
            assert_abs_diff_eq!(y, direct, epsilon = 0.0);
        }
    }

    #[test]
    fn constant_scores_collapse_to_a_single_point() {
        let curve = count_vs_uncertainty_curve(&scores(&[0.7; 12]), 10).unwrap();
        assert_eq!(curve.points, vec![(0.7, 12.0)]);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(ue_accuracy_curve(&[], &[]).is_err());
        assert!(ue_accuracy_curve(&scores(&[0.1]), &[true, false]).is_err());
        assert!(count_vs_uncertainty_curve(&[], 10).is_err());
        assert!(count_vs_uncertainty_curve(&scores(&[0.1, 0.2]), 1).is_err());
    }
}
