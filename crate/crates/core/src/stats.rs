//! Summary statistics over heatmap values.

use serde::{Deserialize, Serialize};

/// Median, quartiles and the top-20% tail of a value list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Values at or above the 80th percentile, ascending.
    pub top20: Vec<f64>,
}

/// Linear-interpolated quantile of ascending `sorted` data, `p` in [0, 1].
///
/// Position `(n - 1) * p`, interpolated between its neighbors.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty list");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `None` is the empty-statistics marker for an empty input.
pub fn summarize(values: &[f64]) -> Option<ValueSummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let p80 = quantile_sorted(&sorted, 0.80);
    Some(ValueSummary {
        count: sorted.len(),
        median: quantile_sorted(&sorted, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        top20: sorted.iter().copied().filter(|&v| v >= p80).collect(),
    })
}

/// Mean and sample standard deviation (n - 1); std is 0 below two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!((s.q1, s.q3, s.iqr), (2.0, 4.0, 2.0));
        assert_eq!(s.top20, vec![5.0]);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(summarize(&[]).is_none());
        let c = summarize(&[4.5; 7]).unwrap();
        assert_eq!(c.iqr, 0.0);
        let one = summarize(&[2.5]).unwrap();
        assert_eq!((one.median, one.iqr), (2.5, 0.0));
        assert_eq!(one.top20, vec![2.5]);
    }

    #[test]
    fn even_length_median_is_midpoint() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!((s.q1, s.q3), (1.75, 3.25));
    }

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), Some((3.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }

    proptest! {
        #[test]
        fn order_invariant_and_bounded(mut v in proptest::collection::vec(-1e6f64..1e6, 1..60)) {
            let a = summarize(&v).unwrap();
            v.reverse();
            let b = summarize(&v).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.q1 <= a.median && a.median <= a.q3 && a.iqr >= 0.0);
            prop_assert!(!a.top20.is_empty());
        }
    }
}
