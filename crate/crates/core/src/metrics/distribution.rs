use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of histogram bins.
pub const MAX_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Raw per-sample values with a Freedman–Diaconis histogram and summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub values: Vec<f64>,
    pub histogram: Histogram,
    pub summary: SummaryStats,
}

/// Linear-interpolated percentile of sorted data (`q` in `[0, 100]`).
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl DistributionSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no values to summarize".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distribution value"));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        // Summing in sorted order keeps the mean independent of input order.
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let summary = SummaryStats {
            mean,
            median: percentile(&sorted, 50.0),
            p5: percentile(&sorted, 5.0),
            p95: percentile(&sorted, 95.0),
        };
        let histogram = histogram(&sorted);
        Ok(DistributionSummary {
            values,
            histogram,
            summary,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn histogram(sorted: &[f64]) -> Histogram {
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if hi == lo {
        return Histogram {
            edges: vec![lo - 0.5, lo + 0.5],
            counts: vec![n],
        };
    }
    let iqr = percentile(sorted, 75.0) - percentile(sorted, 25.0);
    let width = 2.0 * iqr / (n as f64).cbrt();
    let bins = if width > 0.0 {
        ((hi - lo) / width).ceil().clamp(1.0, MAX_BINS as f64) as usize
    } else {
        MAX_BINS.min(n)
    };
    let step = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + step * i as f64).collect();
    edges.push(hi);
    let mut counts = vec![0usize; bins];
    for &v in sorted {
        let b = (((v - lo) / step) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_summary() {
        let d = DistributionSummary::from_values(vec![4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(d.summary.mean, 3.0);
        assert_eq!(d.summary.median, 3.0);
        assert!((d.summary.p5 - 1.2).abs() < 1e-12);
        assert!((d.summary.p95 - 4.8).abs() < 1e-12);
        assert_eq!(d.values, vec![4.0, 1.0, 3.0, 2.0, 5.0]);
    }

    #[test]
    fn constant_values_single_bin() {
        let d = DistributionSummary::from_values(vec![0.0; 7]).unwrap();
        assert_eq!(d.histogram.counts, vec![7]);
        assert_eq!(d.summary.p95, 0.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(DistributionSummary::from_values(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn counts_sum_and_order_invariance(
            mut v in proptest::collection::vec(-1e3f64..1e3, 1..300),
            seed in any::<u64>(),
        ) {
            let a = DistributionSummary::from_values(v.clone()).unwrap();
            prop_assert_eq!(a.histogram.counts.iter().sum::<usize>(), v.len());
            prop_assert!(a.histogram.counts.len() <= MAX_BINS);
            prop_assert_eq!(a.histogram.edges.len(), a.histogram.counts.len() + 1);
            // Deterministic shuffle by rotating and reversing.
            let k = (seed % v.len() as u64) as usize;
            v.rotate_left(k);
            v.reverse();
            let b = DistributionSummary::from_values(v).unwrap();
            prop_assert_eq!(a.histogram, b.histogram);
            prop_assert_eq!(a.summary, b.summary);
        }
    }
}
