//! Fixed-width histograms with numpy's binning rules.
//!
//! Edges are `lo + i * (hi - lo) / bins` with the last edge pinned to `hi`.
//! Bins are half-open except the last, which includes `hi`. Values outside
//! the range and NaNs are dropped.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistError {
    #[error("number of bins must be positive")]
    NoBins,
    #[error("range ({lo}, {hi}) must be finite with lo < hi")]
    BadRange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, (lo, hi): (f64, f64)) -> Result<Self, HistError> {
        if bins == 0 {
            return Err(HistError::NoBins);
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(HistError::BadRange { lo, hi });
        }
        let step = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| i as f64 * step + lo).collect();
        edges[bins] = hi;
        let norm = bins as f64 / (hi - lo);
        let mut counts = vec![0u64; bins];
        for &x in values {
            if !(x >= lo && x <= hi) {
                continue;
            }
            let mut i = (((x - lo) * norm) as usize).min(bins - 1);
            // The scaled index can be off by one next to an edge.
            if x < edges[i] {
                i -= 1;
            } else if i + 1 < bins && x >= edges[i + 1] {
                i += 1;
            }
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    /// numpy's default range: the finite data extent, widened by 0.5 on
    /// each side when it is a single point, or (0, 1) without data.
    pub fn auto_range(values: &[f64]) -> (f64, f64) {
        let finite = values.iter().copied().filter(|x| x.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if lo > hi {
            (0.0, 1.0)
        } else if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV with header `bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:?},{:?},{c}", self.edges[i], self.edges[i + 1]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edges_and_inclusive_last_bin() {
        let h = Histogram::new(&[0.0, 0.5, 1.0, 9.99, 10.0, 10.01, -0.1, f64::NAN], 10, (0.0, 10.0)).unwrap();
        assert_eq!(h.edges.len(), 11);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn single_bin_over_nothing() {
        let h = Histogram::new(&[], 1, (0.0, 1.0)).unwrap();
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n0.0,1.0,0\n");
    }

    #[test]
    fn default_range() {
        assert_eq!(Histogram::auto_range(&[]), (0.0, 1.0));
        assert_eq!(Histogram::auto_range(&[2.0, f64::NAN]), (1.5, 2.5));
        assert_eq!(Histogram::auto_range(&[3.0, -1.0, f64::INFINITY]), (-1.0, 3.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert_eq!(Histogram::new(&[], 0, (0.0, 1.0)), Err(HistError::NoBins));
        assert!(Histogram::new(&[], 3, (1.0, 1.0)).is_err());
        assert!(Histogram::new(&[], 3, (0.0, f64::INFINITY)).is_err());
    }

    proptest! {
        #[test]
        fn counts_match_linear_scan(values in prop::collection::vec(-10.0f64..110.0, 0..200), bins in 1usize..60) {
            let h = Histogram::new(&values, bins, (0.0, 100.0)).unwrap();
            let mut want = vec![0u64; bins];
            for &x in &values {
                if !(0.0..=100.0).contains(&x) {
                    continue;
                }
                let i = (0..bins).find(|&i| x >= h.edges[i] && (x < h.edges[i + 1] || i + 1 == bins)).unwrap();
                want[i] += 1;
            }
            prop_assert_eq!(&h.counts, &want);
            let inside = values.iter().filter(|x| (0.0..=100.0).contains(*x)).count() as u64;
            prop_assert_eq!(h.total(), inside);
        }
    }
}
