//! Small order statistics used across the workflow.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Sample median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn min(values: &[f64]) -> Option<f64> {
    values.iter().copied().min_by(f64::total_cmp)
}

/// Fixed-width histogram over `[floor(min), ceil(max)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], width: f64) -> Option<Self> {
        let lo = libm::floor(min(values)?);
        let hi = libm::ceil(values.iter().copied().max_by(f64::total_cmp)?);
        let bins = (libm::ceil((hi - lo) / width) as usize).max(1);
        let mut counts = alloc::vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Some(Histogram { lo, width, counts })
    }

    pub fn edges(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.counts.len()).map(move |i| {
            let a = self.lo + i as f64 * self.width;
            (a, a + self.width)
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[4.5]), Some(4.5));
        assert_eq!(median(&[1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), Some(2.5));
        assert_eq!(median(&[4.0, 6.0]), Some(5.0));
    }

    #[test]
    fn median_matches_brute_force_rank() {
        // for odd n the median has exactly (n-1)/2 values strictly below and above
        let vals = vec![5.0, -1.0, 3.5, 7.25, 0.0, 2.0, 9.0];
        let m = median(&vals).unwrap();
        assert_eq!(vals.iter().filter(|&&v| v < m).count(), 3);
        assert_eq!(vals.iter().filter(|&&v| v > m).count(), 3);
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[1.2, 1.4, 2.6, 3.0], 0.5).unwrap();
        assert_eq!(h.lo, 1.0);
        assert_eq!(h.counts, vec![2, 0, 0, 2]);
        assert_eq!(h.total(), 4);
        let single = Histogram::new(&[2.0], 0.5).unwrap();
        assert_eq!(single.counts, vec![1]);
    }
}
