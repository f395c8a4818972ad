//! Worst-case deviation of |S11| from a multi-band dB target.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest positive S11 tolerated in a response, in dB.
pub const S11_SLACK_DB: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    #[serde(rename = "lo")]
    pub f_lo: f64,
    #[serde(rename = "hi")]
    pub f_hi: f64,
    #[serde(rename = "db")]
    pub threshold_db: f64,
}

impl Band {
    pub const fn new(f_lo: f64, f_hi: f64, threshold_db: f64) -> Self {
        Band {
            f_lo,
            f_hi,
            threshold_db,
        }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_lo && f <= self.f_hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub bands: Vec<Band>,
}

impl TargetSpec {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        let t = TargetSpec { bands };
        t.check()?;
        Ok(t)
    }

    /// `|S11| < -6 dB` over 2.4-2.5 GHz and 5.1-7 GHz.
    pub fn wifi_dual_band() -> Self {
        TargetSpec {
            bands: alloc::vec![Band::new(2.4, 2.5, -6.0), Band::new(5.1, 7.0, -6.0)],
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::InvalidTarget("no bands"));
        }
        for b in &self.bands {
            if !(b.f_lo > 0.0 && b.f_lo < b.f_hi) || !b.threshold_db.is_finite() {
                return Err(Error::InvalidTarget("bands need 0 < lo < hi and a finite level"));
            }
        }
        if self.bands.windows(2).any(|w| w[1].f_lo <= w[0].f_hi) {
            return Err(Error::InvalidTarget("bands must be sorted and non-overlapping"));
        }
        Ok(())
    }

    /// Every threshold shifted by `delta_db`.
    pub fn shifted(&self, delta_db: f64) -> Self {
        TargetSpec {
            bands: self
                .bands
                .iter()
                .map(|b| Band::new(b.f_lo, b.f_hi, b.threshold_db + delta_db))
                .collect(),
        }
    }
}

/// Sampled |S11| in dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    freqs: Vec<f64>,
    s11_db: Vec<f64>,
}

impl FrequencyResponse {
    pub fn new(freqs: Vec<f64>, s11_db: Vec<f64>) -> Result<Self> {
        if freqs.len() != s11_db.len() {
            return Err(Error::InvalidResponse("frequency and S11 lengths differ"));
        }
        if freqs.is_empty() {
            return Err(Error::InvalidResponse("empty response"));
        }
        if !freqs.iter().all(|f| f.is_finite()) || freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidResponse("frequencies must be strictly increasing"));
        }
        if s11_db.iter().any(|v| !v.is_finite() || *v > S11_SLACK_DB) {
            return Err(Error::InvalidResponse("S11 must be finite and <= 0.5 dB"));
        }
        Ok(FrequencyResponse { freqs, s11_db })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn s11_db(&self) -> &[f64] {
        &self.s11_db
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.freqs.iter().copied().zip(self.s11_db.iter().copied())
    }
}

/// Signed score in dB; `<= 0` means every in-band sample meets the target.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(pub f64);

impl Score {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn meets_target(self) -> bool {
        meets_target(self)
    }
}

/// Max over bands and in-band samples of `s11 - threshold`. Samples only,
/// no interpolation.
pub fn score(resp: &FrequencyResponse, target: &TargetSpec) -> Result<Score> {
    let mut worst = f64::NEG_INFINITY;
    for (index, band) in target.bands.iter().enumerate() {
        let band_worst = resp
            .iter()
            .filter(|&(f, _)| band.contains(f))
            .map(|(_, s)| s - band.threshold_db)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .ok_or(Error::EmptyBand {
                index,
                lo: band.f_lo,
                hi: band.f_hi,
            })?;
        worst = worst.max(band_worst);
    }
    Ok(Score(worst))
}

pub fn meets_target(s: Score) -> bool {
    s.0 <= 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid() -> Vec<f64> {
        (0..=200).map(|i| 2.0 + 6.0 * i as f64 / 200.0).collect()
    }

    #[test]
    fn reference_examples() {
        let f = grid();
        let n = f.len();
        let t = TargetSpec::wifi_dual_band();
        let flat = |v: f64| FrequencyResponse::new(f.clone(), vec![v; n]).unwrap();
        assert_eq!(score(&flat(-6.0), &t).unwrap(), Score(0.0));
        assert_eq!(score(&flat(-3.0), &t).unwrap(), Score(3.0));

        let s: Vec<f64> = f
            .iter()
            .map(|&x| if x < 4.0 { -10.0 } else { -7.0 })
            .collect();
        let r = FrequencyResponse::new(f.clone(), s).unwrap();
        assert_eq!(score(&r, &t).unwrap(), Score(-1.0));
    }

    #[test]
    fn meets_target_cut() {
        assert!(meets_target(Score(0.0)));
        assert!(!meets_target(Score(2.2)));
        assert!(meets_target(Score(-0.5)));
    }

    #[test]
    fn empty_band_is_named() {
        let r = FrequencyResponse::new(vec![1.0, 2.0, 3.0], vec![-1.0; 3]).unwrap();
        let t = TargetSpec::new(vec![Band::new(1.5, 2.5, -6.0), Band::new(3.1, 3.5, -6.0)]).unwrap();
        assert_eq!(
            score(&r, &t),
            Err(Error::EmptyBand {
                index: 1,
                lo: 3.1,
                hi: 3.5
            })
        );
    }

    #[test]
    fn response_validation() {
        assert!(FrequencyResponse::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(FrequencyResponse::new(vec![1.0, 2.0], vec![0.0]).is_err());
        assert!(FrequencyResponse::new(vec![1.0, 2.0], vec![0.0, 0.6]).is_err());
        assert!(FrequencyResponse::new(vec![1.0, 2.0], vec![0.0, f64::NAN]).is_err());
        assert!(FrequencyResponse::new(vec![1.0, 2.0], vec![0.4, -60.0]).is_ok());
    }

    #[test]
    fn target_validation() {
        assert!(TargetSpec::new(vec![]).is_err());
        assert!(TargetSpec::new(vec![Band::new(2.5, 2.4, -6.0)]).is_err());
        assert!(TargetSpec::new(vec![Band::new(5.0, 6.0, -6.0), Band::new(2.0, 3.0, -6.0)]).is_err());
        assert!(TargetSpec::new(vec![Band::new(2.0, 3.0, -6.0), Band::new(2.5, 4.0, -6.0)]).is_err());
    }
}
