//! Dimension selection: score random placements of each candidate set and
//! keep the candidate with the lowest median score.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::DatasetRecord;
use crate::geometry::{random_model, DesignSpace, DimensionSet};
use crate::raster::DEFAULT_RESOLUTION;
use crate::scoring::{Score, TargetSpec};
use crate::seed::stage_rng;
use crate::sim::{FrequencyGrid, SimRequest, Simulator};
use crate::stats::median;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    /// Samples per candidate.
    pub n_p: usize,
    pub seed: u64,
    pub freqs: FrequencyGrid,
    pub target: TargetSpec,
    /// Raster pitch for the images of persisted sample records.
    pub resolution: f64,
    /// Keep the samples of losing candidates as training records.
    pub keep_losers: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            n_p: 100,
            seed: 0,
            freqs: FrequencyGrid::default(),
            target: TargetSpec::wifi_dual_band(),
            resolution: DEFAULT_RESOLUTION,
            keep_losers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub id: String,
    /// Scores in sample order.
    pub scores: Vec<Score>,
    pub median: Score,
}

impl DimensionStats {
    pub fn from_scores(id: impl Into<String>, scores: Vec<Score>) -> Option<Self> {
        let raw: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let m = median(&raw)?;
        Some(DimensionStats {
            id: id.into(),
            scores,
            median: Score(m),
        })
    }

    pub fn sorted_scores(&self) -> Vec<f64> {
        crate::stats::sorted(&self.scores.iter().map(|s| s.0).collect::<Vec<_>>())
    }
}

/// Statistics plus the simulated samples they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSamples {
    pub stats: DimensionStats,
    pub records: Vec<DatasetRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub chosen: DimensionSet,
    /// One entry per candidate, in candidate order.
    pub stats: Vec<DimensionStats>,
    pub records: Vec<DatasetRecord>,
}

/// Simulates `cfg.n_p` random placements of `d`. The sample stream is keyed
/// by the candidate id, so a candidate's samples do not depend on its
/// position in the candidate list.
pub fn sample_candidate<S: Simulator + ?Sized>(
    space: &DesignSpace,
    d: &DimensionSet,
    cfg: &SelectorConfig,
    backend: &S,
) -> Result<CandidateSamples> {
    if cfg.n_p == 0 {
        return Err(Error::Config(String::from("n_p must be at least 1")));
    }
    cfg.target.check()?;
    d.check()?;
    let freqs = cfg.freqs.freqs()?;
    let mut rng = stage_rng(cfg.seed, &format!("dim-select/{}", d.id));
    let models = (0..cfg.n_p)
        .map(|i| random_model(space, d, &mut rng).map_err(|e| e.at_sample(i)))
        .collect::<Result<Vec<_>>>()?;
    let reqs = models
        .iter()
        .map(|m| SimRequest::new(m, &freqs))
        .collect::<Result<Vec<_>>>()?;
    let responses = backend.simulate_batch(&reqs);

    let mut records = Vec::with_capacity(cfg.n_p);
    for (i, (model, resp)) in models.iter().zip(responses).enumerate() {
        let resp = resp.map_err(|e| e.at_sample(i))?;
        let rec = DatasetRecord::from_model(model, resp, &cfg.target, cfg.resolution, 0)
            .map_err(|e| e.at_sample(i))?;
        records.push(rec);
    }
    let stats = DimensionStats::from_scores(d.id.clone(), records.iter().map(|r| r.score).collect())
        .ok_or(Error::Config(String::from("no samples")))?;
    log::info!("candidate {}: median score {:.3}", d.id, stats.median.0);
    Ok(CandidateSamples { stats, records })
}

/// Index of the smallest median, first one on ties.
pub fn argmin_median(stats: &[DimensionStats]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in stats.iter().enumerate() {
        if best.is_none_or(|b| s.median.0 < stats[b].median.0) {
            best = Some(i);
        }
    }
    best
}

pub fn select<S: Simulator + ?Sized>(
    space: &DesignSpace,
    candidates: &[DimensionSet],
    cfg: &SelectorConfig,
    backend: &S,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Config(String::from("no candidate dimension sets")));
    }
    let mut stats = Vec::with_capacity(candidates.len());
    let mut per_candidate = Vec::with_capacity(candidates.len());
    for d in candidates {
        let run = sample_candidate(space, d, cfg, backend)?;
        stats.push(run.stats);
        per_candidate.push(run.records);
    }
    let index = argmin_median(&stats).unwrap_or(0);
    let records = per_candidate
        .into_iter()
        .enumerate()
        .filter(|(i, _)| cfg.keep_losers || *i == index)
        .flat_map(|(_, r)| r)
        .collect();
    Ok(Selection {
        index,
        chosen: candidates[index].clone(),
        stats,
        records,
    })
}

/// Ranked-score table as CSV: one row per (candidate, rank) with the sorted
/// score, the sample index it came from and the raw score at that index.
pub fn export_stats(stats: &[DimensionStats]) -> String {
    let mut out = String::from("candidate,rank,sorted_score,sample,raw_score,median\n");
    for s in stats {
        let mut order: Vec<usize> = (0..s.scores.len()).collect();
        order.sort_by(|&a, &b| s.scores[a].0.total_cmp(&s.scores[b].0).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.id, rank, s.scores[i].0, i, s.scores[rank].0, s.median.0
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::FrequencyResponse;
    use crate::sim::Surrogate;
    use alloc::vec;

    struct Constant;

    impl Simulator for Constant {
        fn simulate(&self, req: &SimRequest<'_>) -> Result<FrequencyResponse> {
            FrequencyResponse::new(req.freqs.to_vec(), vec![-3.0; req.freqs.len()])
        }
    }

    fn stats(id: &str, scores: &[f64]) -> DimensionStats {
        DimensionStats::from_scores(id, scores.iter().map(|&v| Score(v)).collect()).unwrap()
    }

    fn small_cfg() -> SelectorConfig {
        SelectorConfig {
            n_p: 6,
            freqs: FrequencyGrid {
                start: 2.0,
                stop: 8.0,
                points: 61,
            },
            resolution: 0.25,
            ..SelectorConfig::default()
        }
    }

    #[test]
    fn medians_and_ties() {
        assert_eq!(stats("a", &[1.0]).median, Score(1.0));
        assert_eq!(stats("a", &[1.0, 3.0, 2.0]).median, Score(2.0));
        assert_eq!(stats("a", &[1.0, 2.0, 3.0, 4.0]).median, Score(2.5));
        let s = [stats("a", &[5.0]), stats("b", &[3.0]), stats("c", &[3.0])];
        assert_eq!(argmin_median(&s), Some(1));
        assert_eq!(argmin_median(&[]), None);
    }

    #[test]
    fn export_sorted_and_raw() {
        let csv = export_stats(&[stats("a", &[3.0, 1.0, 2.0])]);
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        let sorted: Vec<&str> = rows.iter().map(|r| r[2]).collect();
        let raw: Vec<&str> = rows.iter().map(|r| r[4]).collect();
        assert_eq!(sorted, ["1", "2", "3"]);
        assert_eq!(raw, ["3", "1", "2"]);
        assert_eq!(rows[0][3], "1");
    }

    #[test]
    fn constant_backend_picks_first() {
        let space = DesignSpace::new(30.0, 6.0);
        let c = vec![
            DimensionSet::from_pairs("x", &[(1.0, 2.0), (5.0, 1.0)]),
            DimensionSet::from_pairs("y", &[(1.0, 3.0), (2.0, 1.0)]),
        ];
        let sel = select(&space, &c, &small_cfg(), &Constant).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.stats[0].median, sel.stats[1].median);
        assert_eq!(sel.records.len(), 12);
        let strict = SelectorConfig {
            keep_losers: false,
            ..small_cfg()
        };
        assert_eq!(select(&space, &c, &strict, &Constant).unwrap().records.len(), 6);
    }

    #[test]
    fn sampling_is_keyed_by_candidate() {
        let space = DesignSpace::new(30.0, 6.0);
        let a = DimensionSet::from_pairs("a", &[(1.0, 4.0), (12.0, 1.0), (8.0, 2.0)]);
        let b = DimensionSet::from_pairs("b", &[(1.0, 4.0), (6.0, 2.0), (3.0, 3.0)]);
        let sur = Surrogate::default();
        let cfg = small_cfg();
        let ab = select(&space, &[a.clone(), b.clone()], &cfg, &sur).unwrap();
        let ba = select(&space, &[b, a], &cfg, &sur).unwrap();
        assert_eq!(ab.stats[0], ba.stats[1]);
        assert_eq!(ab.stats[1], ba.stats[0]);
        assert_eq!(ab.chosen.id, ba.chosen.id);
    }

    #[test]
    fn unplaceable_reports_sample() {
        let space = DesignSpace::new(10.0, 3.0);
        let d = DimensionSet::from_pairs("wide", &[(1.0, 1.0), (40.0, 1.0)]);
        let err = sample_candidate(&space, &d, &small_cfg(), &Constant).unwrap_err();
        assert!(matches!(err, Error::Sample { sample: 0, .. }), "{err:?}");
    }
}
