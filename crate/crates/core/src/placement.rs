//! The generative loop: random placements of a fixed dimension set, filtered
//! by the score classifier, simulated in batches, with the classifier
//! retrained and the threshold moved after every batch.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierState, DatasetRecord, TrainConfig};
use crate::geometry::{random_model, AntennaModel, DesignSpace, DimensionSet};
use crate::raster::{image_digest, rasterize, GeometryImage, DEFAULT_RESOLUTION};
use crate::scoring::{score, TargetSpec};
use crate::seed::{stage_rng, substream};
use crate::sim::{FrequencyGrid, SimRequest, Simulator};
use crate::stats::{median, min, Histogram};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Median score of every record in the store.
    #[default]
    AccumulatedMedian,
    /// Median score of the latest batch only.
    PreviousBatchMedian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_batch: usize,
    pub n_iter: usize,
    /// Threshold for iteration 1 when a warm-start classifier is supplied.
    pub initial_threshold: f64,
    pub threshold_mode: ThresholdMode,
    /// Proposals allowed between two accepted designs before the filter
    /// counts as starved.
    pub max_proposals_per_accept: usize,
    /// Threshold increase applied once when the filter starves.
    pub relax_db: f64,
    pub top_n: usize,
    pub resolution: f64,
    pub freqs: FrequencyGrid,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_batch: 500,
            n_iter: 8,
            initial_threshold: 6.0,
            threshold_mode: ThresholdMode::AccumulatedMedian,
            max_proposals_per_accept: 10_000,
            relax_db: 1.0,
            top_n: 5,
            resolution: DEFAULT_RESOLUTION,
            freqs: FrequencyGrid::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_batch == 0 || self.n_iter == 0 {
            return Err(Error::Config(String::from("n_batch and n_iter must be at least 1")));
        }
        if self.max_proposals_per_accept == 0 {
            return Err(Error::Config(String::from("max_proposals_per_accept must be at least 1")));
        }
        Ok(())
    }
}

/// Append-only record sequence with unique ids and nondecreasing iteration
/// tags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStore {
    records: Vec<DatasetRecord>,
    ids: BTreeSet<String>,
}

impl DatasetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: DatasetRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration < last.iteration {
                return Err(Error::IterationOrder {
                    last: last.iteration,
                    got: record.iteration,
                });
            }
        }
        if self.ids.contains(&record.id) {
            return Err(Error::DuplicateRecord { id: record.id });
        }
        self.ids.insert(record.id.clone());
        self.records.push(record);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn batch(&self, iteration: usize) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.iteration == iteration)
    }

    /// Distinct iteration tags in order.
    pub fn iterations(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.records.iter().map(|r| r.iteration).collect();
        out.dedup();
        out
    }

    /// The `n` best records by true score, store order on ties.
    pub fn best(&self, n: usize) -> Vec<DatasetRecord> {
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.sort_by(|&a, &b| {
            self.records[a]
                .score
                .0
                .total_cmp(&self.records[b].score.0)
                .then(a.cmp(&b))
        });
        idx.into_iter().take(n).map(|i| self.records[i].clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Filter threshold in force, `None` when the iteration was unfiltered.
    pub threshold: Option<f64>,
    pub proposals: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub failures: usize,
    pub relaxed: bool,
    pub median: f64,
    pub min: f64,
    /// Training epochs of the classifier fitted after this iteration.
    pub train_epochs: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct GenerationResult {
    pub store: DatasetStore,
    pub best: Vec<DatasetRecord>,
    pub log: Vec<IterationLog>,
    /// The most recent classifier, if one was trained or supplied.
    pub classifier: Option<ClassifierState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub iteration: usize,
    pub n: usize,
    pub median: f64,
    pub min: f64,
    pub histogram: Histogram,
}

pub fn batch_stats(store: &DatasetStore, bin_width: f64) -> Vec<BatchStats> {
    store
        .iterations()
        .into_iter()
        .filter_map(|k| {
            let scores: Vec<f64> = store.batch(k).map(|r| r.score.0).collect();
            Some(BatchStats {
                iteration: k,
                n: scores.len(),
                median: median(&scores)?,
                min: min(&scores)?,
                histogram: Histogram::new(&scores, bin_width)?,
            })
        })
        .collect()
}

fn next_threshold(store: &DatasetStore, mode: ThresholdMode, iteration: usize) -> Option<f64> {
    let scores: Vec<f64> = match mode {
        ThresholdMode::AccumulatedMedian => store.records().iter().map(|r| r.score.0).collect(),
        ThresholdMode::PreviousBatchMedian => store.batch(iteration).map(|r| r.score.0).collect(),
    };
    median(&scores)
}

struct Proposal {
    model: AntennaModel,
    image: GeometryImage,
    id: String,
    predicted: Option<f64>,
    threshold: Option<f64>,
}

/// Runs `cfg.n_iter` iterations of propose, filter, simulate, retrain.
///
/// Iteration 1 is unfiltered unless `warm_start` supplies a classifier, in
/// which case it filters against `cfg.initial_threshold`. The classifier is
/// retrained between iterations, not after the last one.
pub fn run_generation<S: Simulator + ?Sized>(
    space: &DesignSpace,
    dims: &DimensionSet,
    cfg: &GeneratorConfig,
    backend: &S,
    target: &TargetSpec,
    warm_start: Option<ClassifierState>,
) -> Result<GenerationResult> {
    cfg.check()?;
    target.check()?;
    dims.check()?;
    let freqs = cfg.freqs.freqs()?;
    let mut store = DatasetStore::new();
    let mut log = Vec::with_capacity(cfg.n_iter);
    let mut classifier = warm_start.map(|c| c.with_threshold(cfg.initial_threshold));

    for k in 1..=cfg.n_iter {
        let mut rng = stage_rng(cfg.seed, &format!("generate/{k}"));
        let mut it = IterationLog {
            iteration: k,
            threshold: classifier.as_ref().map(|c| c.threshold),
            proposals: 0,
            rejected: 0,
            duplicates: 0,
            failures: 0,
            relaxed: false,
            median: f64::NAN,
            min: f64::NAN,
            train_epochs: None,
        };
        let mut accepted = 0;
        let mut since_accept = 0;
        let mut pending_ids = BTreeSet::new();

        while accepted < cfg.n_batch {
            // gather positives for the rest of the batch, then simulate them together
            let mut batch: Vec<Proposal> = Vec::new();
            while accepted + batch.len() < cfg.n_batch {
                if since_accept >= cfg.max_proposals_per_accept {
                    break;
                }
                it.proposals += 1;
                since_accept += 1;
                let model = random_model(space, dims, &mut rng)?;
                let image = rasterize(&model, cfg.resolution)?;
                let id = image_digest(&image);
                if store.contains(&id) || pending_ids.contains(&id) {
                    it.duplicates += 1;
                    log::debug!("iteration {k}: duplicate image {id}");
                    continue;
                }
                let (predicted, threshold) = match &classifier {
                    Some(c) => {
                        let p = c.predict_score(&image)?.0;
                        if p > c.threshold {
                            it.rejected += 1;
                            continue;
                        }
                        (Some(p), Some(c.threshold))
                    }
                    None => (None, None),
                };
                pending_ids.insert(id.clone());
                batch.push(Proposal {
                    model,
                    image,
                    id,
                    predicted,
                    threshold,
                });
            }

            if batch.is_empty() {
                // starved: relax once, then give up
                let Some(c) = classifier.as_mut().filter(|_| !it.relaxed) else {
                    return Err(Error::FilterStarved {
                        iteration: k,
                        proposals: since_accept,
                    });
                };
                log::warn!(
                    "iteration {k}: no acceptance in {since_accept} proposals, relaxing threshold {:.3} by {} dB",
                    c.threshold,
                    cfg.relax_db
                );
                c.threshold += cfg.relax_db;
                it.threshold = Some(c.threshold);
                it.relaxed = true;
                since_accept = 0;
                continue;
            }

            let reqs = batch
                .iter()
                .map(|p| SimRequest::new(&p.model, &freqs))
                .collect::<Result<Vec<_>>>()?;
            let results = backend.simulate_batch(&reqs);
            for (p, res) in batch.into_iter().zip(results) {
                pending_ids.remove(&p.id);
                let response = match res {
                    Ok(r) => r,
                    Err(e) => {
                        it.failures += 1;
                        log::warn!("iteration {k}: skipping {}: {e}", p.id);
                        continue;
                    }
                };
                let record = DatasetRecord {
                    id: p.id,
                    iteration: k,
                    image: p.image,
                    score: score(&response, target)?,
                    response,
                    dims: p.model.dims,
                    positions: p.model.positions,
                    predicted: p.predicted,
                    threshold: p.threshold,
                };
                if let (Some(pred), Some(t)) = (record.predicted, record.threshold) {
                    assert!(pred <= t, "record {} predicted {pred} above threshold {t}", record.id);
                }
                store.append(record)?;
                accepted += 1;
                since_accept = 0;
            }
        }

        let scores: Vec<f64> = store.batch(k).map(|r| r.score.0).collect();
        it.median = median(&scores).unwrap_or(f64::NAN);
        it.min = min(&scores).unwrap_or(f64::NAN);
        log::info!(
            "iteration {k}: {} proposals, {} rejected, median {:.3}, min {:.3}",
            it.proposals,
            it.rejected,
            it.median,
            it.min
        );

        if k < cfg.n_iter {
            let tcfg = TrainConfig {
                seed: substream(cfg.seed, &format!("train/{k}")),
                ..cfg.train.clone()
            };
            match classifier::train(store.records(), &tcfg) {
                Ok(mut state) => {
                    it.train_epochs = Some(state.meta.epochs);
                    if let Some(t) = next_threshold(&store, cfg.threshold_mode, k) {
                        state.threshold = t;
                    }
                    classifier = Some(state);
                }
                Err(Error::TooFewRecords { have, need }) => {
                    log::warn!("iteration {k}: {have} records, {need} needed to train; next batch unfiltered");
                }
                Err(e) => return Err(e),
            }
        }
        log.push(it);
    }

    let best = store.best(cfg.top_n);
    Ok(GenerationResult {
        store,
        best,
        log,
        classifier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ComponentPos;
    use crate::nn::NetConfig;
    use crate::scoring::{Band, FrequencyResponse, Score};
    use crate::sim::Surrogate;
    use alloc::vec;

    fn rec(id: &str, iteration: usize, s: f64) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            iteration,
            image: GeometryImage::empty(2, 2, 1.0),
            response: FrequencyResponse::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap(),
            score: Score(s),
            dims: DimensionSet::from_pairs("d", &[(1.0, 1.0)]),
            positions: vec![ComponentPos::new(0.0, 0.0)],
            predicted: None,
            threshold: None,
        }
    }

    #[test]
    fn store_rules() {
        let mut st = DatasetStore::new();
        st.append(rec("a", 1, 4.0)).unwrap();
        st.append(rec("b", 1, 6.0)).unwrap();
        assert_eq!(
            st.append(rec("a", 2, 0.0)).unwrap_err(),
            Error::DuplicateRecord { id: "a".into() }
        );
        st.append(rec("c", 2, 1.0)).unwrap();
        st.append(rec("d", 2, 3.0)).unwrap();
        assert_eq!(
            st.append(rec("e", 1, 0.0)).unwrap_err(),
            Error::IterationOrder { last: 2, got: 1 }
        );
        assert_eq!(st.len(), 4);
        let bs = batch_stats(&st, 0.5);
        assert_eq!(bs.iter().map(|b| b.median).collect::<Vec<_>>(), vec![5.0, 2.0]);
        assert_eq!(bs[1].min, 1.0);
        assert_eq!(bs[0].histogram.total(), 2);
        assert_eq!(st.best(2).iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["c", "d"]);
        assert_eq!(next_threshold(&st, ThresholdMode::AccumulatedMedian, 2), Some(3.5));
        assert_eq!(next_threshold(&st, ThresholdMode::PreviousBatchMedian, 2), Some(2.0));
    }

    #[test]
    fn single_record_stats() {
        let mut st = DatasetStore::new();
        st.append(rec("a", 1, 2.0)).unwrap();
        let bs = batch_stats(&st, 0.5);
        assert_eq!((bs[0].median, bs[0].min), (2.0, 2.0));
    }

    fn setup() -> (DesignSpace, DimensionSet, TargetSpec, GeneratorConfig) {
        let space = DesignSpace::new(12.0, 3.0);
        let dims = DimensionSet::from_pairs("g", &[(1.0, 2.0), (6.0, 0.5), (0.5, 2.0)]);
        let target = TargetSpec::new(vec![Band::new(4.0, 4.5, -6.0)]).unwrap();
        let cfg = GeneratorConfig {
            n_batch: 60,
            n_iter: 1,
            resolution: 0.25,
            freqs: FrequencyGrid {
                start: 2.0,
                stop: 8.0,
                points: 61,
            },
            train: TrainConfig {
                net: NetConfig {
                    conv_channels: vec![4, 8],
                    hidden: 8,
                    response_outputs: 0,
                },
                max_epochs: 4,
                ..TrainConfig::default()
            },
            seed: 3,
            ..GeneratorConfig::default()
        };
        (space, dims, target, cfg)
    }

    #[test]
    fn single_iteration_is_unfiltered_random_sampling() {
        let (space, dims, target, cfg) = setup();
        let out = run_generation(&space, &dims, &cfg, &Surrogate::default(), &target, None).unwrap();
        assert_eq!(out.store.len(), 60);
        assert!(out.classifier.is_none());
        assert_eq!(out.log[0].threshold, None);
        assert_eq!(out.log[0].rejected, 0);
        assert_eq!(out.best.len(), 5);
        assert!(out.best.windows(2).all(|w| w[0].score.0 <= w[1].score.0));
    }

    #[test]
    fn filtered_iterations_respect_threshold_and_reproduce() {
        let (space, dims, target, cfg) = setup();
        let cfg = GeneratorConfig { n_iter: 2, ..cfg };
        let sur = Surrogate::default();
        let a = run_generation(&space, &dims, &cfg, &sur, &target, None).unwrap();
        assert_eq!(a.store.len(), 120);
        for r in a.store.batch(2) {
            let (p, t) = (r.predicted.unwrap(), r.threshold.unwrap());
            assert!(p <= t);
        }
        assert!(a.store.batch(1).all(|r| r.predicted.is_none()));
        let b = run_generation(&space, &dims, &cfg, &sur, &target, None).unwrap();
        let ids = |g: &GenerationResult| g.store.records().iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn starvation_relaxes_once_then_aborts() {
        let (space, dims, target, cfg) = setup();
        let first = run_generation(&space, &dims, &cfg, &Surrogate::default(), &target, None).unwrap();
        let warm = classifier::train(first.store.records(), &cfg.train).unwrap();
        let cfg = GeneratorConfig {
            initial_threshold: -1e9,
            max_proposals_per_accept: 20,
            ..cfg
        };
        let err = run_generation(&space, &dims, &cfg, &Surrogate::default(), &target, Some(warm)).unwrap_err();
        assert_eq!(err, Error::FilterStarved { iteration: 1, proposals: 20 });
    }

    struct Flaky;

    impl Simulator for Flaky {
        fn simulate(&self, req: &SimRequest<'_>) -> Result<FrequencyResponse> {
            if req.model.positions[1].x < 0.0 {
                Err(crate::sim::sim_error(req.model, "solver crashed"))
            } else {
                Surrogate::default().simulate(req)
            }
        }
    }

    #[test]
    fn failures_are_skipped_not_counted() {
        let (space, dims, target, cfg) = setup();
        let out = run_generation(&space, &dims, &cfg, &Flaky, &target, None).unwrap();
        assert_eq!(out.store.len(), 60);
        assert!(out.log[0].failures > 0);
        assert!(out.store.records().iter().all(|r| r.positions[1].x >= 0.0));
    }
}
