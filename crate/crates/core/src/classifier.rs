//! Image score classifier: a CNN regressor on geometry images plus a
//! decision threshold. Lower scores are better, so an image is *positive*
//! (worth simulating) when its predicted score is at or below the threshold.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{assemble_model, AntennaModel, ComponentPos, DesignSpace, DimensionSet};
use crate::nn::{AdamW, NetConfig, Network, Trace};
use crate::raster::{image_digest, rasterize, GeometryImage};
use crate::scoring::{score, FrequencyResponse, Score, TargetSpec};
use crate::seed::{digest_fraction, rng};
use crate::stats::median;
use crate::{Error, Result};

/// One simulated design: image, response, score and the parameters that
/// produced it. `id` is the image digest.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub iteration: usize,
    pub image: GeometryImage,
    pub response: FrequencyResponse,
    pub score: Score,
    pub dims: DimensionSet,
    pub positions: Vec<ComponentPos>,
    /// Classifier prediction at proposal time, when a filter was active.
    pub predicted: Option<f64>,
    /// Threshold in force at proposal time.
    pub threshold: Option<f64>,
}

impl DatasetRecord {
    /// Record for a simulated model; the image is rendered at `resolution`
    /// and its digest becomes the id.
    pub fn from_model(
        model: &AntennaModel,
        response: FrequencyResponse,
        target: &TargetSpec,
        resolution: f64,
        iteration: usize,
    ) -> Result<Self> {
        let image = rasterize(model, resolution)?;
        let score = score(&response, target)?;
        Ok(DatasetRecord {
            id: image_digest(&image),
            iteration,
            image,
            response,
            score,
            dims: model.dims.clone(),
            positions: model.positions.clone(),
            predicted: None,
            threshold: None,
        })
    }

    /// Rebuilds the antenna model the record was simulated from.
    pub fn model(&self, space: &DesignSpace) -> Result<AntennaModel> {
        assemble_model(space, &self.dims, &self.positions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub net: NetConfig,
    /// Train the response head alongside the score head.
    pub response_head: bool,
    pub response_weight: f32,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub dropout: f32,
    /// Randomly mirror training images left to right. Only sound when the
    /// backend's response is mirror symmetric, as the surrogate's is.
    pub mirror_augment: bool,
    pub val_fraction: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f32,
    pub min_learning_rate: f32,
    pub early_stop_patience: usize,
    pub min_records: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            response_head: false,
            response_weight: 0.5,
            max_epochs: 40,
            batch_size: 16,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            dropout: 0.1,
            mirror_augment: false,
            val_fraction: 0.1,
            plateau_patience: 3,
            plateau_factor: 0.5,
            min_learning_rate: 1e-5,
            early_stop_patience: 8,
            min_records: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Generation iteration whose data this state was trained on.
    pub iteration: usize,
    pub log: Vec<EpochLog>,
    pub warnings: Vec<String>,
}

/// Trained network plus label normalization and decision threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub net: Network,
    pub label_mean: f64,
    pub label_scale: f64,
    pub response_mean: f64,
    pub response_scale: f64,
    /// Frequency grid of the response head, GHz.
    pub freqs: Vec<f64>,
    pub image_width: usize,
    pub image_height: usize,
    pub resolution: f64,
    pub threshold: f64,
    pub meta: TrainingMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub mse: f64,
    /// `P(predicted positive | actually positive)`; `None` with no positives.
    pub tp_rate: Option<f64>,
    /// `P(predicted positive | actually negative)`; `None` with no negatives.
    pub fp_rate: Option<f64>,
    pub actual_positive: usize,
}

/// Network input for an image: geometry, x ramp, y ramp.
pub fn network_input(img: &GeometryImage) -> Vec<f32> {
    let mut buf = vec![0.0; 3 * img.width() * img.height()];
    img.write_channels(&mut buf);
    buf
}

/// Mirrors the geometry channel left to right; the coordinate ramps stay.
fn mirror_into(input: &[f32], w: usize, h: usize, out: &mut [f32]) {
    let n = w * h;
    out[n..].copy_from_slice(&input[n..]);
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = input[r * w + (w - 1 - c)];
        }
    }
}

/// Splits record indices into (train, validation). Validation takes the
/// `ceil(val_fraction * n)` records whose ids hash lowest, ties by index.
pub fn split_by_id(records: &[DatasetRecord], val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n = records.len();
    let n_val = if val_fraction > 0.0 {
        (libm::ceil(val_fraction * n as f64) as usize).clamp(1, n.saturating_sub(1))
    } else {
        0
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        digest_fraction(&records[a].id)
            .total_cmp(&digest_fraction(&records[b].id))
            .then(records[a].id.cmp(&records[b].id))
            .then(a.cmp(&b))
    });
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains a fresh classifier. The threshold starts at the median score of
/// all given records.
pub fn train(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<ClassifierState> {
    if records.len() < cfg.min_records.max(2) {
        return Err(Error::TooFewRecords {
            have: records.len(),
            need: cfg.min_records.max(2),
        });
    }
    let first = &records[0].image;
    let (w, h) = (first.width(), first.height());
    if let Some(bad) = records
        .iter()
        .find(|r| r.image.width() != w || r.image.height() != h)
    {
        return Err(Error::ShapeMismatch {
            want_w: w,
            want_h: h,
            got_w: bad.image.width(),
            got_h: bad.image.height(),
        });
    }
    let freqs = records[0].response.freqs().to_vec();
    let use_response = cfg.response_head
        && records
            .iter()
            .all(|r| r.response.freqs() == freqs.as_slice());

    let (train_idx, val_idx) = split_by_id(records, cfg.val_fraction);
    let mut warnings = Vec::new();

    let labels: Vec<f64> = train_idx.iter().map(|&i| records[i].score.0).collect();
    let label_mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let var = labels.iter().map(|v| (v - label_mean) * (v - label_mean)).sum::<f64>()
        / labels.len() as f64;
    let label_scale = if var > 1e-18 {
        libm::sqrt(var)
    } else {
        warnings.push(String::from("zero-variance score labels"));
        log::warn!("training on zero-variance score labels");
        1.0
    };
    let (response_mean, response_scale) = if use_response {
        let all: Vec<f64> = train_idx
            .iter()
            .flat_map(|&i| records[i].response.s11_db().iter().copied())
            .collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / all.len() as f64;
        (m, if v > 1e-18 { libm::sqrt(v) } else { 1.0 })
    } else {
        (0.0, 1.0)
    };

    let mut net_cfg = cfg.net.clone();
    net_cfg.response_outputs = if use_response { freqs.len() } else { 0 };
    let mut rng = rng(cfg.seed);
    let mut net = Network::new(net_cfg, 3, h, w, &mut rng);

    let score_target = |i: usize| ((records[i].score.0 - label_mean) / label_scale) as f32;
    let resp_target = |i: usize| -> Vec<f32> {
        records[i]
            .response
            .s11_db()
            .iter()
            .map(|v| ((v - response_mean) / response_scale) as f32)
            .collect()
    };

    let mut opt = AdamW::new(net.n_params(), cfg.learning_rate, cfg.weight_decay);
    let mut grads = vec![0.0f32; net.n_params()];
    let mut trace = Trace::default();
    let mut order = train_idx.clone();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, net.params.clone(), 0usize);
    let mut plateau_best = f64::INFINITY;
    let (mut since_plateau, mut since_best) = (0, 0);
    let batch = cfg.batch_size.max(1);
    let inputs: Vec<Vec<f32>> = records.iter().map(|r| network_input(&r.image)).collect();
    let mut flipped = vec![0.0f32; 3 * w * h];

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sq_err = 0.0f64;
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let bn = chunk.len() as f32;
            for &i in chunk {
                let input = if cfg.mirror_augment && rng.gen::<bool>() {
                    mirror_into(&inputs[i], w, h, &mut flipped);
                    &flipped
                } else {
                    &inputs[i]
                };
                net.forward_train(input, &mut rng, cfg.dropout, &mut trace);
                let err = trace.score_out - score_target(i);
                sq_err += (err as f64 * label_scale) * (err as f64 * label_scale);
                let dresp = use_response.then(|| {
                    let t = resp_target(i);
                    let k = 2.0 * cfg.response_weight / (bn * t.len() as f32);
                    trace
                        .response_out
                        .iter()
                        .zip(&t)
                        .map(|(p, y)| k * (p - y))
                        .collect::<Vec<f32>>()
                });
                net.backward(&trace, 2.0 * err / bn, dresp.as_deref(), &mut grads);
            }
            opt.step(&mut net.params, &grads);
        }
        let train_mse = sq_err / train_idx.len() as f64;
        let val_mse = if val_idx.is_empty() {
            train_mse
        } else {
            val_idx
                .iter()
                .map(|&i| {
                    let p = net.predict(&inputs[i]) as f64 * label_scale + label_mean;
                    (p - records[i].score.0) * (p - records[i].score.0)
                })
                .sum::<f64>()
                / val_idx.len() as f64
        };
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
            lr: opt.lr,
        });

        if val_mse < best.0 {
            best = (val_mse, net.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if val_mse < plateau_best * (1.0 - 1e-4) {
            plateau_best = val_mse;
            since_plateau = 0;
        } else {
            since_plateau += 1;
            if since_plateau >= cfg.plateau_patience {
                opt.lr = (opt.lr * cfg.plateau_factor).max(cfg.min_learning_rate);
                since_plateau = 0;
            }
        }
        if since_best >= cfg.early_stop_patience {
            break;
        }
    }

    net.params = best.1;
    let all_scores: Vec<f64> = records.iter().map(|r| r.score.0).collect();
    Ok(ClassifierState {
        net,
        label_mean,
        label_scale,
        response_mean,
        response_scale,
        freqs,
        image_width: w,
        image_height: h,
        resolution: first.resolution(),
        threshold: median(&all_scores).unwrap_or(f64::INFINITY),
        meta: TrainingMeta {
            epochs: log.len(),
            best_epoch: best.2,
            n_train: train_idx.len(),
            n_val: val_idx.len(),
            iteration: records.iter().map(|r| r.iteration).max().unwrap_or(0),
            log,
            warnings,
        },
    })
}

impl ClassifierState {
    fn check_shape(&self, img: &GeometryImage) -> Result<()> {
        if img.width() != self.image_width || img.height() != self.image_height {
            return Err(Error::ShapeMismatch {
                want_w: self.image_width,
                want_h: self.image_height,
                got_w: img.width(),
                got_h: img.height(),
            });
        }
        Ok(())
    }

    pub fn predict_score(&self, img: &GeometryImage) -> Result<Score> {
        self.check_shape(img)?;
        let out = self.net.predict(&network_input(img));
        Ok(Score(out as f64 * self.label_scale + self.label_mean))
    }

    /// Predicted S11 in dB on [`ClassifierState::freqs`], when the response
    /// head was trained.
    pub fn predict_response(&self, img: &GeometryImage) -> Result<Option<Vec<f64>>> {
        self.check_shape(img)?;
        if !self.net.has_response_head() {
            return Ok(None);
        }
        let (_, r) = self.net.predict_all(&network_input(img));
        Ok(Some(
            r.iter()
                .map(|&v| v as f64 * self.response_scale + self.response_mean)
                .collect(),
        ))
    }

    /// Positive iff the predicted score is at or below the threshold.
    pub fn classify(&self, img: &GeometryImage) -> Result<bool> {
        Ok(self.predict_score(img)?.0 <= self.threshold)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn evaluate(&self, records: &[DatasetRecord]) -> Result<Evaluation> {
        let preds = records
            .iter()
            .map(|r| self.predict_score(&r.image).map(|s| s.0))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<f64> = records.iter().map(|r| r.score.0).collect();
        Ok(evaluate_predictions(&preds, &truth, self.threshold))
    }
}

pub fn predict_score(state: &ClassifierState, img: &GeometryImage) -> Result<Score> {
    state.predict_score(img)
}

pub fn classify(state: &ClassifierState, img: &GeometryImage) -> Result<bool> {
    state.classify(img)
}

pub fn evaluate(state: &ClassifierState, records: &[DatasetRecord]) -> Result<Evaluation> {
    state.evaluate(records)
}

/// TP/FP rates and MSE of predictions against true scores at `threshold`.
pub fn evaluate_predictions(preds: &[f64], truth: &[f64], threshold: f64) -> Evaluation {
    let n = preds.len().min(truth.len());
    let (mut tp, mut fp, mut pos, mut neg, mut se) = (0usize, 0usize, 0usize, 0usize, 0.0f64);
    for (&p, &t) in preds.iter().zip(truth) {
        se += (p - t) * (p - t);
        let predicted = p <= threshold;
        if t <= threshold {
            pos += 1;
            tp += predicted as usize;
        } else {
            neg += 1;
            fp += predicted as usize;
        }
    }
    Evaluation {
        n,
        mse: if n > 0 { se / n as f64 } else { f64::NAN },
        tp_rate: (pos > 0).then(|| tp as f64 / pos as f64),
        fp_rate: (neg > 0).then(|| fp as f64 / neg as f64),
        actual_positive: pos,
    }
}

impl core::fmt::Display for Evaluation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let rate = |r: Option<f64>| r.map_or(String::from("undefined"), |v| format!("{v:.3}"));
        write!(
            f,
            "n={} mse={:.4} tp={} fp={}",
            self.n,
            self.mse,
            rate(self.tp_rate),
            rate(self.fp_rate)
        )
    }
}
