//! Simulation backends.
//!
//! Every workflow stage talks to a [`Simulator`]. Backends must be pure with
//! respect to the request: the same model and frequency grid always produce
//! the same response.
//!
//! [`Surrogate`] is a synthetic backend. It rasterizes the metal, walks the
//! 4-connected copper reachable from the feed, and places quarter-wave style
//! resonances at odd multiples of `c0 / (4 L sqrt(eps_eff))`, where `L` is the
//! longest geodesic path from the feed's ground contact. It rewards long
//! connected current paths, which is enough structure for the selection,
//! generation and tuning loops to have a real optimum. It is not a physical
//! model.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::AntennaModel;
use crate::raster::{image_digest, rasterize, GeometryImage, METAL_CODE, PORT_CODE, SUBSTRATE_CODE};
use crate::scoring::FrequencyResponse;
use crate::{Error, Result};

/// Speed of light in mm * GHz.
pub const C0_MM_GHZ: f64 = 299.792458;

/// Floor of the surrogate response in dB.
pub const SURROGATE_FLOOR_DB: f64 = -40.0;

/// Linearly spaced frequency samples in GHz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Default for FrequencyGrid {
    /// 201 points over 2-8 GHz.
    fn default() -> Self {
        FrequencyGrid {
            start: 2.0,
            stop: 8.0,
            points: 201,
        }
    }
}

impl FrequencyGrid {
    pub fn freqs(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.stop > self.start) || !(self.start > 0.0) {
            return Err(Error::Config("frequency grid needs >= 2 points over 0 < start < stop".to_string()));
        }
        let n = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / n)
            .collect())
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points.max(2) - 1) as f64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SimRequest<'a> {
    pub model: &'a AntennaModel,
    pub freqs: &'a [f64],
}

impl<'a> SimRequest<'a> {
    pub fn new(model: &'a AntennaModel, freqs: &'a [f64]) -> Result<Self> {
        if freqs.len() < 2 || freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "simulation grid must be strictly increasing with >= 2 points".to_string(),
            ));
        }
        Ok(SimRequest { model, freqs })
    }
}

pub trait Simulator {
    fn simulate(&self, req: &SimRequest<'_>) -> Result<FrequencyResponse>;

    /// Simulates a batch; results come back in request order. Backends that
    /// can run requests concurrently override this.
    fn simulate_batch(&self, reqs: &[SimRequest<'_>]) -> Vec<Result<FrequencyResponse>> {
        reqs.iter().map(|r| self.simulate(r)).collect()
    }

    fn name(&self) -> &str {
        "custom"
    }
}

impl<S: Simulator + ?Sized> Simulator for &S {
    fn simulate(&self, req: &SimRequest<'_>) -> Result<FrequencyResponse> {
        (**self).simulate(req)
    }

    fn simulate_batch(&self, reqs: &[SimRequest<'_>]) -> Vec<Result<FrequencyResponse>> {
        (**self).simulate_batch(reqs)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Builds a simulation error tagged with the model digest.
pub fn sim_error(model: &AntennaModel, message: impl Into<String>) -> Error {
    let digest = rasterize(model, crate::raster::DEFAULT_RESOLUTION)
        .map(|img| image_digest(&img))
        .unwrap_or_else(|_| "unrasterizable".to_string());
    Error::Simulation {
        digest,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub eps_eff: f64,
    pub q_factor: f64,
    pub depth_db: f64,
    pub n_harmonics: usize,
    pub resolution: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            eps_eff: 2.0,
            q_factor: 30.0,
            depth_db: 20.0,
            n_harmonics: 3,
            resolution: 0.1,
        }
    }
}

impl OracleConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.eps_eff >= 1.0
            && self.q_factor > 0.0
            && self.depth_db > 0.0
            && self.n_harmonics > 0
            && self.resolution > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid surrogate config {self:?}")))
        }
    }
}

/// Synthetic path-length resonance backend.
#[derive(Clone, Debug, Default)]
pub struct Surrogate {
    pub cfg: OracleConfig,
}

impl Surrogate {
    pub fn new(cfg: OracleConfig) -> Self {
        Surrogate { cfg }
    }

    /// Longest geodesic path in mm from the feed's ground contact through the
    /// copper connected to it, or `None` when the feed touches no metal.
    pub fn path_length(&self, model: &AntennaModel) -> Result<Option<f64>> {
        let img = rasterize(model, self.cfg.resolution)?;
        Ok(geodesic_extent(&img).map(|steps| (steps + 1) as f64 * self.cfg.resolution))
    }

    /// Resonances `(2k - 1) c0 / (4 L sqrt(eps_eff))` for `k = 1..=n`.
    pub fn resonances(&self, path_length: f64) -> Vec<f64> {
        let f1 = C0_MM_GHZ / (4.0 * path_length * libm::sqrt(self.cfg.eps_eff));
        (1..=self.cfg.n_harmonics)
            .map(|k| (2 * k - 1) as f64 * f1)
            .collect()
    }

    /// |S11| in dB for a given path length (or a disconnected feed).
    pub fn response_for(&self, path_length: Option<f64>, freqs: &[f64]) -> Vec<f64> {
        let Some(l) = path_length else {
            return vec![0.0; freqs.len()];
        };
        let res = self.resonances(l);
        let q2 = self.cfg.q_factor * self.cfg.q_factor;
        freqs
            .iter()
            .map(|&f| {
                let dip: f64 = res
                    .iter()
                    .map(|&fk| {
                        let d = f / fk - fk / f;
                        1.0 / (1.0 + q2 * d * d)
                    })
                    .sum();
                (-self.cfg.depth_db * dip).max(SURROGATE_FLOOR_DB)
            })
            .collect()
    }
}

impl Simulator for Surrogate {
    fn simulate(&self, req: &SimRequest<'_>) -> Result<FrequencyResponse> {
        self.cfg.check()?;
        let l = self
            .path_length(req.model)
            .map_err(|e| sim_error(req.model, e.to_string()))?;
        FrequencyResponse::new(req.freqs.to_vec(), self.response_for(l, req.freqs))
    }

    fn name(&self) -> &str {
        "surrogate"
    }
}

/// Multi-source BFS from the port pixels in the bottom row over port and
/// metal pixels. Returns the largest step count reached, or `None` if the
/// reachable set holds no metal.
pub fn geodesic_extent(img: &GeometryImage) -> Option<usize> {
    let (w, h) = (img.width(), img.height());
    let px = img.codes();
    let bottom = (h - 1) * w;
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for c in 0..w {
        if px[bottom + c] == PORT_CODE {
            dist[bottom + c] = 0;
            queue.push_back(bottom + c);
        }
    }
    let mut max_d = 0;
    let mut metal = false;
    while let Some(i) = queue.pop_front() {
        let d = dist[i];
        max_d = max_d.max(d);
        metal |= px[i] == METAL_CODE;
        let (r, c) = (i / w, i % w);
        let mut visit = |j: usize| {
            if dist[j] == usize::MAX && px[j] != SUBSTRATE_CODE {
                dist[j] = d + 1;
                queue.push_back(j);
            }
        };
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
    }
    metal.then_some(max_d)
}
