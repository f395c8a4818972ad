//! Experiment configuration (JSON).
//!
//! One top-level seed drives every stage through named substreams, so the
//! `seed` fields of the embedded stage configs are ignored, as are their
//! frequency grids: the top-level `freqs` applies everywhere.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use pcbgen_core::dim_select::SelectorConfig;
use pcbgen_core::geometry::{ComponentDims, DesignSpace, DimensionSet};
use pcbgen_core::placement::GeneratorConfig;
use pcbgen_core::scoring::TargetSpec;
use pcbgen_core::seed::substream;
use pcbgen_core::sim::FrequencyGrid;
use pcbgen_core::tuner::{ToleranceConfig, TrustRegionConfig};
use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::formats::{read_json, SpaceJson};

/// A candidate dimension set as `[[w, h], ...]` in component order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateJson {
    pub id: String,
    pub dims: Vec<[f64; 2]>,
}

impl CandidateJson {
    pub fn to_set(&self) -> DimensionSet {
        DimensionSet::new(
            self.id.clone(),
            self.dims
                .iter()
                .map(|&[w, h]| ComponentDims::new(w, h))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorSection {
    pub n_p: usize,
    pub resolution: f64,
    pub keep_losers: bool,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let d = SelectorConfig::default();
        SelectorSection {
            n_p: d.n_p,
            resolution: d.resolution,
            keep_losers: d.keep_losers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub space: SpaceJson,
    pub target: TargetSpec,
    #[serde(default)]
    pub freqs: FrequencyGrid,
    pub candidates: Vec<CandidateJson>,
    #[serde(default)]
    pub selector: SelectorSection,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub tuner: TrustRegionConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    /// Default run directory for `pipeline` when `--out` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.validate().map_err(|e| e.in_file(path))?;
        Ok(cfg)
    }

    pub fn design_space(&self) -> DesignSpace {
        DesignSpace::from(&self.space)
    }

    pub fn candidate_sets(&self) -> Vec<DimensionSet> {
        self.candidates.iter().map(CandidateJson::to_set).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Error::Config(m);
        self.design_space()
            .check()
            .map_err(|e| cfg_err(format!("space: {e}")))?;
        self.target
            .check()
            .map_err(|e| cfg_err(format!("target: {e}")))?;
        self.freqs
            .freqs()
            .map_err(|e| cfg_err(format!("freqs: {e}")))?;
        let first = self
            .candidates
            .first()
            .ok_or_else(|| cfg_err("no candidate dimension sets".into()))?;
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if c.id.is_empty() {
                return Err(cfg_err("candidate set with an empty id".into()));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(cfg_err(format!("candidate set '{}' is listed twice", c.id)));
            }
            if c.dims.len() != first.dims.len() {
                return Err(cfg_err(format!(
                    "candidate set '{}' has {} components, expected {} (as in set '{}')",
                    c.id,
                    c.dims.len(),
                    first.dims.len(),
                    first.id
                )));
            }
            c.to_set()
                .check()
                .map_err(|e| cfg_err(format!("candidate set '{}': {e}", c.id)))?;
        }
        if self.selector.n_p == 0 || !(self.selector.resolution > 0.0) {
            return Err(cfg_err("selector: n_p and resolution must be positive".into()));
        }
        self.generator_config()
            .check()
            .map_err(|e| cfg_err(format!("generator: {e}")))?;
        self.tuner
            .check()
            .map_err(|e| cfg_err(format!("tuner: {e}")))?;
        if !(self.tolerance.perturb_fraction >= 0.0) || self.tolerance.n_runs == 0 {
            return Err(cfg_err("tolerance: perturb_fraction >= 0 and n_runs > 0 required".into()));
        }
        self.backend
            .oracle
            .check()
            .map_err(|e| cfg_err(format!("backend: {e}")))?;
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        substream(self.seed, stage)
    }

    pub fn selector_config(&self) -> SelectorConfig {
        SelectorConfig {
            n_p: self.selector.n_p,
            seed: self.stage_seed("select"),
            freqs: self.freqs,
            target: self.target.clone(),
            resolution: self.selector.resolution,
            keep_losers: self.selector.keep_losers,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let mut g = self.generator.clone();
        g.seed = self.stage_seed("generate");
        g.train.seed = self.stage_seed("train");
        g.freqs = self.freqs;
        g
    }

    pub fn tolerance_config(&self) -> ToleranceConfig {
        ToleranceConfig {
            seed: self.stage_seed("tolerance"),
            ..self.tolerance.clone()
        }
    }
}
