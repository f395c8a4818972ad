//! Core algorithms for prototyping PCB antennas out of a handful of
//! fixed-dimension rectangles.
//!
//! The workflow has three stages, each with its own module:
//!
//! - [`dim_select`] ranks candidate dimension sets by the median score of
//!   randomly placed samples and keeps the best one.
//! - [`placement`] places the chosen rectangles with a random generator
//!   whose proposals are filtered by an image score classifier
//!   ([`classifier`]) that is retrained after every batch of simulations.
//! - [`tuner`] refines a prototype with a derivative-free trust region and
//!   checks its tolerance to random perturbations.
//!
//! Everything here is `no_std` + `alloc`. File formats, persistence and the
//! command line live in the `pcbgen` crate. Simulation backends plug in
//! through the [`sim::Simulator`] trait; [`sim::Surrogate`] is a cheap,
//! deterministic stand-in for a full-wave solver.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod classifier;
pub mod dim_select;
mod error;
pub mod geometry;
pub mod nn;
pub mod placement;
pub mod raster;
pub mod scoring;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod tuner;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::classifier::{ClassifierState, DatasetRecord, TrainConfig};
    pub use crate::dim_select::{select, DimensionStats, SelectorConfig};
    pub use crate::geometry::{
        AnchorMode, AntennaModel, ComponentDims, ComponentPos, DesignSpace, DimensionSet, Rect,
    };
    pub use crate::dim_select::Selection;
    pub use crate::placement::{
        batch_stats, run_generation, DatasetStore, GenerationResult, GeneratorConfig, ThresholdMode,
    };
    pub use crate::raster::{rasterize, GeometryImage};
    pub use crate::scoring::{score, Band, FrequencyResponse, Score, TargetSpec};
    pub use crate::sim::{FrequencyGrid, OracleConfig, SimRequest, Simulator, Surrogate};
    pub use crate::tuner::{
        optimize, tolerance_study, OptimizeResult, ParamVector, QuadraticBowl, ToleranceConfig,
        ToleranceResult,
        TrustRegionConfig,
    };
    pub use crate::{Error, Result};
}
