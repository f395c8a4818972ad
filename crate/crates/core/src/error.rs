use alloc::string::String;

use crate::geometry::Edge;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("component {index}: {reason}")]
    InvalidDims { index: usize, reason: &'static str },

    #[error("component {index} leaves the extended area across the {edge} edge")]
    IllegalPlacement { index: usize, edge: Edge },

    #[error("component {index} has no legal position in the extended area")]
    Unplaceable { index: usize },

    #[error("{dims} dimensions but {positions} positions")]
    LengthMismatch { dims: usize, positions: usize },

    #[error("anchored component 1 lies entirely below y = 0")]
    BelowGround,

    #[error("invalid design space: {0}")]
    InvalidSpace(&'static str),

    #[error("raster: {0}")]
    Raster(&'static str),

    #[error("invalid frequency response: {0}")]
    InvalidResponse(&'static str),

    #[error("invalid target: {0}")]
    InvalidTarget(&'static str),

    #[error("band {index} ({lo}-{hi} GHz) contains no frequency samples")]
    EmptyBand { index: usize, lo: f64, hi: f64 },

    #[error("simulation of model {digest} failed: {message}")]
    Simulation { digest: String, message: String },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("training needs at least {need} records, got {have}")]
    TooFewRecords { have: usize, need: usize },

    #[error("image is {got_w}x{got_h} px, classifier expects {want_w}x{want_h}")]
    ShapeMismatch {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("record {id} is already in the store")]
    DuplicateRecord { id: String },

    #[error("record from iteration {got} appended after iteration {last}")]
    IterationOrder { last: usize, got: usize },

    #[error("iteration {iteration}: filter accepted nothing after {proposals} proposals")]
    FilterStarved { iteration: usize, proposals: usize },

    #[error("simulation budget {budget} cannot cover {needed} evaluations")]
    Budget { budget: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn at_sample(self, sample: usize) -> Self {
        Error::Sample {
            sample,
            source: alloc::boxed::Box::new(self),
        }
    }
}
