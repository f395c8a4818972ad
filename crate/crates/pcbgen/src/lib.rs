//! File formats, persistence, std-only simulation backends and the
//! experiment runner around `pcbgen-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod checkpoint;
pub mod config;
mod error;
pub mod formats;
pub mod render;
pub mod runner;
pub mod store;
pub mod touchstone;

pub use error::{Error, Result};
