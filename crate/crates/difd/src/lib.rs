//! File formats, dataset layout, training harness and reports for the
//! dual-input fusion segmentation network in `difd-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod report;
pub mod rstx;

pub use error::{AppError, Result};
