//! Dual-input fusion segmentation for aerial tiles and low-resolution
//! multiband satellite crops.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure
//! computation: tensors and reverse-mode differentiation, the network
//! blocks and full model, losses and confusion-matrix metrics, raster
//! tiling/cropping/band math, a procedural paired-dataset generator and the
//! AdamW optimizer. File formats, the training harness and the CLI live in
//! the `difd` crate.
//!
//! The optional `std` feature (on by default) only enables runtime CPU
//! feature detection in the GEMM kernels.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod bands;
pub mod early_stop;
mod error;
pub mod gemm;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::Var;
pub use bands::BandSelection;
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricSummary};
pub use model::{DifdConfig, ModelState, SecondInput, Variant};
pub use raster::{GeoTransform, Raster, RasterData, TilePair};
pub use tensor::{FeatureMap, Tensor};

/// Number of land-cover classes: background, building, woodland, water, road.
pub const NUM_CLASSES: usize = 5;

/// Human-readable class names in label order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "building", "woodland", "water", "road"];
