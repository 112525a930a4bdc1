//! Forward and backward kernels on plain tensors.
//!
//! These are the numerical primitives; [`crate::autodiff`] records them on
//! a graph and chains their backward passes.

pub mod conv;
pub mod norm;
pub mod pointwise;
pub mod resample;
pub mod shuffle;

pub use conv::{conv2d, conv_transpose2d, ConvOptions, Padding};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats};
pub use pointwise::{concat_channels, elu, softmax_channels};
pub use resample::{resize_bilinear, resize_nearest};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
