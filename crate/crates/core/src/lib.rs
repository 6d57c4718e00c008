//! Multimodal image matching with a steerable-filter structural descriptor,
//! FFT-accelerated normalized cross-correlation and a coarse-to-fine
//! registration pipeline.

pub mod cli;
pub mod descriptor;
pub mod detect;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod harness;
pub mod pipeline;
pub mod raster;
pub mod similarity;

pub use error::{Error, Result};
