//! Two-stage AU-driven talking-head generation.
//!
//! Stage 1 ([`motion`]) maps per-frame audio features and Action Unit
//! intensities to 162-point landmark sequences with a dilated-convolution
//! conditional VAE and a normalizing-flow prior. Stage 2 ([`diffusion`])
//! renders those landmarks into video frames with a latent diffusion model
//! conditioned on a reference image and mouth/face keypoint rasters.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod facs;
pub mod geometry;
pub mod image_buf;
pub mod ingest;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod plot;

pub use error::{Error, Result};
