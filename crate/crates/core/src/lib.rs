//! Mixed-noise image restoration.
//!
//! An augmented-Lagrangian outer loop alternates a pluggable denoiser, a
//! weighted-TV synthesis step, and EM estimation of a per-pixel noise
//! classification for Gaussian-mixture and Gaussian-plus-impulse noise.

pub mod error;
pub mod image;
pub mod noise;
pub mod em;
pub mod tv;
pub mod denoiser;
pub mod pipeline;
pub mod fixtures;
pub mod harness;

pub use error::{Error, Result};
pub use image::{Image, VectorField};
