//! Feed-forward 3D super-resolution over Gaussian splatting scenes.
//!
//! A low-resolution Gaussian scene reconstructed from two views is densified
//! into a scaffold, a learned mapping network predicts per-Gaussian residual
//! offsets from the two upsampled input views, and the refined scene is
//! rendered at high resolution.

pub mod camera;
pub mod cli;
pub mod config;
pub mod densify;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod network;
pub mod par;
pub mod raster;
pub mod real;
pub mod scene;
pub mod tensor;
pub mod seed;

pub use error::{Error, Result};
