//! Synthetic data, training and evaluation around the mapping network.

pub mod backbone;
pub mod dataset;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod train;
pub mod upsample;
