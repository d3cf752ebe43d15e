//! Facial expression analysis: landmark geometry, HOG/PCA features,
//! classical action-unit and emotion classifiers, Fex time-series
//! preprocessing and statistics, benchmarking metrics and SVG rendering.

pub mod cli;
pub mod features;
pub mod fexdata;
pub mod geometry;
pub mod learn;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod stats;
pub mod synth;
