//! Unsupervised foreground segmentation for stereo video.

pub mod cli;
pub mod config;
pub mod error;
pub mod graph_cut;
pub mod grid;
pub mod media_io;
pub mod metrics;
pub mod prior;
pub mod streaming;
pub mod synth;

pub use error::{Error, Result};
