//! Near-miss incident detection for cycling rides: ride-file parsing,
//! preprocessing into labeled 10 s buckets, windowed DFT features, a
//! sensor-fusion convolutional-recurrent classifier with two baselines, and
//! ROC evaluation.

pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod ride_format;
pub mod seed;
pub mod spectral;
pub mod synthdata;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
