//! TEFormer-style semantic segmentation: a texture-aware hierarchical encoder,
//! an edge-guided tri-branch decoder and edge-gated fusion, plus the data,
//! training, evaluation and ablation tooling around them.

pub mod ablation;
pub mod complexity;
pub mod config;
pub mod data;
pub mod eg3head;
pub mod egffm;
pub mod encoder;
mod error;
pub mod export;
pub mod feature;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod plot;
pub mod qco;
pub mod tam;
pub mod train;
pub mod upsample;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use model::{Components, ModelConfig, Teformer};
