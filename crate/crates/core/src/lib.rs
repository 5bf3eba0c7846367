//! Referring-phrase segmentation toolkit.
//!
//! * [`geometry`]: boxes, polygons, run-length masks and IoU on the pixel grid.
//! * [`scene_graph`]: scene-graph parsing and category vocabularies.
//! * [`dataset`]: box sampling, templated phrase generation, instance refinement.
//! * [`qc`]: annotator agreement scoring and trust filtering.
//! * [`eval`]: mean-IoU, cum-IoU and Pr@k, overall and per subset.
//! * [`model`]: the modular attention grounding model over precomputed detections.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix them to `f64`, which is what the file formats and CLI use.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod model;
pub mod qc;
pub mod scalar;
pub mod scene_graph;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Polygon = geometry::PolygonRegion<f64>;
pub type HeatMap = model::HeatMap<f64>;
pub type ChannelStack = model::ChannelStack<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type PhraseEmbedding = model::PhraseEmbedding<f64>;
