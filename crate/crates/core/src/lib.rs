//! Group activity recognition from spatial activity maps with multi-stage refinement.
//!
//! Per-person individual actions and the scene's group activity are encoded
//! as Gaussian activity maps on a coarse grid. A multi-stage convolutional
//! network predicts the map from a feature map, refines it stage by stage, and
//! an aggregation head reads feature map and refined map jointly to classify
//! the group activity.
//!
//! * [`engine`]: tensors, reverse-mode differentiation, Adam, gradient checks
//! * [`activity`]: activity-map rasterization and pooling decoders
//! * [`model`]: backbone, initial stage, refinement stages, aggregation head
//! * [`training`]: losses, two-step training, fusion and metrics
//! * [`data`]: synthetic scenes, dataset files, splits
//! * [`cli`]: run configuration and the commands behind the `crm` binary

pub mod activity;
pub mod cli;
pub mod data;
pub mod engine;
mod error;
pub mod model;
pub mod training;

pub use error::{Error, Result};
