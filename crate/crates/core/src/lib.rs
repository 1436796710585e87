//! Terrain perception, state fusion and reward shaping for legged-robot
//! locomotion research.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod elevation;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod obs;
pub mod pipeline;
pub mod reward;
pub mod sensors;
pub mod telemetry;
pub mod terrain;

pub use error::{Error, Result};
