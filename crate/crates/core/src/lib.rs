//! Person tracking from a single 2D LiDAR.
//!
//! The crate covers the whole offline and online toolchain: scan geometry,
//! a pluggable person detector, a constant-velocity multi-target tracker,
//! CLEAR MOT evaluation, a scenario simulator that produces scans with
//! occlusion alongside 100 Hz ground truth, and a two-stage pipelined runtime
//! that exports moving people as dynamic obstacles.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod pipeline;
pub mod report;
pub mod simulator;
pub mod tracking;
pub mod workflow;

pub use error::{Error, Result};
