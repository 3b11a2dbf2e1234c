//! Incremental radiance-field training over sequential image chunks without
//! pre-estimated camera poses: reference-pose selection, rigid coordinate
//! alignment, replay-based distillation, and joint pose/field optimization.

pub mod alignment;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pose_graph;
pub mod radiance;
pub mod scene_sim;
pub mod train;

pub use error::{Error, Result};
