//! Real-time 4D Gaussian-splat rendering engine.
//!
//! A 4D scene is a timed sequence of splat clouds. This crate parses and
//! writes splat PLY files, plays sequences back on a timeline, interpolates
//! camera paths, rasterizes splats on the CPU with optional importance-guided
//! foveation, edits clouds through screen- and world-space selections, exports
//! frame sequences to encoder sinks and measures rendering performance and
//! embedding-based semantic metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod foveation;
pub mod imaging;
pub mod metrics_eval;
pub mod rasterizer;
pub mod selection_edit;
pub mod sequence_player;
pub mod splat_model;
pub mod synthetic;
pub mod trajectory;
pub mod video_export;
