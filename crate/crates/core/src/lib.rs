//! Simulation of eyeglass effects on video-oculography: a schematic eye seen
//! through a spectacle lens by an IR eye-tracker camera, exact feature
//! synthesis by ray solving, a renderer, and two gaze mappers.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod eye;
pub mod gaze_geometric;
pub mod gaze_poly;
pub mod harness;
pub mod lens;
pub mod optics;
pub mod projection;
pub mod render;
pub mod scene;
pub mod solver;
