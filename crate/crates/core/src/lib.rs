//! Calibration and reconstruction mathematics for dual moving-camera motion
//! capture: aligning per-view camera trajectories into one metric, gravity
//! aligned world frame; triangulating and fitting human motion in that frame;
//! fusing depth into scene meshes; and world-space motion metrics.

pub mod alignment;
pub mod calibrator;
pub mod error;
pub mod fusion;
pub mod geom;
pub mod io;
pub mod kdtree;
pub mod losses;
mod mc_tables;
pub mod mesh;
pub mod metrics;
pub mod motion_fit;
pub mod optim;
pub mod skeleton;
pub mod synth;
pub mod triangulator;

#[cfg(test)]
mod test_scenes;

pub use error::{Error, ErrorFamily, Result};
