//! Camera/LiDAR fusion multi-object tracker.
//!
//! 2D and 3D detections are fused per frame, associated to tracks in two
//! greedy stages (3D metric first, image-plane IoU second), filtered with a
//! constant-velocity Kalman model and reported as 2D/3D trajectories. A
//! synthetic scenario generator and a CLEAR-MOT evaluator are included for
//! verification.

pub mod association;
pub mod class;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod motion;
pub mod tracker;

pub use class::ClassId;
pub use config::TrackerConfig;
pub use error::{Error, Result};
pub use tracker::{FrameInput, FrameOutput, Tracker};
