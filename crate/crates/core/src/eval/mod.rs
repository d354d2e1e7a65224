//! Synthetic scenarios and CLEAR-MOT scoring.
//!
//! Correspondences inside the evaluator are greedy rather than optimal
//! assignments, so counts can differ from toolkits that use the Hungarian
//! method when several hypotheses compete for one object.

mod metrics;
mod scenario;

pub use metrics::{evaluate, evaluate_counts, evaluate_sequences, gt_as_hypotheses, Criterion, MotCounts, MotMetrics, MAX_DISTANCE_3D, MIN_IOU_2D};
pub use scenario::{
    class_dimensions, default_camera, generate, read_gt, write_gt, write_synth, DetectionModel, EgoMotion, Generated, GtFrame, GtObject,
    RandomObjects, Scenario, TrackPath, TrackSpec, MAX_STEP, SENSOR_HEIGHT,
};
