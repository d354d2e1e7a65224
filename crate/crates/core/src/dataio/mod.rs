//! Input parsing, frame assembly and output writers.
//!
//! Native inputs are JSON-lines files:
//!
//! ```text
//! {"seq":"0001","frame":0,"type":"3d","class":"car","xyz":[1,2,3],"hwl":[1.5,1.6,3.9],"yaw":0.1,"score":0.95}
//! {"frame":0,"type":"2d","class":"car","camera":"image_02","box":[10,20,110,90],"score":0.8}
//! {"seq":"0001","frame":0,"rotation":[[1,0,0],[0,1,0],[0,0,1]],"translation":[0,0,0]}
//! ```
//!
//! 3D detections are given in the sensor frame and moved into the world
//! frame with the frame's ego pose. `seq` defaults to [`DEFAULT_SEQUENCE`].

pub mod adapters;
mod calib;
mod detections;
mod writers;

pub use calib::{
    parse_calibration, parse_kitti_calib, parse_rig_json, read_calibration, rig_to_json, CameraEntry, KittiCalibration, RigFile, KITTI_CAMERA_ID,
    KITTI_IMAGE_SIZE,
};
pub use detections::{
    build_sequences, parse_detections, parse_poses, read_detections, read_poses, to_tracking_frame, DetectionLine, DetectionSet, FrameDetections,
    PoseLine, PoseSet, Sequence, DEFAULT_SEQUENCE,
};
pub use writers::{kitti_rows, read_json_outputs, write_json, write_kitti, KittiLayout};

use std::io::BufRead;

use crate::error::{Error, Result};

/// Iterates non-blank lines with 1-based line numbers.
pub(crate) fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::parse(i + 1, e.to_string()))),
    })
}
