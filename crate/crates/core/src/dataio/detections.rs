use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::numbered_lines;
use crate::class::ClassId;
use crate::error::{Error, Result};
use crate::fusion::{Detection2D, Detection3D};
use crate::geometry::{rows_to_matrix, Box3D, BoxImage, CameraModel, RigidTransform};
use crate::tracker::FrameInput;

pub const DEFAULT_SEQUENCE: &str = "0000";

/// Tolerance, in pixels, for image boxes reaching past the image border.
const IMAGE_BORDER_SLACK: f64 = 1.0;

/// One line of the detection schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<String>,
    pub frame: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xyz: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hwl: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<String>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub ltrb: Option<[f64; 4]>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

impl DetectionLine {
    pub fn from_3d(seq: Option<&str>, d: &Detection3D) -> Self {
        let p = d.box3d.position();
        let s = d.box3d.dimensions();
        DetectionLine {
            seq: seq.map(str::to_string),
            frame: d.frame_index,
            kind: "3d".into(),
            class: d.class_id.as_str().into(),
            xyz: Some([p.x, p.y, p.z]),
            hwl: Some([s.x, s.y, s.z]),
            yaw: Some(d.box3d.yaw()),
            camera: None,
            ltrb: None,
            score: d.score,
            mask: None,
        }
    }

    pub fn from_2d(seq: Option<&str>, d: &Detection2D) -> Self {
        let b = &d.box2d;
        DetectionLine {
            seq: seq.map(str::to_string),
            frame: d.frame_index,
            kind: "2d".into(),
            class: d.class_id.as_str().into(),
            xyz: None,
            hwl: None,
            yaw: None,
            camera: Some(b.camera_id.clone()),
            ltrb: Some([b.left, b.top, b.right, b.bottom]),
            score: d.score,
            mask: d.mask.clone(),
        }
    }

    fn into_detection(self, line: usize) -> Result<(String, Parsed)> {
        let err = |m: String| Error::parse(line, m);
        let class: ClassId = self.class.parse().map_err(|e: Error| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(err(format!("score {} outside [0, 1]", self.score)));
        }
        let seq = self.seq.unwrap_or_else(|| DEFAULT_SEQUENCE.to_string());
        let parsed = match self.kind.as_str() {
            "3d" => {
                let missing = |k: &str| err(format!("3d detection is missing `{k}`"));
                let xyz = self.xyz.ok_or_else(|| missing("xyz"))?;
                let hwl = self.hwl.ok_or_else(|| missing("hwl"))?;
                let yaw = self.yaw.ok_or_else(|| missing("yaw"))?;
                let b = Box3D::new(Vector3::from(xyz), Vector3::from(hwl), yaw).map_err(|e| err(e.to_string()))?;
                Parsed::D3(Detection3D::new(b, self.score, class, self.frame).map_err(|e| err(e.to_string()))?)
            }
            "2d" => {
                let camera = self.camera.ok_or_else(|| err("2d detection is missing `camera`".into()))?;
                let [l, t, r, b] = self.ltrb.ok_or_else(|| err("2d detection is missing `box`".into()))?;
                let bi = BoxImage::new(camera, l, t, r, b).map_err(|e| err(e.to_string()))?;
                let mut d = Detection2D::new(bi, self.score, class, self.frame).map_err(|e| err(e.to_string()))?;
                d.mask = self.mask;
                Parsed::D2(d)
            }
            other => return Err(err(format!("unknown detection type `{other}` (accepted: 3d, 2d)"))),
        };
        Ok((seq, parsed))
    }
}

enum Parsed {
    D3(Detection3D),
    D2(Detection2D),
}

/// Detections of one frame; 3D boxes in the sensor frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameDetections {
    pub dets3d: Vec<Detection3D>,
    pub dets2d: Vec<Detection2D>,
}

/// sequence → frame → detections.
pub type DetectionSet = BTreeMap<String, BTreeMap<u32, FrameDetections>>;

/// sequence → frame → ego pose (sensor → world).
pub type PoseSet = BTreeMap<String, BTreeMap<u32, RigidTransform>>;

/// Appends every detection of a JSON-lines stream to `set`.
pub fn parse_detections<R: BufRead>(reader: R, set: &mut DetectionSet) -> Result<()> {
    for item in numbered_lines(reader) {
        let (n, line) = item?;
        let raw: DetectionLine = serde_json::from_str(&line).map_err(|e| Error::parse(n, e.to_string()))?;
        let frame = raw.frame;
        let (seq, parsed) = raw.into_detection(n)?;
        let slot = set.entry(seq).or_default().entry(frame).or_default();
        match parsed {
            Parsed::D3(d) => slot.dets3d.push(d),
            Parsed::D2(d) => slot.dets2d.push(d),
        }
    }
    Ok(())
}

pub fn read_detections(path: &Path, set: &mut DetectionSet) -> Result<()> {
    let f = File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_detections(BufReader::new(f), set).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<String>,
    pub frame: u32,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

pub fn parse_poses<R: BufRead>(reader: R) -> Result<PoseSet> {
    let mut set = PoseSet::new();
    for item in numbered_lines(reader) {
        let (n, line) = item?;
        let raw: PoseLine = serde_json::from_str(&line).map_err(|e| Error::parse(n, e.to_string()))?;
        let pose =
            RigidTransform::from_input(rows_to_matrix(&raw.rotation), Vector3::from(raw.translation)).map_err(|e| Error::parse(n, e.to_string()))?;
        let seq = raw.seq.unwrap_or_else(|| DEFAULT_SEQUENCE.to_string());
        if set.entry(seq.clone()).or_default().insert(raw.frame, pose).is_some() {
            return Err(Error::parse(n, format!("duplicate pose for sequence {seq} frame {}", raw.frame)));
        }
    }
    Ok(set)
}

pub fn read_poses(path: &Path) -> Result<PoseSet> {
    let f = File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_poses(BufReader::new(f)).map_err(|e| e.in_file(path))
}

/// Moves sensor-frame detections into the world frame.
pub fn to_tracking_frame(dets: &[Detection3D], ego_pose: &RigidTransform) -> Vec<Detection3D> {
    dets.iter().map(|d| Detection3D { box3d: ego_pose.apply_box(&d.box3d), ..d.clone() }).collect()
}

/// A sequence ready for the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<FrameInput>,
}

/// Assembles per-sequence frame inputs. Frames run contiguously from the
/// first to the last index seen in either detections or poses, so gaps still
/// age tracks. Sequences with poses must have a pose for every frame.
pub fn build_sequences(dets: &DetectionSet, poses: &PoseSet, rig: &[CameraModel]) -> Result<Vec<Sequence>> {
    let names: BTreeSet<&String> = dets.keys().chain(poses.keys()).collect();
    let empty_dets = BTreeMap::new();
    let mut out = Vec::new();
    for name in names {
        let seq_dets = dets.get(name).unwrap_or(&empty_dets);
        let seq_poses = poses.get(name);
        let indices: BTreeSet<u32> = seq_dets.keys().chain(seq_poses.into_iter().flat_map(|p| p.keys())).copied().collect();
        let (Some(&first), Some(&last)) = (indices.first(), indices.last()) else {
            continue;
        };
        let mut frames = Vec::with_capacity((last - first) as usize + 1);
        for frame in first..=last {
            let ego_pose = match seq_poses {
                None => RigidTransform::identity(),
                Some(p) => *p.get(&frame).ok_or_else(|| Error::Config(format!("sequence {name}: no ego pose for frame {frame}")))?,
            };
            let mut input = FrameInput::empty(frame);
            input.ego_pose = ego_pose;
            if let Some(fd) = seq_dets.get(&frame) {
                input.dets3d = to_tracking_frame(&fd.dets3d, &ego_pose);
                for d in &fd.dets2d {
                    check_in_image(d, rig).map_err(|e| Error::InvalidDetection(format!("sequence {name} frame {frame}: {e}")))?;
                    input.push_2d(d.clone());
                }
            }
            frames.push(input);
        }
        out.push(Sequence { name: name.clone(), frames });
    }
    Ok(out)
}

fn check_in_image(d: &Detection2D, rig: &[CameraModel]) -> std::result::Result<(), String> {
    let cam = rig.iter().find(|c| c.camera_id() == d.camera_id()).ok_or_else(|| format!("camera `{}` is not in the rig", d.camera_id()))?;
    let (w, h) = cam.image_size();
    let b = &d.box2d;
    let s = IMAGE_BORDER_SLACK;
    if b.left < -s || b.top < -s || b.right > w as f64 + s || b.bottom > h as f64 + s {
        return Err(format!("image box [{}, {}, {}, {}] lies outside the {}x{} image of `{}`", b.left, b.top, b.right, b.bottom, w, h, b.camera_id));
    }
    Ok(())
}
