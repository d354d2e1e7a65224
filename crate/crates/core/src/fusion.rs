//! Per-frame greedy fusion of 3D detections with image detections.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::association::{greedy_match, Sense};
use crate::class::ClassId;
use crate::error::{Error, Result};
use crate::geometry::{iou_2d, project_box, Box3D, BoxImage, CameraModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection3D {
    pub box3d: Box3D,
    pub score: f64,
    pub class_id: ClassId,
    pub frame_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub box2d: BoxImage,
    pub score: f64,
    pub class_id: ClassId,
    pub frame_index: u32,
    /// Opaque mask payload, passed through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

fn check_score(score: f64) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::InvalidDetection(format!("score {score} outside [0, 1]")))
    }
}

impl Detection3D {
    pub fn new(box3d: Box3D, score: f64, class_id: ClassId, frame_index: u32) -> Result<Self> {
        check_score(score)?;
        Ok(Detection3D { box3d, score, class_id, frame_index })
    }
}

impl Detection2D {
    pub fn new(box2d: BoxImage, score: f64, class_id: ClassId, frame_index: u32) -> Result<Self> {
        check_score(score)?;
        Ok(Detection2D { box2d, score, class_id, frame_index, mask: None })
    }

    pub fn with_mask(mut self, mask: impl Into<String>) -> Self {
        self.mask = Some(mask.into());
        self
    }

    pub fn camera_id(&self) -> &str {
        &self.box2d.camera_id
    }
}

/// One per-frame observation: a 3D detection, an image detection, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedInstance {
    pub det3d: Option<Detection3D>,
    pub det2d: Option<Detection2D>,
    pub class_id: ClassId,
}

impl FusedInstance {
    pub fn has_3d(&self) -> bool {
        self.det3d.is_some()
    }

    pub fn has_2d(&self) -> bool {
        self.det2d.is_some()
    }

    pub fn is_fused(&self) -> bool {
        self.has_3d() && self.has_2d()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraFusion {
    /// `(3d index, 2d index, overlap)` in acceptance order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched3d: Vec<usize>,
    pub unmatched2d: Vec<usize>,
}

/// Overlap of every 3D/2D pair in one camera: IoU of the projected box with
/// the image box, 0 when the box does not project, `−∞` across classes.
pub fn overlap_matrix(dets3d: &[Detection3D], projections: &[Option<BoxImage>], dets2d: &[Detection2D]) -> DMatrix<f64> {
    DMatrix::from_fn(dets3d.len(), dets2d.len(), |i, j| {
        if dets3d[i].class_id != dets2d[j].class_id {
            return f64::NEG_INFINITY;
        }
        match &projections[i] {
            Some(p) => iou_2d(p, &dets2d[j].box2d),
            None => 0.0,
        }
    })
}

pub fn fuse_single_camera(dets3d: &[Detection3D], dets2d: &[Detection2D], cam: &CameraModel, threshold: f64) -> CameraFusion {
    let projections: Vec<Option<BoxImage>> = dets3d.iter().map(|d| project_box(&d.box3d, cam)).collect();
    fuse_projected(dets3d, &projections, dets2d, threshold)
}

fn fuse_projected(dets3d: &[Detection3D], projections: &[Option<BoxImage>], dets2d: &[Detection2D], threshold: f64) -> CameraFusion {
    let overlaps = overlap_matrix(dets3d, projections, dets2d);
    let set = greedy_match(&overlaps, threshold, Sense::Maximize);
    CameraFusion {
        pairs: set.matches.iter().map(|m| (m.row, m.col, m.value)).collect(),
        unmatched3d: set.unmatched_rows,
        unmatched2d: set.unmatched_cols,
    }
}

/// Fuses across every camera. Cameras are visited in camera-id order; a 3D
/// detection paired in several cameras keeps the pairing whose projection
/// has the largest clipped area (earlier camera on ties) and the other image
/// detections become image-only instances.
///
/// Output order: one instance per 3D detection in input order, then the
/// image-only instances by camera id and index. Image detections whose
/// camera is not in `cams` are passed through unpaired.
pub fn fuse_frame(
    dets3d: &[Detection3D],
    dets2d_by_camera: &BTreeMap<String, Vec<Detection2D>>,
    cams: &[CameraModel],
    threshold: f64,
) -> Vec<FusedInstance> {
    // best[i] = (camera order, area, 2d index)
    let mut best: Vec<Option<(usize, f64, usize)>> = vec![None; dets3d.len()];
    let camera_ids: Vec<&String> = dets2d_by_camera.keys().collect();
    for (order, cam_id) in camera_ids.iter().enumerate() {
        let dets2d = &dets2d_by_camera[*cam_id];
        let Some(cam) = cams.iter().find(|c| c.camera_id() == cam_id.as_str()) else {
            continue;
        };
        if dets2d.is_empty() || dets3d.is_empty() {
            continue;
        }
        let projections: Vec<Option<BoxImage>> = dets3d.iter().map(|d| project_box(&d.box3d, cam)).collect();
        let fusion = fuse_projected(dets3d, &projections, dets2d, threshold);
        for (i, j, _) in fusion.pairs {
            let area = projections[i].as_ref().map_or(0.0, BoxImage::area);
            let better = match best[i] {
                None => true,
                Some((_, best_area, _)) => area > best_area,
            };
            if better {
                best[i] = Some((order, area, j));
            }
        }
    }

    let mut consumed: Vec<Vec<bool>> = camera_ids.iter().map(|id| vec![false; dets2d_by_camera[*id].len()]).collect();
    let mut out = Vec::with_capacity(dets3d.len() + consumed.iter().map(Vec::len).sum::<usize>());
    for (i, d3) in dets3d.iter().enumerate() {
        let det2d = best[i].map(|(order, _, j)| {
            consumed[order][j] = true;
            dets2d_by_camera[camera_ids[order]][j].clone()
        });
        out.push(FusedInstance { det3d: Some(d3.clone()), det2d, class_id: d3.class_id });
    }
    for (order, cam_id) in camera_ids.iter().enumerate() {
        for (j, d2) in dets2d_by_camera[*cam_id].iter().enumerate() {
            if !consumed[order][j] {
                out.push(FusedInstance { det3d: None, det2d: Some(d2.clone()), class_id: d2.class_id });
            }
        }
    }
    out
}
