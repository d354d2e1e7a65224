use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_to_rows, orthonormality_error, rows_to_matrix, CameraModel, RigidTransform, INPUT_ORTHONORMAL_TOLERANCE};

/// Camera id given to the left color camera of a KITTI calibration.
pub const KITTI_CAMERA_ID: &str = "image_02";
pub const KITTI_IMAGE_SIZE: (u32, u32) = (1242, 375);

/// Native rig description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub cameras: Vec<CameraEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: String,
    pub intrinsics: [[f64; 3]; 3],
    /// Sensor → camera rotation; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
    pub image_size: [u32; 2],
}

pub fn parse_rig_json(text: &str) -> Result<Vec<CameraModel>> {
    let rig: RigFile = serde_json::from_str(text)?;
    rig.cameras
        .into_iter()
        .map(|c| {
            let rotation = c.rotation.map_or_else(Matrix3::identity, |r| rows_to_matrix(&r));
            let translation = c.translation.map_or_else(Vector3::zeros, Vector3::from);
            let extrinsics = RigidTransform::from_input(rotation, translation)
                .map_err(|e| Error::InvalidCamera { camera: c.id.clone(), reason: e.to_string() })?;
            CameraModel::new(c.id, rows_to_matrix(&c.intrinsics), extrinsics, (c.image_size[0], c.image_size[1]))
        })
        .collect()
}

pub fn rig_to_json(cams: &[CameraModel]) -> String {
    let rig = RigFile {
        cameras: cams
            .iter()
            .map(|c| CameraEntry {
                id: c.camera_id().to_string(),
                intrinsics: matrix_to_rows(c.intrinsics()),
                rotation: Some(matrix_to_rows(c.extrinsics().rotation())),
                translation: Some((*c.extrinsics().translation()).into()),
                image_size: [c.image_size().0, c.image_size().1],
            })
            .collect(),
    };
    serde_json::to_string_pretty(&rig).expect("rig serializes")
}

/// Parsed KITTI calibration. Tracking happens in the rectified reference
/// camera frame, so the image camera's extrinsics are the translation
/// encoded in `P2`; the rectification and LiDAR transforms are validated and
/// kept for callers working with raw point clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalibration {
    pub camera: CameraModel,
    pub r_rect: Matrix3<f64>,
    pub velo_to_cam: RigidTransform,
}

pub fn parse_kitti_calib(text: &str) -> Result<KittiCalibration> {
    let mut values: HashMap<String, (usize, Vec<f64>)> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().trim_end_matches(':').to_string();
        let nums: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let nums = nums.map_err(|e| Error::parse(i + 1, format!("`{key}`: {e}")))?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(i + 1, format!("`{key}` has a non-finite entry")));
        }
        values.insert(key, (i + 1, nums));
    }
    let take = |keys: &[&str], n: usize| -> Result<Option<(usize, Vec<f64>)>> {
        for k in keys {
            if let Some((line, v)) = values.get(*k) {
                if v.len() != n {
                    return Err(Error::parse(*line, format!("`{k}` needs {n} values, found {}", v.len())));
                }
                return Ok(Some((*line, v.clone())));
            }
        }
        Ok(None)
    };

    let (p2_line, p2) = take(&["P2"], 12)?.ok_or_else(|| Error::MissingKey("P2".into()))?;
    let k = Matrix3::new(p2[0], p2[1], p2[2], p2[4], p2[5], p2[6], p2[8], p2[9], p2[10]);
    let t = k.try_inverse().ok_or_else(|| Error::parse(p2_line, "P2 intrinsic block is singular"))? * Vector3::new(p2[3], p2[7], p2[11]);
    let camera = CameraModel::new(KITTI_CAMERA_ID, k, RigidTransform::from_translation(t), KITTI_IMAGE_SIZE)?;

    let r_rect = match take(&["R0_rect", "R_rect"], 9)? {
        None => Matrix3::identity(),
        Some((line, v)) => {
            let r = Matrix3::from_row_slice(&v);
            let err = orthonormality_error(&r);
            if err > INPUT_ORTHONORMAL_TOLERANCE {
                return Err(Error::parse(line, format!("rectification rotation is not orthonormal (error {err:.3e})")));
            }
            r
        }
    };
    let velo_to_cam = match take(&["Tr_velo_to_cam", "Tr_velo_cam"], 12)? {
        None => RigidTransform::identity(),
        Some((line, v)) => {
            let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            RigidTransform::from_input(r, Vector3::new(v[3], v[7], v[11])).map_err(|e| Error::parse(line, e.to_string()))?
        }
    };
    Ok(KittiCalibration { camera, r_rect, velo_to_cam })
}

/// Native rig JSON or KITTI calibration text, recognized by content.
pub fn parse_calibration(text: &str) -> Result<Vec<CameraModel>> {
    if text.trim_start().starts_with('{') {
        parse_rig_json(text)
    } else {
        Ok(vec![parse_kitti_calib(text)?.camera])
    }
}

pub fn read_calibration(path: &Path) -> Result<Vec<CameraModel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_calibration(&text).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = include_str!("../../tests/data/kitti_calib_0000.txt");

    #[test]
    fn kitti_sample_focal_length() {
        let c = parse_kitti_calib(SAMPLE).unwrap();
        assert_eq!(c.camera.intrinsics()[(0, 0)], 721.5377);
        assert_eq!(c.camera.intrinsics()[(1, 1)], 721.5377);
        assert_eq!(c.camera.camera_id(), KITTI_CAMERA_ID);
        // P2 = K [I | t]
        let t = c.camera.extrinsics().translation();
        let k = c.camera.intrinsics();
        let back = k * t;
        assert!((back.x - 44.85728).abs() < 1e-9);
        assert!((back.z - 2.745884e-3).abs() < 1e-15);
        assert!(orthonormality_error(c.velo_to_cam.rotation()) < 1e-9);
    }

    #[test]
    fn key_spellings() {
        let alt = SAMPLE.replace("R_rect", "R0_rect:").replace("Tr_velo_cam", "Tr_velo_to_cam:");
        assert_eq!(parse_kitti_calib(&alt).unwrap(), parse_kitti_calib(SAMPLE).unwrap());
    }

    #[test]
    fn missing_p2_named() {
        let text: String = SAMPLE.lines().filter(|l| !l.starts_with("P2")).collect::<Vec<_>>().join("\n");
        let err = parse_kitti_calib(&text).unwrap_err();
        assert!(matches!(err, Error::MissingKey(ref k) if k == "P2"));
        assert!(err.to_string().contains("P2"));
    }

    #[test]
    fn non_orthonormal_rejected() {
        let text = SAMPLE.replace("R_rect 9.999239e-01", "R_rect 9.9e-01");
        assert!(parse_kitti_calib(&text).is_err());
    }

    #[test]
    fn identity_rig_json() {
        let text = r#"{"cameras":[{"id":"front","intrinsics":[[500,0,320],[0,500,240],[0,0,1]],"image_size":[640,480]}]}"#;
        let cams = parse_calibration(text).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0].intrinsics(), &Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0));
        assert_eq!(cams[0].extrinsics(), &RigidTransform::identity());
        let again = parse_calibration(&rig_to_json(&cams)).unwrap();
        assert_eq!(again, cams);
    }
}
