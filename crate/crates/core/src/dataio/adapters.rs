//! Converters from dataset-specific detection dumps to [`DetectionLine`]s.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::Deserialize;

use super::{numbered_lines, DetectionLine};
use crate::class::ClassId;
use crate::error::{Error, Result};

/// KITTI tracking label/result lines:
/// `frame id type truncated occluded alpha left top right bottom h w l x y z ry [score]`.
///
/// Rows with positive 3D dimensions become 3D detections (center moved up
/// from the bottom face); the rest become image detections in `camera`.
/// `DontCare` and types outside the class list are skipped.
pub fn kitti_to_detections<R: BufRead>(reader: R, seq: Option<&str>, camera: &str) -> Result<Vec<DetectionLine>> {
    let mut out = Vec::new();
    for item in numbered_lines(reader) {
        let (n, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 && fields.len() != 18 {
            return Err(Error::parse(n, format!("expected 17 or 18 fields, found {}", fields.len())));
        }
        let Some(class) = ClassId::from_kitti_name(fields[2]) else {
            continue;
        };
        let frame: u32 = fields[0].parse().map_err(|e| Error::parse(n, format!("frame: {e}")))?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = fields[i].parse().map_err(|e| Error::parse(n, format!("field {}: {e}", i + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(n, format!("field {} is not finite", i + 1)))
            }
        };
        let score = if fields.len() == 18 { num(17)? } else { 1.0 };
        let [h, w, l] = [num(10)?, num(11)?, num(12)?];
        let mut d = DetectionLine {
            seq: seq.map(str::to_string),
            frame,
            kind: String::new(),
            class: class.as_str().into(),
            xyz: None,
            hwl: None,
            yaw: None,
            camera: None,
            ltrb: None,
            score,
            mask: None,
        };
        if h > 0.0 && w > 0.0 && l > 0.0 {
            let [x, y, z, ry] = [num(13)?, num(14)?, num(15)?, num(16)?];
            d.kind = "3d".into();
            d.xyz = Some([x, y - 0.5 * h, z]);
            d.hwl = Some([h, w, l]);
            d.yaw = Some(ry);
        } else {
            d.kind = "2d".into();
            d.camera = Some(camera.to_string());
            d.ltrb = Some([num(6)?, num(7)?, num(8)?, num(9)?]);
        }
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct NuscenesResults {
    results: BTreeMap<String, Vec<NuscenesBox>>,
}

#[derive(Debug, Deserialize)]
struct NuscenesBox {
    translation: [f64; 3],
    /// `[w, l, h]`.
    size: [f64; 3],
    /// Quaternion `[w, x, y, z]` of a rotation about the upward z axis.
    rotation: [f64; 4],
    detection_name: String,
    detection_score: f64,
}

/// NuScenes detection results (`{"results": {token: [box, ...]}}`). Frame
/// indices follow the order of `sample_tokens`; tokens not in the list are
/// an error. Points move from the z-up frame `(x, y, z)` to `(x, −z, y)`
/// and yaw changes sign. Categories outside the class list are skipped.
pub fn nuscenes_to_detections(results_json: &str, sample_tokens: &[String], seq: Option<&str>) -> Result<Vec<DetectionLine>> {
    let parsed: NuscenesResults = serde_json::from_str(results_json)?;
    let index: BTreeMap<&str, u32> = sample_tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
    let mut out = Vec::new();
    for (token, boxes) in &parsed.results {
        let frame = *index.get(token.as_str()).ok_or_else(|| Error::InvalidDetection(format!("sample token `{token}` is not in the token list")))?;
        for b in boxes {
            let Ok(class) = b.detection_name.parse::<ClassId>() else {
                continue;
            };
            let [qw, qx, qy, qz] = b.rotation;
            let theta = (2.0 * (qw * qz + qx * qy)).atan2(1.0 - 2.0 * (qy * qy + qz * qz));
            let [x, y, z] = b.translation;
            let [w, l, h] = b.size;
            out.push(DetectionLine {
                seq: seq.map(str::to_string),
                frame,
                kind: "3d".into(),
                class: class.as_str().into(),
                xyz: Some([x, -z, y]),
                hwl: Some([h, w, l]),
                yaw: Some(-theta),
                camera: None,
                ltrb: None,
                score: b.detection_score,
                mask: None,
            });
        }
    }
    out.sort_by_key(|d| d.frame);
    Ok(out)
}
