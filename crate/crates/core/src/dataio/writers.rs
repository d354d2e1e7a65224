use std::io::{BufRead, Write};

use super::numbered_lines;
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::tracker::{FrameOutput, TrackRecord};

/// Placeholder 3D fields (`h w l x y z ry`) for tracks without a 3D box.
const NO_BOX3D: &str = "-1 -1 -1 -1000 -1000 -1000 -10";
const NO_ALPHA: &str = "-10";
const NO_BOX2D: &str = "-1 -1 -1 -1";

/// Column layout of KITTI tracking files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KittiLayout {
    /// 17 columns, `frame id type truncated occluded alpha left top right
    /// bottom h w l x y z ry`; confirmed records only.
    #[default]
    Label,
    /// The label columns plus `score`; every record.
    Results,
}

/// KITTI tracking rows for one frame. 3D fields are in the sensor frame
/// with `y` at the bottom face; `alpha` is `ry − atan2(x, z)`. Records
/// without a 3D box get placeholder 3D fields, records without an image box
/// get `-1` box fields.
pub fn kitti_rows(out: &FrameOutput, layout: KittiLayout) -> Vec<String> {
    let to_sensor = out.ego_pose.inverse();
    out.records
        .iter()
        .filter(|r| layout == KittiLayout::Results || r.confirmed)
        .map(|r| {
            let box2d =
                r.box2d.as_ref().map_or_else(|| NO_BOX2D.to_string(), |b| format!("{:.6} {:.6} {:.6} {:.6}", b.left, b.top, b.right, b.bottom));
            let (alpha, box3d) = match &r.box3d {
                None => (NO_ALPHA.to_string(), NO_BOX3D.to_string()),
                Some(world) => {
                    let b = to_sensor.apply_box(world);
                    let p = b.position();
                    let bottom_y = p.y + 0.5 * b.height();
                    let alpha = wrap_angle(b.yaw() - p.x.atan2(p.z));
                    (
                        format!("{alpha:.6}"),
                        format!("{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", b.height(), b.width(), b.length(), p.x, bottom_y, p.z, b.yaw()),
                    )
                }
            };
            let row = format!("{} {} {} 0 0 {} {} {}", out.frame_index, r.track_id, r.class_id.kitti_name(), alpha, box2d, box3d);
            match layout {
                KittiLayout::Label => row,
                KittiLayout::Results => format!("{row} {:.6}", r.score),
            }
        })
        .collect()
}

pub fn write_kitti<W: Write>(outputs: &[FrameOutput], layout: KittiLayout, mut w: W) -> Result<()> {
    for out in outputs {
        for row in kitti_rows(out, layout) {
            writeln!(w, "{row}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One JSON document per frame, floats written losslessly.
pub fn write_json<W: Write>(outputs: &[FrameOutput], mut w: W) -> Result<()> {
    for out in outputs {
        serde_json::to_writer(&mut w, out)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json_outputs<R: BufRead>(reader: R) -> Result<Vec<FrameOutput>> {
    let mut frames = Vec::new();
    for item in numbered_lines(reader) {
        let (n, line) = item?;
        let out: FrameOutput = serde_json::from_str(&line).map_err(|e| Error::parse(n, e.to_string()))?;
        let mut ids: Vec<u64> = out.records.iter().map(|r: &TrackRecord| r.track_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::parse(n, "duplicate track_id within a frame"));
        }
        frames.push(out);
    }
    Ok(frames)
}
