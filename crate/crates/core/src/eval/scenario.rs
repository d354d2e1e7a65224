use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::class::ClassId;
use crate::dataio::{parse_rig_json, rig_to_json, DetectionLine, PoseLine, RigFile};
use crate::error::{Error, Result};
use crate::fusion::{Detection2D, Detection3D};
use crate::geometry::{heading_yaw, matrix_to_rows, planar_distance, project_box, Box3D, BoxImage, CameraModel, RigidTransform};
use crate::tracker::{largest_projection, FrameInput};

/// Largest center displacement allowed between consecutive frames of a
/// ground-truth track, in meters.
pub const MAX_STEP: f64 = 5.0;

/// Height of the sensor above the ground for generated objects, in meters.
pub const SENSOR_HEIGHT: f64 = 1.65;

/// Radius used for 3D false positives when the scenario has no range cutoff.
const FALSE_POSITIVE_RADIUS: f64 = 50.0;

const PLACEMENT_ATTEMPTS: usize = 200;

/// A synthetic tracking scenario.
///
/// ```json
/// {"frames": 40, "seed": 7,
///  "random": {"count": 5},
///  "tracks": [{"id": 100, "class": "car",
///              "path": {"linear": {"start": {"xyz": [0, 0.9, 60], "hwl": [1.5, 1.6, 3.9], "yaw": 1.5708},
///                                  "velocity": [0, 0, -1], "frames": 30}}}],
///  "detection": {"p_drop3d": 0.3, "sensing_range": 40}}
/// ```
///
/// Boxes are given in the world frame, which coincides with the sensor frame
/// of frame 0. The rig defaults to one KITTI-like camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_sequence")]
    pub sequence: String,
    pub frames: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<RigFile>,
    #[serde(default)]
    pub ego: EgoMotion,
    #[serde(default)]
    pub tracks: Vec<TrackSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomObjects>,
    #[serde(default)]
    pub detection: DetectionModel,
}

fn default_sequence() -> String {
    crate::dataio::DEFAULT_SEQUENCE.to_string()
}

/// Ego pose at frame `t` is a turn of `yaw_rate·t` about the vertical axis
/// and a translation of `velocity·t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgoMotion {
    pub velocity: [f64; 3],
    pub yaw_rate: f64,
}

impl EgoMotion {
    pub fn pose(&self, frame: u32) -> RigidTransform {
        let t = frame as f64;
        RigidTransform::about_vertical(self.yaw_rate * t, Vector3::from(self.velocity) * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub id: u64,
    pub class: ClassId,
    #[serde(default)]
    pub first_frame: u32,
    pub path: TrackPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackPath {
    /// One box per frame starting at `first_frame`.
    Boxes(Vec<Box3D>),
    /// Constant velocity (meters per frame) with fixed size and yaw.
    Linear { start: Box3D, velocity: [f64; 3], frames: u32 },
}

impl TrackSpec {
    fn boxes(&self) -> Vec<Box3D> {
        match &self.path {
            TrackPath::Boxes(b) => b.clone(),
            TrackPath::Linear { start, velocity, frames } => {
                let v = Vector3::from(*velocity);
                (0..*frames).map(|k| start.translated(&(v * k as f64))).collect()
            }
        }
    }
}

/// Objects placed at random inside the first camera's field of view of
/// frame 0, moving along straight lanes with the yaw aligned to the motion.
/// Objects keep `min_separation` meters between centers on the ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomObjects {
    pub count: usize,
    pub classes: Vec<ClassId>,
    /// Speed range in meters per frame.
    pub speed: [f64; 2],
    /// Depth range in front of the camera, in meters.
    pub depth: [f64; 2],
    /// Fraction of the half field of view that lanes may use.
    pub lateral_fraction: f64,
    pub min_separation: f64,
    /// Shortest lifetime in frames; objects live for the whole scenario
    /// when absent.
    pub min_frames: Option<u32>,
}

impl Default for RandomObjects {
    fn default() -> Self {
        RandomObjects {
            count: 0,
            classes: vec![ClassId::Car],
            speed: [0.0, 1.0],
            depth: [8.0, 40.0],
            lateral_fraction: 0.8,
            min_separation: 6.0,
            min_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionModel {
    pub p_drop3d: f64,
    pub p_drop2d: f64,
    /// Standard deviation of the 3D center noise per axis, in meters.
    pub position_noise: f64,
    pub yaw_noise: f64,
    /// Standard deviation of each image box edge, in pixels.
    pub box_noise: f64,
    /// Mean number of 3D false positives per frame.
    pub false_positives_3d: f64,
    /// Mean number of image false positives per camera and frame.
    pub false_positives_2d: f64,
    /// Distance from the sensor beyond which no 3D detections are produced.
    pub sensing_range: Option<f64>,
    pub score: f64,
    pub false_positive_score: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        DetectionModel {
            p_drop3d: 0.0,
            p_drop2d: 0.0,
            position_noise: 0.0,
            yaw_noise: 0.0,
            box_noise: 0.0,
            false_positives_3d: 0.0,
            false_positives_2d: 0.0,
            sensing_range: None,
            score: 0.9,
            false_positive_score: 0.5,
        }
    }
}

/// Ground-truth object in one frame. `box2d` is the largest projection over
/// the rig, absent when the object is not visible in any camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub track_id: u64,
    pub class: ClassId,
    pub box3d: Box3D,
    pub box2d: Option<BoxImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFrame {
    pub seq: String,
    pub frame: u32,
    pub objects: Vec<GtObject>,
}

/// Output of [`generate`]: tracker inputs in the world frame and the
/// matching ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sequence: String,
    pub rig: Vec<CameraModel>,
    pub frames: Vec<FrameInput>,
    pub ground_truth: Vec<GtFrame>,
}

/// Intrinsics and image size of the default camera.
pub fn default_camera() -> CameraModel {
    let k = Matrix3::new(721.5377, 0.0, 609.5593, 0.0, 721.5377, 172.854, 0.0, 0.0, 1.0);
    CameraModel::new(crate::dataio::KITTI_CAMERA_ID, k, RigidTransform::identity(), crate::dataio::KITTI_IMAGE_SIZE).expect("default camera is valid")
}

/// Typical `[h, w, l]` of a class, in meters.
pub fn class_dimensions(class: ClassId) -> [f64; 3] {
    match class {
        ClassId::Car => [1.5, 1.6, 3.9],
        ClassId::Pedestrian => [1.75, 0.6, 0.8],
        ClassId::Bicycle => [1.7, 0.6, 1.8],
        ClassId::Bus => [3.2, 2.9, 11.0],
        ClassId::Motorcycle => [1.5, 0.8, 2.1],
        ClassId::Trailer => [3.8, 2.5, 10.0],
        ClassId::Truck => [3.0, 2.5, 7.0],
    }
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Zero-noise scenario with `count` random objects over `frames` frames.
    pub fn perfect(frames: u32, count: usize, seed: u64) -> Scenario {
        Scenario {
            sequence: default_sequence(),
            frames,
            seed,
            rig: None,
            ego: EgoMotion::default(),
            tracks: Vec::new(),
            random: Some(RandomObjects { count, ..RandomObjects::default() }),
            detection: DetectionModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.frames == 0 {
            return bad("`frames` must be positive".into());
        }
        if self.sequence.is_empty() {
            return bad("`sequence` must not be empty".into());
        }
        let d = &self.detection;
        for (name, p) in [("p_drop3d", d.p_drop3d), ("p_drop2d", d.p_drop2d), ("score", d.score), ("false_positive_score", d.false_positive_score)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("`{name}` must lie in [0, 1], got {p}"));
            }
        }
        for (name, v) in [
            ("position_noise", d.position_noise),
            ("yaw_noise", d.yaw_noise),
            ("box_noise", d.box_noise),
            ("false_positives_3d", d.false_positives_3d),
            ("false_positives_2d", d.false_positives_2d),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("`{name}` must be finite and non-negative, got {v}"));
            }
        }
        if let Some(r) = d.sensing_range {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("`sensing_range` must be positive, got {r}"));
            }
        }
        if !self.ego.velocity.iter().chain([&self.ego.yaw_rate]).all(|v| v.is_finite()) {
            return bad("ego motion must be finite".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.tracks {
            if !ids.insert(t.id) {
                return bad(format!("duplicate track id {}", t.id));
            }
            let boxes = t.boxes();
            if boxes.is_empty() {
                return bad(format!("track {} has no boxes", t.id));
            }
            if t.first_frame as u64 + boxes.len() as u64 > self.frames as u64 {
                return bad(format!("track {} runs past the last frame", t.id));
            }
            for (k, w) in boxes.windows(2).enumerate() {
                let step = (w[1].position() - w[0].position()).norm();
                if step.is_nan() || step > MAX_STEP {
                    return bad(format!(
                        "track {} moves {step:.3} m between frames {} and {}; the limit is {MAX_STEP} m",
                        t.id,
                        t.first_frame as usize + k,
                        t.first_frame as usize + k + 1
                    ));
                }
            }
        }
        if let Some(r) = &self.random {
            if r.classes.is_empty() && r.count > 0 {
                return bad("`random.classes` must not be empty".into());
            }
            let ok_range = |a: [f64; 2]| a[0].is_finite() && a[1].is_finite() && 0.0 <= a[0] && a[0] <= a[1];
            if !ok_range(r.speed) || r.speed[1] > MAX_STEP {
                return bad(format!("`random.speed` must be an ordered range within [0, {MAX_STEP}]"));
            }
            if !ok_range(r.depth) || r.depth[0] <= 0.0 {
                return bad("`random.depth` must be an ordered range of positive depths".into());
            }
            if !(r.lateral_fraction > 0.0 && r.lateral_fraction <= 1.0) {
                return bad("`random.lateral_fraction` must lie in (0, 1]".into());
            }
            if !(r.min_separation.is_finite() && r.min_separation >= 0.0) {
                return bad("`random.min_separation` must be non-negative".into());
            }
            if r.min_frames.is_some_and(|m| m == 0 || m > self.frames) {
                return bad("`random.min_frames` must lie in [1, frames]".into());
            }
        }
        if let Some(rig) = &self.rig {
            if rig.cameras.is_empty() {
                return bad("the rig has no cameras".into());
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<CameraModel>> {
        match &self.rig {
            None => Ok(vec![default_camera()]),
            Some(rig) => parse_rig_json(&serde_json::to_string(rig)?),
        }
    }
}

/// A ground-truth trajectory after expansion.
struct GtTrack {
    id: u64,
    class: ClassId,
    first_frame: u32,
    boxes: Vec<Box3D>,
}

impl GtTrack {
    fn at(&self, frame: u32) -> Option<&Box3D> {
        frame.checked_sub(self.first_frame).and_then(|k| self.boxes.get(k as usize))
    }
}

/// Draws detections and ground truth for every frame. All randomness comes
/// from a ChaCha8 stream seeded with `scenario.seed`.
pub fn generate(scenario: &Scenario) -> Result<Generated> {
    scenario.validate()?;
    let rig = scenario.cameras()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut tracks: Vec<GtTrack> =
        scenario.tracks.iter().map(|t| GtTrack { id: t.id, class: t.class, first_frame: t.first_frame, boxes: t.boxes() }).collect();
    if let Some(r) = &scenario.random {
        place_random(r, scenario.frames, &rig[0], &mut tracks, &mut rng);
    }

    let model = &scenario.detection;
    let position_noise = normal(model.position_noise);
    let yaw_noise = normal(model.yaw_noise);
    let box_noise = normal(model.box_noise);
    let fp3d = poisson(model.false_positives_3d);
    let fp2d = poisson(model.false_positives_2d);
    let fp_classes: Vec<ClassId> = match &scenario.random {
        Some(r) if !r.classes.is_empty() => r.classes.clone(),
        _ => vec![ClassId::Car],
    };

    let mut frames = Vec::with_capacity(scenario.frames as usize);
    let mut ground_truth = Vec::with_capacity(scenario.frames as usize);
    for frame in 0..scenario.frames {
        let pose = scenario.ego.pose(frame);
        let to_sensor = pose.inverse();
        let cams: Vec<CameraModel> = rig.iter().map(|c| c.with_ego_pose(&pose)).collect();
        let mut input = FrameInput::empty(frame);
        input.ego_pose = pose;
        let mut objects = Vec::new();

        for t in &tracks {
            let Some(gt) = t.at(frame) else { continue };
            objects.push(GtObject { track_id: t.id, class: t.class, box3d: *gt, box2d: largest_projection(gt, &cams) });

            let range = to_sensor.apply(gt.position()).norm();
            if model.sensing_range.is_none_or(|r| range <= r) && !rng.random_bool(model.p_drop3d) {
                let mut b = *gt;
                if let Some(n) = &position_noise {
                    let delta = Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                    b = b.translated(&delta);
                }
                if let Some(n) = &yaw_noise {
                    b = b.with_yaw(b.yaw() + n.sample(&mut rng));
                }
                input.dets3d.push(Detection3D::new(b, model.score, t.class, frame)?);
            }

            for cam in &cams {
                let Some(p) = project_box(gt, cam) else { continue };
                if rng.random_bool(model.p_drop2d) {
                    continue;
                }
                let p = match &box_noise {
                    None => Some(p),
                    Some(n) => {
                        let e: [f64; 4] = std::array::from_fn(|_| n.sample(&mut rng));
                        clipped_box(cam, p.left + e[0], p.top + e[1], p.right + e[2], p.bottom + e[3])
                    }
                };
                if let Some(p) = p {
                    input.push_2d(Detection2D::new(p, model.score, t.class, frame)?);
                }
            }
        }

        if let Some(fp) = &fp3d {
            let radius = model.sensing_range.unwrap_or(FALSE_POSITIVE_RADIUS);
            for _ in 0..fp.sample(&mut rng) as usize {
                let class = fp_classes[rng.random_range(0..fp_classes.len())];
                let [h, w, l] = class_dimensions(class);
                let r = radius * rng.random::<f64>().sqrt();
                let bearing = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
                let local = Vector3::new(r * bearing.sin(), SENSOR_HEIGHT - 0.5 * h, r * bearing.cos());
                let b = Box3D::new(local, Vector3::new(h, w, l), rng.random_range(-PI..PI))?;
                input.dets3d.push(Detection3D::new(pose.apply_box(&b), model.false_positive_score, class, frame)?);
            }
        }
        if let Some(fp) = &fp2d {
            for cam in &cams {
                let (iw, ih) = cam.image_size();
                for _ in 0..fp.sample(&mut rng) as usize {
                    let class = fp_classes[rng.random_range(0..fp_classes.len())];
                    let bw = rng.random_range(10.0..(iw as f64 / 4.0).max(11.0));
                    let bh = rng.random_range(10.0..(ih as f64 / 2.0).max(11.0));
                    let left = rng.random_range(0.0..(iw as f64 - bw).max(1.0));
                    let top = rng.random_range(0.0..(ih as f64 - bh).max(1.0));
                    if let Some(b) = clipped_box(cam, left, top, left + bw, top + bh) {
                        input.push_2d(Detection2D::new(b, model.false_positive_score, class, frame)?);
                    }
                }
            }
        }

        frames.push(input);
        ground_truth.push(GtFrame { seq: scenario.sequence.clone(), frame, objects });
    }
    Ok(Generated { sequence: scenario.sequence.clone(), rig, frames, ground_truth })
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("validated standard deviation"))
}

fn poisson(mean: f64) -> Option<Poisson<f64>> {
    (mean > 0.0).then(|| Poisson::new(mean).expect("validated rate"))
}

fn clipped_box(cam: &CameraModel, l: f64, t: f64, r: f64, b: f64) -> Option<BoxImage> {
    let (w, h) = cam.image_size();
    let (l, r) = (l.min(r).max(0.0), l.max(r).min(w as f64));
    let (t, b) = (t.min(b).max(0.0), t.max(b).min(h as f64));
    BoxImage::new(cam.camera_id(), l, t, r, b).ok()
}

fn place_random(objects: &RandomObjects, frames: u32, cam: &CameraModel, tracks: &mut Vec<GtTrack>, rng: &mut ChaCha8Rng) {
    let (cx, _) = cam.principal_point();
    let fx = cam.intrinsics()[(0, 0)];
    let half_width = cx.min(cam.image_size().0 as f64 - cx);
    let slope = objects.lateral_fraction * half_width / fx;
    let to_sensor = cam.extrinsics().inverse();
    let in_view = |p: &Vector3<f64>| {
        let c = cam.extrinsics().apply(p);
        (objects.depth[0]..=objects.depth[1]).contains(&c.z) && c.x.abs() <= slope * c.z
    };
    let mut next_id = tracks.iter().map(|t| t.id + 1).max().unwrap_or(1);

    for _ in 0..objects.count {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (first_frame, len) = match objects.min_frames {
                None => (0, frames),
                Some(m) => {
                    let len = rng.random_range(m..=frames);
                    (rng.random_range(0..=frames - len), len)
                }
            };
            let class = objects.classes[rng.random_range(0..objects.classes.len())];
            let [h, w, l] = class_dimensions(class);
            let z = rng.random_range(objects.depth[0]..=objects.depth[1]);
            let x = rng.random_range(-slope * z..=slope * z);
            let mut start = to_sensor.apply(&Vector3::new(x, 0.0, z));
            start.y = SENSOR_HEIGHT - 0.5 * h;
            let speed = rng.random_range(objects.speed[0]..=objects.speed[1]);
            let angle = rng.random_range(-PI..PI);
            let velocity = Vector3::new(angle.cos(), 0.0, angle.sin()) * speed;
            let yaw = if speed > 0.0 { heading_yaw(&velocity) } else { rng.random_range(-PI..PI) };
            let end = start + velocity * (len - 1) as f64;
            if !in_view(&start) || !in_view(&end) {
                continue;
            }
            let Ok(b0) = Box3D::new(start, Vector3::new(h, w, l), yaw) else { continue };
            let candidate = GtTrack { id: next_id, class, first_frame, boxes: (0..len).map(|k| b0.translated(&(velocity * k as f64))).collect() };
            let clear = tracks.iter().all(|o| {
                (first_frame..first_frame + len).all(|f| match (o.at(f), candidate.at(f)) {
                    (Some(a), Some(b)) => planar_distance(a, b) >= objects.min_separation,
                    _ => true,
                })
            });
            if clear {
                tracks.push(candidate);
                next_id += 1;
                break;
            }
        }
    }
}

/// Writes `dets.jsonl` (sensor frame), `poses.jsonl`, `gt.jsonl` and
/// `rig.json` into `dir`.
pub fn write_synth(g: &Generated, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let seq = Some(g.sequence.as_str());
    let create = |name: &str| -> Result<(std::path::PathBuf, BufWriter<fs::File>)> {
        let path = dir.join(name);
        let f = fs::File::create(&path).map_err(|e| Error::from(e).in_file(&path))?;
        Ok((path, BufWriter::new(f)))
    };

    let (path, mut w) = create("dets.jsonl")?;
    let write_dets = |w: &mut BufWriter<fs::File>| -> Result<()> {
        for f in &g.frames {
            let to_sensor = f.ego_pose.inverse();
            for d in &f.dets3d {
                let local = Detection3D { box3d: to_sensor.apply_box(&d.box3d), ..d.clone() };
                serde_json::to_writer(&mut *w, &DetectionLine::from_3d(seq, &local))?;
                w.write_all(b"\n")?;
            }
            for d in f.dets2d_by_camera.values().flatten() {
                serde_json::to_writer(&mut *w, &DetectionLine::from_2d(seq, d))?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write_dets(&mut w).map_err(|e| e.in_file(&path))?;

    let (path, mut w) = create("poses.jsonl")?;
    let write_poses = |w: &mut BufWriter<fs::File>| -> Result<()> {
        for f in &g.frames {
            let line = PoseLine {
                seq: seq.map(str::to_string),
                frame: f.frame_index,
                rotation: matrix_to_rows(f.ego_pose.rotation()),
                translation: (*f.ego_pose.translation()).into(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    };
    write_poses(&mut w).map_err(|e| e.in_file(&path))?;

    let (path, mut w) = create("gt.jsonl")?;
    write_gt(&g.ground_truth, &mut w).map_err(|e| e.in_file(&path))?;

    let path = dir.join("rig.json");
    fs::write(&path, rig_to_json(&g.rig) + "\n").map_err(|e| Error::from(e).in_file(&path))?;
    Ok(())
}

pub fn write_gt<W: Write>(frames: &[GtFrame], mut w: W) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads ground-truth lines, grouped by sequence in file order.
pub fn read_gt<R: std::io::BufRead>(reader: R) -> Result<Vec<(String, Vec<GtFrame>)>> {
    let mut out: Vec<(String, Vec<GtFrame>)> = Vec::new();
    for item in crate::dataio::numbered_lines(reader) {
        let (n, line) = item?;
        let f: GtFrame = serde_json::from_str(&line).map_err(|e| Error::parse(n, e.to_string()))?;
        match out.iter_mut().find(|(s, _)| *s == f.seq) {
            Some((_, frames)) => frames.push(f),
            None => out.push((f.seq.clone(), vec![f])),
        }
    }
    Ok(out)
}
