//! Per-sequence orchestration: fusion, prediction, two association stages,
//! state updates, track lifecycle and reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::association::{associate_stage1, associate_stage2, Stage2Reference, Stage2Row};
use crate::class::ClassId;
use crate::config::TrackerConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse_frame, Detection2D, Detection3D, FusedInstance};
use crate::geometry::{project_box, Box3D, BoxImage, CameraModel, RigidTransform};
use crate::motion::{FilterState, NoiseConfig};

/// Everything observed at one frame. 3D detections are in the tracking
/// (world) frame; `ego_pose` maps the sensor rig into that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame_index: u32,
    pub timestamp: Option<f64>,
    pub dets3d: Vec<Detection3D>,
    pub dets2d_by_camera: BTreeMap<String, Vec<Detection2D>>,
    pub ego_pose: RigidTransform,
}

impl FrameInput {
    pub fn empty(frame_index: u32) -> Self {
        FrameInput { frame_index, timestamp: None, dets3d: Vec::new(), dets2d_by_camera: BTreeMap::new(), ego_pose: RigidTransform::identity() }
    }

    pub fn push_2d(&mut self, det: Detection2D) {
        self.dets2d_by_camera.entry(det.box2d.camera_id.clone()).or_default().push(det);
    }
}

/// One reported track at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u64,
    #[serde(rename = "class")]
    pub class_id: ClassId,
    /// World-frame box; `None` for tracks never observed in 3D.
    pub box3d: Option<Box3D>,
    pub score: f64,
    pub confirmed: bool,
    pub box2d: Option<BoxImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    #[serde(rename = "frame")]
    pub frame_index: u32,
    pub ego_pose: RigidTransform,
    pub records: Vec<TrackRecord>,
}

/// Counters for one processed frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FrameStats {
    pub instances: usize,
    pub fused_pairs: usize,
    pub stage1_matches: usize,
    pub stage2_matches: usize,
    pub new_tracks: usize,
    pub terminated_tracks: usize,
    pub live_tracks: usize,
}

impl std::ops::AddAssign for FrameStats {
    fn add_assign(&mut self, o: Self) {
        self.instances += o.instances;
        self.fused_pairs += o.fused_pairs;
        self.stage1_matches += o.stage1_matches;
        self.stage2_matches += o.stage2_matches;
        self.new_tracks += o.new_tracks;
        self.terminated_tracks += o.terminated_tracks;
        self.live_tracks = o.live_tracks;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub class_id: ClassId,
    pub filter: Option<FilterState>,
    /// Last image box and the frame it was observed in.
    pub last_box2d: Option<(BoxImage, u32)>,
    /// Latest 3D detection score; best image score until the first 3D match.
    pub score: f64,
    pub frames_since_any_update: u32,
    /// Since the last image update, or since birth (counting the birth
    /// frame) for tracks never updated in 2D.
    pub frames_since_2d_update: u32,
    pub matched_this_frame: bool,
    pub confirmed: bool,
    pub mask: Option<String>,
    /// Set when the filter produced a non-positive dimension that had to be clamped.
    pub degenerate: bool,
    seen_3d: bool,
}

impl Track {
    fn spawn(track_id: u64, inst: &FusedInstance, frame: u32, noise: &NoiseConfig) -> Track {
        let mut t = Track {
            track_id,
            class_id: inst.class_id,
            filter: None,
            last_box2d: None,
            score: 0.0,
            frames_since_any_update: 0,
            frames_since_2d_update: 1,
            matched_this_frame: false,
            confirmed: false,
            mask: None,
            degenerate: false,
            seen_3d: false,
        };
        t.apply(inst, frame, noise);
        t
    }

    pub fn has_filter(&self) -> bool {
        self.filter.is_some()
    }

    /// Current 3D box of the filter, if any.
    pub fn box3d(&self) -> Option<Box3D> {
        self.filter.as_ref().map(|f| f.to_box().0)
    }

    fn predict(&mut self, noise: &NoiseConfig) {
        if let Some(f) = &self.filter {
            self.filter = Some(f.predict(noise));
        }
        self.frames_since_any_update += 1;
        self.frames_since_2d_update += 1;
        self.matched_this_frame = false;
    }

    /// Applies a matched instance: Kalman update (or initialization) from
    /// the 3D part, overwrite of the image box from the 2D part.
    fn apply(&mut self, inst: &FusedInstance, frame: u32, noise: &NoiseConfig) {
        debug_assert_eq!(inst.class_id, self.class_id);
        if let Some(d3) = &inst.det3d {
            self.filter = Some(match &self.filter {
                Some(f) => f.update(&d3.box3d, noise),
                None => FilterState::init(&d3.box3d, noise),
            });
            self.score = d3.score;
            self.seen_3d = true;
        }
        if let Some(d2) = &inst.det2d {
            self.last_box2d = Some((d2.box2d.clone(), frame));
            self.frames_since_2d_update = 0;
            self.mask = d2.mask.clone();
            if !self.seen_3d {
                self.score = self.score.max(d2.score);
            }
        }
        self.frames_since_any_update = 0;
        self.matched_this_frame = true;
    }
}

pub struct Tracker {
    config: TrackerConfig,
    rig: Vec<CameraModel>,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    last_stats: FrameStats,
}

impl Tracker {
    pub fn new(config: TrackerConfig, mut rig: Vec<CameraModel>) -> Result<Tracker> {
        config.validate()?;
        rig.sort_by(|a, b| a.camera_id().cmp(b.camera_id()));
        for w in rig.windows(2) {
            if w[0].camera_id() == w[1].camera_id() {
                return Err(Error::Config(format!("duplicate camera id `{}`", w[0].camera_id())));
            }
        }
        if let Some(cam) = &config.report.camera {
            if !rig.iter().any(|c| c.camera_id() == cam) {
                return Err(Error::Config(format!("report camera `{cam}` is not in the rig")));
            }
        }
        Ok(Tracker { config, rig, tracks: Vec::new(), next_id: 1, last_frame: None, last_stats: FrameStats::default() })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn rig(&self) -> &[CameraModel] {
        &self.rig
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn last_stats(&self) -> FrameStats {
        self.last_stats
    }

    pub fn step(&mut self, input: &FrameInput) -> Result<FrameOutput> {
        if let Some(last) = self.last_frame {
            if input.frame_index <= last {
                return Err(Error::Sequencing { last, got: input.frame_index });
            }
        }
        self.last_frame = Some(input.frame_index);
        let frame = input.frame_index;
        let mut stats = FrameStats::default();

        let cams: Vec<CameraModel> = self.rig.iter().map(|c| c.with_ego_pose(&input.ego_pose)).collect();
        let disable_2d = self.config.disable_2d;
        let noise = self.config.noise;

        // Fusion, once per class.
        let mut instances: Vec<FusedInstance> = Vec::new();
        for class in ClassId::ALL {
            let dets3d: Vec<Detection3D> = input.dets3d.iter().filter(|d| d.class_id == class).cloned().collect();
            let mut dets2d: BTreeMap<String, Vec<Detection2D>> = BTreeMap::new();
            if !disable_2d {
                for (cam, dets) in &input.dets2d_by_camera {
                    let of_class: Vec<Detection2D> = dets.iter().filter(|d| d.class_id == class).cloned().collect();
                    if !of_class.is_empty() {
                        dets2d.insert(cam.clone(), of_class);
                    }
                }
            }
            if dets3d.is_empty() && dets2d.is_empty() {
                continue;
            }
            let fused = fuse_frame(&dets3d, &dets2d, &cams, self.config.params(class).fusion_threshold);
            stats.fused_pairs += fused.iter().filter(|i| i.is_fused()).count();
            instances.extend(fused);
        }
        stats.instances = instances.len();

        for t in &mut self.tracks {
            t.predict(&noise);
        }
        let predicted: Vec<Option<Box3D>> = self.tracks.iter().map(Track::box3d).collect();

        // (instance, track) assignments from both stages.
        let mut assignments: Vec<(usize, usize)> = Vec::new();
        for class in ClassId::ALL {
            let inst_idx: Vec<usize> = (0..instances.len()).filter(|&i| instances[i].class_id == class).collect();
            let track_idx: Vec<usize> = (0..self.tracks.len()).filter(|&t| self.tracks[t].class_id == class).collect();
            if inst_idx.is_empty() || track_idx.is_empty() {
                continue;
            }
            let params = self.config.params(class);

            // Stage 1: instances with a 3D detection against tracks with a filter.
            let rows1: Vec<usize> = inst_idx.iter().copied().filter(|&i| instances[i].has_3d()).collect();
            let cols1: Vec<usize> = track_idx.iter().copied().filter(|&t| predicted[t].is_some()).collect();
            let row_boxes: Vec<Box3D> = rows1.iter().map(|&i| instances[i].det3d.as_ref().unwrap().box3d).collect();
            let col_boxes: Vec<Box3D> = cols1.iter().map(|&t| predicted[t].unwrap()).collect();
            let s1 = associate_stage1(&row_boxes, &col_boxes, params.threshold_3d, self.config.metric);
            stats.stage1_matches += s1.matches.len();
            let mut inst_used = vec![false; instances.len()];
            let mut track_used = vec![false; self.tracks.len()];
            for m in &s1.matches {
                let (i, t) = (rows1[m.row], cols1[m.col]);
                inst_used[i] = true;
                track_used[t] = true;
                assignments.push((i, t));
            }
            if disable_2d {
                continue;
            }

            // Stage 2: image boxes against the tracks left over. Fused
            // instances that found no 3D track may only join image-only tracks.
            let rows2: Vec<usize> = inst_idx.iter().copied().filter(|&i| !inst_used[i] && instances[i].has_2d()).collect();
            let cols2: Vec<usize> = track_idx.iter().copied().filter(|&t| !track_used[t]).collect();
            if rows2.is_empty() || cols2.is_empty() {
                continue;
            }
            let stage2_rows: Vec<Stage2Row<'_>> = rows2
                .iter()
                .map(|&i| Stage2Row { box2d: &instances[i].det2d.as_ref().unwrap().box2d, allow_filtered: !instances[i].has_3d() })
                .collect();
            let refs: Vec<Stage2Reference<'_>> = cols2
                .iter()
                .map(|&t| match &predicted[t] {
                    Some(b) => Stage2Reference::Predicted(b),
                    None => Stage2Reference::LastBox(&self.tracks[t].last_box2d.as_ref().expect("image-only track keeps its box").0),
                })
                .collect();
            let s2 = associate_stage2(&stage2_rows, &refs, params.threshold_2d, &cams);
            stats.stage2_matches += s2.matches.len();
            for m in &s2.matches {
                assignments.push((rows2[m.row], cols2[m.col]));
            }
        }

        let mut inst_used = vec![false; instances.len()];
        for &(i, t) in &assignments {
            inst_used[i] = true;
            self.tracks[t].apply(&instances[i], frame, &noise);
        }
        for (i, inst) in instances.iter().enumerate() {
            if !inst_used[i] {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(Track::spawn(id, inst, frame, &noise));
                stats.new_tracks += 1;
            }
        }

        // Lifecycle sweep.
        let before = self.tracks.len();
        let config = &self.config;
        self.tracks.retain(|t| t.frames_since_any_update < config.params(t.class_id).max_age);
        stats.terminated_tracks = before - self.tracks.len();
        for t in &mut self.tracks {
            let params = config.params(t.class_id);
            t.confirmed = if disable_2d {
                t.matched_this_frame
            } else {
                t.matched_this_frame && t.last_box2d.is_some() && t.frames_since_2d_update <= params.max_age_2d
            };
            if let Some(f) = &t.filter {
                if f.to_box().1 && !t.degenerate {
                    log::warn!("track {}: filter produced a non-positive dimension; clamped", t.track_id);
                    t.degenerate = true;
                }
            }
        }
        stats.live_tracks = self.tracks.len();
        self.last_stats = stats;

        Ok(FrameOutput { frame_index: frame, ego_pose: input.ego_pose, records: self.report(&cams) })
    }

    fn report(&self, cams: &[CameraModel]) -> Vec<TrackRecord> {
        let mut out = Vec::new();
        for t in &self.tracks {
            let box3d = t.box3d();
            if box3d.is_none() && !t.confirmed {
                continue;
            }
            let score = if t.confirmed {
                t.score
            } else {
                let k = if self.config.disable_2d { t.frames_since_any_update } else { t.frames_since_2d_update };
                t.score * 0.5f64.powi(k as i32)
            };
            let box2d = match (&box3d, t.confirmed) {
                (_, false) => None,
                (Some(b), true) => self.report_projection(b, cams),
                (None, true) => t.last_box2d.as_ref().map(|(b, _)| b.clone()),
            };
            let mask = if box2d.is_some() { t.mask.clone() } else { None };
            out.push(TrackRecord { track_id: t.track_id, class_id: t.class_id, box3d, score, confirmed: t.confirmed, box2d, mask });
        }
        out.sort_by_key(|r| r.track_id);
        out
    }

    fn report_projection(&self, b: &Box3D, cams: &[CameraModel]) -> Option<BoxImage> {
        match &self.config.report.camera {
            Some(id) => cams.iter().find(|c| c.camera_id() == id).and_then(|c| project_box(b, c)),
            None => largest_projection(b, cams),
        }
    }
}

/// Projection into the camera where the box covers the most pixels
/// (earlier camera on ties).
pub fn largest_projection(b: &Box3D, cams: &[CameraModel]) -> Option<BoxImage> {
    let mut best: Option<BoxImage> = None;
    for cam in cams {
        if let Some(p) = project_box(b, cam) {
            if best.as_ref().is_none_or(|q| p.area() > q.area()) {
                best = Some(p);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests::{bx, kitti_camera};
    use nalgebra::Vector3;

    fn det3(b: Box3D, score: f64, frame: u32) -> Detection3D {
        Detection3D::new(b, score, ClassId::Car, frame).unwrap()
    }

    fn det2(b: BoxImage, frame: u32) -> Detection2D {
        Detection2D::new(b, 0.7, ClassId::Car, frame).unwrap()
    }

    fn car_at(z: f64) -> Box3D {
        bx([0.0, 0.0, z], [1.5, 1.6, 3.9], -std::f64::consts::FRAC_PI_2)
    }

    fn fused_frame(frame: u32, b: Box3D, score: f64) -> FrameInput {
        let cam = kitti_camera();
        let mut f = FrameInput::empty(frame);
        f.dets3d.push(det3(b, score, frame));
        f.push_2d(det2(project_box(&b, &cam).unwrap(), frame));
        f
    }

    fn three_d_frame(frame: u32, b: Box3D, score: f64) -> FrameInput {
        let mut f = FrameInput::empty(frame);
        f.dets3d.push(det3(b, score, frame));
        f
    }

    fn tracker() -> Tracker {
        Tracker::new(TrackerConfig::kitti(), vec![kitti_camera()]).unwrap()
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut t = tracker();
        t.step(&FrameInput::empty(5)).unwrap();
        assert!(matches!(t.step(&FrameInput::empty(5)), Err(Error::Sequencing { last: 5, got: 5 })));
        assert!(t.step(&FrameInput::empty(3)).is_err());
    }

    #[test]
    fn first_frame_three_d_only_is_unconfirmed() {
        let mut t = tracker();
        let mut f = FrameInput::empty(0);
        f.dets3d.push(det3(car_at(10.0), 0.9, 0));
        f.dets3d.push(det3(bx([4.0, 0.0, 20.0], [1.5, 1.6, 3.9], 0.0), 0.8, 0));
        let out = t.step(&f).unwrap();
        assert_eq!(t.tracks().len(), 2);
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| !r.confirmed));
    }

    #[test]
    fn fused_birth_is_confirmed() {
        let mut t = tracker();
        let out = t.step(&fused_frame(0, car_at(10.0), 0.9)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].confirmed);
        assert_eq!(out.records[0].score, 0.9);
        assert!(out.records[0].box2d.is_some());
    }

    #[test]
    fn empty_frames_age_and_terminate() {
        let mut t = tracker();
        t.step(&fused_frame(0, car_at(10.0), 0.9)).unwrap();
        for k in 1..=2 {
            let out = t.step(&FrameInput::empty(k)).unwrap();
            assert_eq!(out.records.len(), 1, "frame {k}");
            assert_eq!(t.tracks()[0].frames_since_any_update, k);
        }
        let out = t.step(&FrameInput::empty(3)).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(t.last_stats().terminated_tracks, 1);
    }

    #[test]
    fn ten_perfect_frames_keep_one_track() {
        let mut t = tracker();
        for k in 0..10u32 {
            let b = car_at(10.0 + k as f64);
            let out = t.step(&fused_frame(k, b, 0.9)).unwrap();
            assert_eq!(out.records.len(), 1);
            assert_eq!(out.records[0].track_id, 1);
            assert!(out.records[0].confirmed);
        }
    }

    #[test]
    fn three_d_only_matches_lose_confirmation() {
        let mut t = tracker();
        t.step(&fused_frame(0, car_at(10.0), 0.9)).unwrap();
        // max_age_2d = 3: confirmed for 3 more 3D-only frames, not for the 4th.
        for k in 1..=4u32 {
            let out = t.step(&three_d_frame(k, car_at(10.0), 0.9)).unwrap();
            assert_eq!(out.records[0].confirmed, k <= 3, "frame {k}");
        }
        let tr = &t.tracks()[0];
        assert!(tr.frames_since_2d_update >= tr.frames_since_any_update);
    }

    #[test]
    fn score_halving_on_missed_frames() {
        let cfg = TrackerConfig::kitti().merged_with(&serde_json::json!({"default": {"max_age": 10}})).unwrap();
        let mut t = Tracker::new(cfg, vec![kitti_camera()]).unwrap();
        t.step(&fused_frame(0, car_at(10.0), 0.8)).unwrap();
        for k in 1..=5u32 {
            let out = t.step(&FrameInput::empty(k)).unwrap();
            assert_eq!(out.records[0].score, 0.8 * 0.5f64.powi(k as i32));
        }
        assert_eq!(0.8 * 0.25, 0.2);
    }

    #[test]
    fn image_only_track_then_three_d() {
        let cam = kitti_camera();
        let mut t = tracker();
        let b = car_at(30.0);
        let img = project_box(&b, &cam).unwrap();
        let mut f0 = FrameInput::empty(0);
        f0.push_2d(det2(img.clone(), 0));
        let out = t.step(&f0).unwrap();
        // Image-only tracks are reported in 2D only.
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].box3d.is_none());
        assert!(out.records[0].confirmed);

        let out = t.step(&fused_frame(1, b, 0.9)).unwrap();
        assert_eq!(t.tracks().len(), 1);
        assert_eq!(out.records[0].track_id, 1);
        assert!(out.records[0].box3d.is_some());
        assert_eq!(t.last_stats().stage2_matches, 1);
    }

    #[test]
    fn image_only_update_keeps_prediction() {
        let cam = kitti_camera();
        let mut t = tracker();
        t.step(&fused_frame(0, car_at(10.0), 0.9)).unwrap();
        t.step(&fused_frame(1, car_at(11.0), 0.9)).unwrap();
        let mut f = FrameInput::empty(2);
        f.push_2d(det2(project_box(&car_at(12.0), &cam).unwrap(), 2));
        let expect = t.tracks()[0].filter.clone().unwrap().predict(&t.config().noise);
        t.step(&f).unwrap();
        let tr = &t.tracks()[0];
        assert_eq!(t.last_stats().stage2_matches, 1);
        assert_eq!(tr.filter.as_ref().unwrap(), &expect);
        assert_eq!(tr.frames_since_2d_update, 0);
        assert_eq!(tr.last_box2d.as_ref().unwrap().1, 2);
    }

    #[test]
    fn disable_2d_ignores_images() {
        let cfg = TrackerConfig { disable_2d: true, ..TrackerConfig::kitti() };
        let mut t = Tracker::new(cfg, vec![kitti_camera()]).unwrap();
        let out = t.step(&fused_frame(0, car_at(10.0), 0.9)).unwrap();
        assert_eq!(t.last_stats().fused_pairs, 0);
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].confirmed);
        let out = t.step(&FrameInput::empty(1)).unwrap();
        assert_eq!(out.records[0].score, 0.45);
        assert_eq!(t.last_stats().stage2_matches, 0);
    }

    #[test]
    fn ego_motion_is_compensated() {
        // The ego drives forward 1 m/frame; a parked car stays put in the world.
        let cam = kitti_camera();
        let mut t = tracker();
        for k in 0..6u32 {
            let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, k as f64));
            let world = car_at(20.0);
            let sensor = pose.inverse().apply_box(&world);
            let mut f = FrameInput::empty(k);
            f.ego_pose = pose;
            f.dets3d.push(det3(world, 0.9, k));
            f.push_2d(det2(project_box(&sensor, &cam).unwrap(), k));
            let out = t.step(&f).unwrap();
            assert_eq!(out.records.len(), 1);
            assert!(out.records[0].confirmed, "frame {k}");
            assert_eq!(t.last_stats().fused_pairs, 1);
        }
        assert!(t.tracks()[0].filter.as_ref().unwrap().velocity().norm() < 1e-6);
    }

    #[test]
    fn ids_never_reused() {
        let mut t = tracker();
        let mut seen = std::collections::HashSet::new();
        for k in 0..12u32 {
            // A new object every 4 frames; the previous one disappears.
            let b = bx([(k / 4) as f64 * 6.0, 0.0, 15.0], [1.5, 1.6, 3.9], 0.0);
            let f = if k % 4 < 2 { fused_frame(k, b, 0.9) } else { FrameInput::empty(k) };
            for r in t.step(&f).unwrap().records {
                seen.insert(r.track_id);
            }
        }
        assert_eq!(seen.len(), 3);
        assert_eq!(seen.into_iter().max(), Some(3));
    }
}
