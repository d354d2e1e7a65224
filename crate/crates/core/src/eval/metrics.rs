use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::GtFrame;
use crate::association::{greedy_match, Sense};
use crate::class::ClassId;
use crate::error::{Error, Result};
use crate::geometry::{iou_2d, planar_distance, Box3D, BoxImage};
use crate::tracker::FrameOutput;

/// Smallest image IoU that counts as a correspondence.
pub const MIN_IOU_2D: f64 = 0.5;
/// Largest ground-plane center distance that counts as a correspondence, in meters.
pub const MAX_DISTANCE_3D: f64 = 2.0;

/// Correspondence test between a ground-truth object and a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Image IoU ≥ 0.5 in the same camera.
    Iou2d,
    /// Ground-plane center distance ≤ 2 m.
    Dist3d,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou2d" => Ok(Criterion::Iou2d),
            "dist3d" => Ok(Criterion::Dist3d),
            other => Err(Error::Config(format!("unknown criterion `{other}` (accepted: iou2d, dist3d)"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Iou2d => "iou2d",
            Criterion::Dist3d => "dist3d",
        })
    }
}

#[derive(Debug, Clone)]
enum Geometry<'a> {
    Image(&'a BoxImage),
    Space(&'a Box3D),
}

struct Item<'a> {
    id: u64,
    class: ClassId,
    geometry: Geometry<'a>,
}

impl Criterion {
    fn sense(self) -> Sense {
        match self {
            Criterion::Iou2d => Sense::Maximize,
            Criterion::Dist3d => Sense::Minimize,
        }
    }

    /// Value of the pair, or `None` if it fails the criterion.
    fn score(self, gt: &Item, hyp: &Item) -> Option<f64> {
        if gt.class != hyp.class {
            return None;
        }
        match (&gt.geometry, &hyp.geometry) {
            (Geometry::Image(a), Geometry::Image(b)) => {
                let v = iou_2d(a, b);
                (a.camera_id == b.camera_id && v >= MIN_IOU_2D).then_some(v)
            }
            (Geometry::Space(a), Geometry::Space(b)) => {
                let v = planar_distance(a, b);
                (v <= MAX_DISTANCE_3D).then_some(v)
            }
            _ => None,
        }
    }

    fn forbidden(self) -> f64 {
        match self.sense() {
            Sense::Maximize => f64::NEG_INFINITY,
            Sense::Minimize => f64::INFINITY,
        }
    }
}

/// Raw CLEAR-MOT event counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotCounts {
    pub frames: usize,
    pub gt_count: usize,
    pub matches: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
}

impl AddAssign for MotCounts {
    fn add_assign(&mut self, o: MotCounts) {
        self.frames += o.frames;
        self.gt_count += o.gt_count;
        self.matches += o.matches;
        self.false_positives += o.false_positives;
        self.misses += o.misses;
        self.id_switches += o.id_switches;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotMetrics {
    pub mota: f64,
    pub recall: f64,
    pub precision: f64,
    pub id_switches: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub gt_count: usize,
    pub matches: usize,
    pub frames: usize,
}

impl From<MotCounts> for MotMetrics {
    /// With no ground truth, MOTA is `1 − FP`; precision is 0 without
    /// hypotheses and recall is 0 without ground truth.
    fn from(c: MotCounts) -> Self {
        let errors = (c.false_positives + c.misses + c.id_switches) as f64;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        MotMetrics {
            mota: 1.0 - errors / c.gt_count.max(1) as f64,
            recall: ratio(c.matches, c.gt_count),
            precision: ratio(c.matches, c.matches + c.false_positives),
            id_switches: c.id_switches,
            false_positives: c.false_positives,
            misses: c.misses,
            gt_count: c.gt_count,
            matches: c.matches,
            frames: c.frames,
        }
    }
}

impl MotMetrics {
    /// Two aligned columns, one metric per line.
    pub fn to_text(&self) -> String {
        let rows: [(&str, String); 9] = [
            ("MOTA", format!("{:.6}", self.mota)),
            ("recall", format!("{:.6}", self.recall)),
            ("precision", format!("{:.6}", self.precision)),
            ("IDSW", self.id_switches.to_string()),
            ("FP", self.false_positives.to_string()),
            ("FN", self.misses.to_string()),
            ("GT", self.gt_count.to_string()),
            ("matches", self.matches.to_string()),
            ("frames", self.frames.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>12}\n")).collect()
    }
}

fn gt_items(f: &GtFrame, criterion: Criterion) -> Vec<Item<'_>> {
    f.objects
        .iter()
        .filter_map(|o| {
            let geometry = match criterion {
                Criterion::Iou2d => Geometry::Image(o.box2d.as_ref()?),
                Criterion::Dist3d => Geometry::Space(&o.box3d),
            };
            Some(Item { id: o.track_id, class: o.class, geometry })
        })
        .collect()
}

/// Confirmed records carrying the geometry the criterion needs, ordered by
/// geometry so the result does not depend on track labels.
fn hyp_items(f: &FrameOutput, criterion: Criterion) -> Vec<Item<'_>> {
    let mut items: Vec<Item> = f
        .records
        .iter()
        .filter(|r| r.confirmed)
        .filter_map(|r| {
            let geometry = match criterion {
                Criterion::Iou2d => Geometry::Image(r.box2d.as_ref()?),
                Criterion::Dist3d => Geometry::Space(r.box3d.as_ref()?),
            };
            Some(Item { id: r.track_id, class: r.class_id, geometry })
        })
        .collect();
    items.sort_by(|a, b| geometry_key(a).partial_cmp(&geometry_key(b)).unwrap_or(Ordering::Equal));
    items
}

fn geometry_key(item: &Item) -> (ClassId, Vec<f64>) {
    let key = match &item.geometry {
        Geometry::Image(b) => vec![b.left, b.top, b.right, b.bottom],
        Geometry::Space(b) => b.location_and_size().into_iter().chain([b.yaw()]).collect(),
    };
    (item.class, key)
}

/// CLEAR-MOT counts of one sequence. Correspondences from the previous
/// match of each ground-truth object are kept while they pass the
/// criterion; the rest are matched greedily by best value. An ID switch is
/// counted when an object's hypothesis differs from its last match.
pub fn evaluate_counts(gt: &[GtFrame], hyp: &[FrameOutput], criterion: Criterion) -> Result<MotCounts> {
    if gt.len() != hyp.len() {
        return Err(Error::FrameMismatch { gt: gt.len(), hyp: hyp.len() });
    }
    let mut counts = MotCounts::default();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    for (g, h) in gt.iter().zip(hyp) {
        if g.frame != h.frame_index {
            return Err(Error::FrameAlignment { gt: g.frame, hyp: h.frame_index });
        }
        let gts = gt_items(g, criterion);
        let hyps = hyp_items(h, criterion);
        let mut gt_used = vec![false; gts.len()];
        let mut hyp_used = vec![false; hyps.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        for (i, o) in gts.iter().enumerate() {
            let Some(&prev) = last_match.get(&o.id) else { continue };
            if let Some(j) = hyps.iter().position(|x| x.id == prev) {
                if !hyp_used[j] && criterion.score(o, &hyps[j]).is_some() {
                    gt_used[i] = true;
                    hyp_used[j] = true;
                    pairs.push((i, j));
                }
            }
        }

        let free_gt: Vec<usize> = (0..gts.len()).filter(|&i| !gt_used[i]).collect();
        let free_hyp: Vec<usize> = (0..hyps.len()).filter(|&j| !hyp_used[j]).collect();
        let values = DMatrix::from_fn(free_gt.len(), free_hyp.len(), |r, c| {
            criterion.score(&gts[free_gt[r]], &hyps[free_hyp[c]]).unwrap_or_else(|| criterion.forbidden())
        });
        let threshold = criterion.forbidden();
        for m in greedy_match(&values, threshold, criterion.sense()).matches {
            pairs.push((free_gt[m.row], free_hyp[m.col]));
        }

        for &(i, j) in &pairs {
            let (gt_id, hyp_id) = (gts[i].id, hyps[j].id);
            if last_match.insert(gt_id, hyp_id).is_some_and(|prev| prev != hyp_id) {
                counts.id_switches += 1;
            }
        }
        counts.frames += 1;
        counts.gt_count += gts.len();
        counts.matches += pairs.len();
        counts.misses += gts.len() - pairs.len();
        counts.false_positives += hyps.len() - pairs.len();
    }
    Ok(counts)
}

pub fn evaluate(gt: &[GtFrame], hyp: &[FrameOutput], criterion: Criterion) -> Result<MotMetrics> {
    evaluate_counts(gt, hyp, criterion).map(MotMetrics::from)
}

/// Evaluates sequences in parallel and sums their counts.
pub fn evaluate_sequences(pairs: &[(Vec<GtFrame>, Vec<FrameOutput>)], criterion: Criterion) -> Result<MotMetrics> {
    let per_sequence: Result<Vec<MotCounts>> = pairs.par_iter().map(|(g, h)| evaluate_counts(g, h, criterion)).collect();
    let mut total = MotCounts::default();
    for c in per_sequence? {
        total += c;
    }
    Ok(total.into())
}

/// Ground truth rendered as tracker output: every object becomes a
/// confirmed record with its own id.
pub fn gt_as_hypotheses(gt: &[GtFrame]) -> Vec<FrameOutput> {
    gt.iter()
        .map(|f| FrameOutput {
            frame_index: f.frame,
            ego_pose: crate::geometry::RigidTransform::identity(),
            records: f
                .objects
                .iter()
                .map(|o| crate::tracker::TrackRecord {
                    track_id: o.track_id,
                    class_id: o.class,
                    box3d: Some(o.box3d),
                    score: 1.0,
                    confirmed: true,
                    box2d: o.box2d.clone(),
                    mask: None,
                })
                .collect(),
        })
        .collect()
}
