//! Greedy thresholded bipartite matching and the two association stages.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::{iou_2d, iou_3d, planar_distance, project_box, scaled_distance, Box3D, BoxImage, CameraModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Strict threshold gate.
    pub fn passes(self, value: f64, threshold: f64) -> bool {
        match self {
            Sense::Minimize => value < threshold,
            Sense::Maximize => value > threshold,
        }
    }

    fn order(self, a: f64, b: f64) -> Ordering {
        let ord = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        match self {
            Sense::Minimize => ord,
            Sense::Maximize => ord.reverse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    /// In acceptance order.
    pub matches: Vec<Match>,
    /// Ascending.
    pub unmatched_rows: Vec<usize>,
    /// Ascending.
    pub unmatched_cols: Vec<usize>,
}

impl MatchSet {
    pub fn empty(rows: usize, cols: usize) -> Self {
        MatchSet { matches: Vec::new(), unmatched_rows: (0..rows).collect(), unmatched_cols: (0..cols).collect() }
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.matches.iter().find(|m| m.row == row).map(|m| m.col)
    }
}

/// Accepts pairs in sorted value order while both indices are free. A pair
/// is eligible only if its value passes `threshold` strictly; use `+∞`
/// (minimize) or `−∞` (maximize) to forbid a pair. Equal values are taken in
/// (row, column) order.
pub fn greedy_match(values: &DMatrix<f64>, threshold: f64, sense: Sense) -> MatchSet {
    let (rows, cols) = values.shape();
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = values[(r, c)];
            if sense.passes(v, threshold) {
                candidates.push((r, c, v));
            }
        }
    }
    candidates.sort_by(|a, b| sense.order(a.2, b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut matches = Vec::new();
    for (r, c, value) in candidates {
        if row_used[r] || col_used[c] {
            continue;
        }
        row_used[r] = true;
        col_used[c] = true;
        matches.push(Match { row: r, col: c, value });
        if matches.len() == rows.min(cols) {
            break;
        }
    }
    MatchSet { matches, unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(), unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect() }
}

/// Association metric for the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    ScaledDistance,
    PlanarDistance,
    #[serde(rename = "iou_3d")]
    Iou3d,
}

impl Metric {
    pub fn sense(self) -> Sense {
        match self {
            Metric::ScaledDistance | Metric::PlanarDistance => Sense::Minimize,
            Metric::Iou3d => Sense::Maximize,
        }
    }

    pub fn evaluate(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Metric::ScaledDistance => scaled_distance(a, b),
            Metric::PlanarDistance => planar_distance(a, b),
            Metric::Iou3d => iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::ScaledDistance => "scaled_distance",
            Metric::PlanarDistance => "planar_distance",
            Metric::Iou3d => "iou_3d",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scaled_distance" => Ok(Metric::ScaledDistance),
            "planar_distance" => Ok(Metric::PlanarDistance),
            "iou_3d" => Ok(Metric::Iou3d),
            other => Err(format!("unknown metric `{other}` (accepted: scaled_distance, planar_distance, iou_3d)")),
        }
    }
}

/// Matches instance boxes (rows) against predicted track boxes (columns).
pub fn associate_stage1(instances: &[Box3D], predicted: &[Box3D], threshold: f64, metric: Metric) -> MatchSet {
    if instances.is_empty() || predicted.is_empty() {
        return MatchSet::empty(instances.len(), predicted.len());
    }
    let values = DMatrix::from_fn(instances.len(), predicted.len(), |r, c| metric.evaluate(&instances[r], &predicted[c]));
    greedy_match(&values, threshold, metric.sense())
}

/// One image-plane observation offered in the second stage.
#[derive(Debug, Clone)]
pub struct Stage2Row<'a> {
    pub box2d: &'a BoxImage,
    /// When false the row may only pair with tracks that have no motion
    /// model.
    pub allow_filtered: bool,
}

/// What a candidate track is compared against in the image plane.
#[derive(Debug, Clone)]
pub enum Stage2Reference<'a> {
    /// Predicted box, projected into each camera on demand.
    Predicted(&'a Box3D),
    /// Last observed image box, valid in its own camera only.
    LastBox(&'a BoxImage),
}

/// Per-camera greedy IoU matching of image boxes to track references.
/// A track matched in several cameras keeps the camera where its reference
/// box is largest (ties to the earlier camera in `cams`); the losing rows
/// become unmatched. Rows whose camera is not in `cams` are compared against
/// last-box references only.
pub fn associate_stage2(rows: &[Stage2Row<'_>], tracks: &[Stage2Reference<'_>], threshold_2d: f64, cams: &[CameraModel]) -> MatchSet {
    if rows.is_empty() || tracks.is_empty() {
        return MatchSet::empty(rows.len(), tracks.len());
    }

    let mut camera_ids: Vec<&str> = cams.iter().map(|c| c.camera_id()).collect();
    for r in rows {
        if !camera_ids.contains(&r.box2d.camera_id.as_str()) {
            camera_ids.push(&r.box2d.camera_id);
        }
    }

    // (camera order, area, row, col, iou) for every per-camera match.
    let mut candidates: Vec<(usize, f64, usize, usize, f64)> = Vec::new();
    for (cam_order, cam_id) in camera_ids.iter().enumerate() {
        let row_idx: Vec<usize> = (0..rows.len()).filter(|&r| rows[r].box2d.camera_id == *cam_id).collect();
        if row_idx.is_empty() {
            continue;
        }
        let cam = cams.iter().find(|c| c.camera_id() == *cam_id);
        let references: Vec<Option<BoxImage>> = tracks
            .iter()
            .map(|t| match t {
                Stage2Reference::Predicted(b) => cam.and_then(|c| project_box(b, c)),
                Stage2Reference::LastBox(b) => (b.camera_id == *cam_id).then(|| (*b).clone()),
            })
            .collect();
        let values = DMatrix::from_fn(row_idx.len(), tracks.len(), |i, c| {
            let row = &rows[row_idx[i]];
            let filtered = matches!(tracks[c], Stage2Reference::Predicted(_));
            if filtered && !row.allow_filtered {
                return f64::NEG_INFINITY;
            }
            match &references[c] {
                Some(reference) => iou_2d(row.box2d, reference),
                None => f64::NEG_INFINITY,
            }
        });
        let set = greedy_match(&values, threshold_2d, Sense::Maximize);
        for m in set.matches {
            let area = references[m.col].as_ref().map_or(0.0, BoxImage::area);
            candidates.push((cam_order, area, row_idx[m.row], m.col, m.value));
        }
    }

    resolve_by_area(candidates, rows.len(), tracks.len())
}

/// Keeps, per column, the candidate with the largest area (earlier camera on
/// ties). Rows are unique across cameras already.
pub(crate) fn resolve_by_area(candidates: Vec<(usize, f64, usize, usize, f64)>, n_rows: usize, n_cols: usize) -> MatchSet {
    let mut best: Vec<Option<(usize, f64, usize, f64)>> = vec![None; n_cols];
    for (cam_order, area, row, col, value) in candidates {
        let replace = match best[col] {
            None => true,
            Some((best_cam, best_area, _, _)) => area > best_area || (area == best_area && cam_order < best_cam),
        };
        if replace {
            best[col] = Some((cam_order, area, row, value));
        }
    }
    let mut matches: Vec<Match> = best.iter().enumerate().filter_map(|(col, b)| b.map(|(_, _, row, value)| Match { row, col, value })).collect();
    matches.sort_by_key(|m| m.row);
    let mut row_used = vec![false; n_rows];
    let mut col_used = vec![false; n_cols];
    for m in &matches {
        row_used[m.row] = true;
        col_used[m.col] = true;
    }
    MatchSet {
        matches,
        unmatched_rows: (0..n_rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..n_cols).filter(|&c| !col_used[c]).collect(),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::tests::{bx, kitti_camera};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent greedy: repeatedly take the best eligible free pair.
    pub(crate) fn argmax_oracle(values: &DMatrix<f64>, threshold: f64, sense: Sense) -> Vec<(usize, usize, f64)> {
        let (rows, cols) = values.shape();
        let mut free_r = vec![true; rows];
        let mut free_c = vec![true; cols];
        let mut out = Vec::new();
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for r in 0..rows {
                for c in 0..cols {
                    let v = values[(r, c)];
                    let ok = match sense {
                        Sense::Minimize => v < threshold,
                        Sense::Maximize => v > threshold,
                    };
                    if !free_r[r] || !free_c[c] || !ok {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((_, _, bv)) => match sense {
                            Sense::Minimize => v < bv,
                            Sense::Maximize => v > bv,
                        },
                    };
                    if better {
                        best = Some((r, c, v));
                    }
                }
            }
            match best {
                Some((r, c, v)) => {
                    free_r[r] = false;
                    free_c[c] = false;
                    out.push((r, c, v));
                }
                None => return out,
            }
        }
    }

    fn triples(set: &MatchSet) -> Vec<(usize, usize, f64)> {
        set.matches.iter().map(|m| (m.row, m.col, m.value)).collect()
    }

    #[test]
    fn greedy_minimize_example() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 2.0, 0.5]);
        let set = greedy_match(&m, 3.0, Sense::Minimize);
        assert_eq!(triples(&set), vec![(1, 1, 0.5), (0, 0, 1.0)]);
        assert!(set.unmatched_rows.is_empty());
        assert!(set.unmatched_cols.is_empty());
    }

    #[test]
    fn greedy_all_above_threshold() {
        let m = DMatrix::from_element(3, 2, 10.0);
        let set = greedy_match(&m, 3.0, Sense::Minimize);
        assert!(set.matches.is_empty());
        assert_eq!(set.unmatched_rows, vec![0, 1, 2]);
        assert_eq!(set.unmatched_cols, vec![0, 1]);
    }

    #[test]
    fn greedy_empty_rows() {
        let m = DMatrix::<f64>::zeros(0, 4);
        let set = greedy_match(&m, 3.0, Sense::Minimize);
        assert!(set.matches.is_empty());
        assert_eq!(set.unmatched_cols, vec![0, 1, 2, 3]);
    }

    #[test]
    fn greedy_maximize_fusion_example() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.4, 0.8, 0.85]);
        let set = greedy_match(&m, 0.5, Sense::Maximize);
        assert_eq!(triples(&set), vec![(0, 0, 0.9), (1, 1, 0.85)]);
    }

    #[test]
    fn greedy_threshold_is_strict() {
        let m = DMatrix::from_row_slice(1, 2, &[0.5, 3.0]);
        assert!(greedy_match(&m, 0.5, Sense::Maximize).matches.len() == 1);
        assert_eq!(greedy_match(&m, 3.0, Sense::Maximize).matches.len(), 0);
        assert_eq!(greedy_match(&m, 0.5, Sense::Minimize).matches.len(), 0);
    }

    #[test]
    fn greedy_forbidden_sentinels() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(greedy_match(&m, f64::INFINITY, Sense::Minimize).matches.is_empty());
        let m = DMatrix::from_row_slice(1, 1, &[f64::NEG_INFINITY]);
        assert!(greedy_match(&m, f64::NEG_INFINITY, Sense::Maximize).matches.is_empty());
    }

    #[test]
    fn greedy_matches_oracle_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (r, c) = (rng.random_range(0..=8), rng.random_range(0..=8));
            // Coarse values make ties frequent.
            let m = DMatrix::from_fn(r, c, |_, _| rng.random_range(0..6) as f64);
            let sense = if rng.random_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
            let t = rng.random_range(0..6) as f64;
            // Row-major scan with a strict comparison gives the oracle the
            // same (row, col) tie-break.
            assert_eq!(triples(&greedy_match(&m, t, sense)), argmax_oracle(&m, t, sense));
        }
    }

    #[test]
    fn stage1_examples() {
        let a = bx([0.0, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let set = associate_stage1(&[a], &[a], 7.5, Metric::ScaledDistance);
        assert_eq!(triples(&set), vec![(0, 0, 0.0)]);

        let far = a.translated(&nalgebra::Vector3::new(10.0, 0.0, 0.0));
        let set = associate_stage1(&[far], &[a], 7.5, Metric::ScaledDistance);
        assert!(set.matches.is_empty());
        assert_eq!(set.unmatched_rows, vec![0]);
    }

    #[test]
    fn stage1_crossed_distances_match_oracle() {
        let t0 = bx([0.0, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let t1 = bx([3.0, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let i0 = bx([2.2, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let i1 = bx([0.9, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let set = associate_stage1(&[i0, i1], &[t0, t1], 7.5, Metric::ScaledDistance);
        let m = DMatrix::from_fn(2, 2, |r, c| scaled_distance(&[i0, i1][r], &[t0, t1][c]));
        let want = argmax_oracle(&m, 7.5, Sense::Minimize);
        assert_eq!(triples(&set), want);
        assert_eq!(set.col_for_row(0), Some(1));
        assert_eq!(set.col_for_row(1), Some(0));
    }

    #[test]
    fn stage2_examples() {
        let cam = kitti_camera();
        let b = BoxImage::new("cam", 100.0, 100.0, 200.0, 200.0).unwrap();
        let rows = [Stage2Row { box2d: &b, allow_filtered: true }];
        let set = associate_stage2(&rows, &[Stage2Reference::LastBox(&b)], 0.3, std::slice::from_ref(&cam));
        assert_eq!(triples(&set), vec![(0, 0, 1.0)]);

        let behind = bx([0.0, 0.0, -10.0], [1.5, 1.6, 3.9], 0.0);
        let set = associate_stage2(&rows, &[Stage2Reference::Predicted(&behind)], 0.3, std::slice::from_ref(&cam));
        assert!(set.matches.is_empty());

        let a = BoxImage::new("cam", 0.0, 0.0, 10.0, 10.0).unwrap();
        let c = BoxImage::new("cam", 0.0, 0.0, 4.0, 10.0).unwrap();
        assert!((iou_2d(&a, &c) - 0.4).abs() < 1e-12);
        let rows = [Stage2Row { box2d: &a, allow_filtered: true }];
        let refs = [Stage2Reference::LastBox(&c)];
        assert_eq!(associate_stage2(&rows, &refs, 0.3, std::slice::from_ref(&cam)).matches.len(), 1);
        assert_eq!(associate_stage2(&rows, &refs, 0.5, std::slice::from_ref(&cam)).matches.len(), 0);
    }

    #[test]
    fn stage2_last_box_only_valid_in_its_camera() {
        let a = BoxImage::new("left", 0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BoxImage::new("right", 0.0, 0.0, 10.0, 10.0).unwrap();
        let rows = [Stage2Row { box2d: &a, allow_filtered: true }];
        let set = associate_stage2(&rows, &[Stage2Reference::LastBox(&b)], 0.3, &[]);
        assert!(set.matches.is_empty());
    }

    #[test]
    fn stage2_restricted_rows_skip_filtered_tracks() {
        let cam = kitti_camera();
        let b3 = bx([0.0, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let proj = project_box(&b3, &cam).unwrap();
        let rows = [Stage2Row { box2d: &proj, allow_filtered: false }];
        let set = associate_stage2(&rows, &[Stage2Reference::Predicted(&b3)], 0.3, std::slice::from_ref(&cam));
        assert!(set.matches.is_empty());
        let rows = [Stage2Row { box2d: &proj, allow_filtered: true }];
        let set = associate_stage2(&rows, &[Stage2Reference::Predicted(&b3)], 0.3, std::slice::from_ref(&cam));
        assert_eq!(set.matches.len(), 1);
    }

    proptest! {
        #[test]
        fn match_set_partitions(
            r in 0usize..7, c in 0usize..7,
            seed in any::<u64>(), t in 0.0f64..1.0, maximize in any::<bool>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(r, c, |_, _| rng.random::<f64>());
            let sense = if maximize { Sense::Maximize } else { Sense::Minimize };
            let set = greedy_match(&m, t, sense);
            let mut rows: Vec<usize> = set.matches.iter().map(|x| x.row).chain(set.unmatched_rows.iter().copied()).collect();
            let mut cols: Vec<usize> = set.matches.iter().map(|x| x.col).chain(set.unmatched_cols.iter().copied()).collect();
            rows.sort();
            cols.sort();
            prop_assert_eq!(rows, (0..r).collect::<Vec<_>>());
            prop_assert_eq!(cols, (0..c).collect::<Vec<_>>());
            for x in &set.matches {
                prop_assert!(sense.passes(x.value, t));
            }
        }
    }
}
