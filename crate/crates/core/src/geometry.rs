//! Box representations, rigid transforms, pinhole projection and the
//! association metrics.
//!
//! # Axis convention
//!
//! Every module in the crate uses the same right-handed, camera-style frame:
//!
//! | axis | direction        | box extent at yaw 0 |
//! |------|------------------|---------------------|
//! | x    | lateral (right)  | length `l`          |
//! | y    | vertical (down)  | height `h`          |
//! | z    | forward (depth)  | width `w`           |
//!
//! Yaw rotates about +y, so the heading of a box with yaw `ψ` is
//! `(cos ψ, 0, −sin ψ)`. The ground plane spans x and z. Box positions are
//! geometric centers (not the bottom-face center KITTI files store).
//!
//! Corner order returned by [`Box3D::corners`], in body coordinates
//! `(along length, along height, along width)`:
//!
//! | index | body offset             |
//! |-------|-------------------------|
//! | 0     | (+l/2, +h/2, +w/2)      |
//! | 1     | (+l/2, +h/2, −w/2)      |
//! | 2     | (−l/2, +h/2, −w/2)      |
//! | 3     | (−l/2, +h/2, +w/2)      |
//! | 4..8  | same as 0..4 with −h/2  |
//!
//! Corners 0..4 are the ground-contact face (y points down).

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VERTICAL_AXIS: usize = 1;
pub const GROUND_AXES: (usize, usize) = (0, 2);

/// Corners closer to the image plane than this (meters) are culled before
/// projection.
pub const DEPTH_EPSILON: f64 = 1e-3;

/// Orthonormality tolerance for rotations held by cameras and poses.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Orthonormality tolerance accepted from files; inputs within it are
/// re-orthonormalized.
pub const INPUT_ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// Wraps an angle into `(−π, π]`. Angles already in range are returned
/// unchanged, bit for bit.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let r = (angle + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Rotation about the vertical axis by `angle` radians.
pub fn rotation_about_vertical(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Yaw of a direction vector projected onto the ground plane.
pub fn heading_yaw(direction: &Vector3<f64>) -> f64 {
    (-direction.z).atan2(direction.x)
}

// ---------------------------------------------------------------------------
// Rigid transforms

/// Rotation + translation, stored as a matrix so serialization is lossless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        RigidTransform::from_input(rows_to_matrix(&r.rotation), Vector3::from(r.translation))
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        TransformRepr { rotation: matrix_to_rows(&t.rotation), translation: t.translation.into() }
    }
}

pub(crate) fn rows_to_matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

pub(crate) fn matrix_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

/// `‖RᵀR − I‖` (max-abs entry) for a candidate rotation.
pub fn orthonormality_error(rotation: &Matrix3<f64>) -> f64 {
    (rotation.transpose() * rotation - Matrix3::identity()).amax()
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Strict constructor: the rotation must be orthonormal within
    /// [`ORTHONORMAL_TOLERANCE`] with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_finite_transform(&rotation, &translation)?;
        let err = orthonormality_error(&rotation);
        if err > ORTHONORMAL_TOLERANCE || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidTransform(format!("rotation is not orthonormal (error {err:.3e})")));
        }
        Ok(RigidTransform { rotation, translation })
    }

    /// Constructor for values read from files: rotations within
    /// [`INPUT_ORTHONORMAL_TOLERANCE`] are accepted and projected onto the
    /// nearest rotation when they miss the strict tolerance.
    pub fn from_input(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_finite_transform(&rotation, &translation)?;
        let err = orthonormality_error(&rotation);
        if err > INPUT_ORTHONORMAL_TOLERANCE || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidTransform(format!("rotation is not orthonormal (error {err:.3e} exceeds {INPUT_ORTHONORMAL_TOLERANCE:e})")));
        }
        if err <= ORTHONORMAL_TOLERANCE {
            return Ok(RigidTransform { rotation, translation });
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::InvalidTransform("SVD failed".into())),
        };
        RigidTransform::new(u * v_t, translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation }
    }

    /// Rotation about the vertical axis followed by a translation.
    pub fn about_vertical(yaw: f64, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation: rotation_about_vertical(yaw), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    /// Rigidly moves a box: position transformed, yaw rotated by the
    /// transform's rotation about the vertical axis, dimensions kept.
    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        let heading = self.rotation * b.heading();
        Box3D { position: self.apply(&b.position), dimensions: b.dimensions, yaw: wrap_angle(heading_yaw(&heading)) }
    }
}

fn check_finite_transform(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Result<()> {
    if rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidTransform("non-finite entry".into()))
    }
}

// ---------------------------------------------------------------------------
// Boxes

/// Oriented 3D box: center position, `(h, w, l)` dimensions and yaw about
/// the vertical axis in `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Box3DRepr", into = "Box3DRepr")]
pub struct Box3D {
    position: Vector3<f64>,
    dimensions: Vector3<f64>,
    yaw: f64,
}

#[derive(Serialize, Deserialize)]
struct Box3DRepr {
    xyz: [f64; 3],
    hwl: [f64; 3],
    yaw: f64,
}

impl TryFrom<Box3DRepr> for Box3D {
    type Error = Error;

    fn try_from(r: Box3DRepr) -> Result<Self> {
        Box3D::new(Vector3::from(r.xyz), Vector3::from(r.hwl), r.yaw)
    }
}

impl From<Box3D> for Box3DRepr {
    fn from(b: Box3D) -> Self {
        Box3DRepr { xyz: b.position.into(), hwl: b.dimensions.into(), yaw: b.yaw }
    }
}

impl Box3D {
    /// `hwl` is `(height, width, length)`; every component must be positive.
    pub fn new(position: Vector3<f64>, hwl: Vector3<f64>, yaw: f64) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite position or yaw".into()));
        }
        if !hwl.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidBox(format!("dimensions must be positive, got h={} w={} l={}", hwl.x, hwl.y, hwl.z)));
        }
        Ok(Box3D { position, dimensions: hwl, yaw: wrap_angle(yaw) })
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    /// `(h, w, l)`.
    pub fn dimensions(&self) -> &Vector3<f64> {
        &self.dimensions
    }

    pub fn height(&self) -> f64 {
        self.dimensions.x
    }

    pub fn width(&self) -> f64 {
        self.dimensions.y
    }

    pub fn length(&self) -> f64 {
        self.dimensions.z
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.x * self.dimensions.y * self.dimensions.z
    }

    pub fn heading(&self) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c, 0.0, -s)
    }

    /// `[x, y, z, h, w, l]`.
    pub fn location_and_size(&self) -> [f64; 6] {
        let p = &self.position;
        let d = &self.dimensions;
        [p.x, p.y, p.z, d.x, d.y, d.z]
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Box3D {
        Box3D { position: self.position + delta, ..*self }
    }

    pub fn with_position(&self, position: Vector3<f64>) -> Box3D {
        Box3D { position, ..*self }
    }

    pub fn with_yaw(&self, yaw: f64) -> Box3D {
        Box3D { yaw: wrap_angle(yaw), ..*self }
    }

    /// The 8 vertices in the order documented at module level.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        const SIGNS: [(f64, f64, f64); 8] = [
            (1.0, 1.0, 1.0),
            (1.0, 1.0, -1.0),
            (-1.0, 1.0, -1.0),
            (-1.0, 1.0, 1.0),
            (1.0, -1.0, 1.0),
            (1.0, -1.0, -1.0),
            (-1.0, -1.0, -1.0),
            (-1.0, -1.0, 1.0),
        ];
        let rot = rotation_about_vertical(self.yaw);
        let half_l = 0.5 * self.length();
        let half_h = 0.5 * self.height();
        let half_w = 0.5 * self.width();
        SIGNS.map(|(sl, sh, sw)| self.position + rot * Vector3::new(sl * half_l, sh * half_h, sw * half_w))
    }

    /// Counter-clockwise footprint on the ground plane, as `(x, z)` pairs.
    fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.length();
        let hw = 0.5 * self.width();
        let (px, pz) = (self.position[GROUND_AXES.0], self.position[GROUND_AXES.1]);
        // Body (dl, dw) -> ground (x, z) via the vertical rotation.
        let at = |dl: f64, dw: f64| [px + c * dl + s * dw, pz - s * dl + c * dw];
        let poly = [at(hl, hw), at(hl, -hw), at(-hl, -hw), at(-hl, hw)];
        if polygon_area_signed(&poly) < 0.0 {
            [poly[3], poly[2], poly[1], poly[0]]
        } else {
            poly
        }
    }

    fn vertical_extent(&self) -> (f64, f64) {
        let y = self.position[VERTICAL_AXIS];
        let half = 0.5 * self.height();
        (y - half, y + half)
    }
}

/// Axis-aligned image rectangle in pixels, tagged with its camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxImageRepr", into = "BoxImageRepr")]
pub struct BoxImage {
    pub camera_id: String,
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

#[derive(Serialize, Deserialize)]
struct BoxImageRepr {
    camera: String,
    #[serde(rename = "box")]
    ltrb: [f64; 4],
}

impl TryFrom<BoxImageRepr> for BoxImage {
    type Error = Error;

    fn try_from(r: BoxImageRepr) -> Result<Self> {
        let [l, t, rr, b] = r.ltrb;
        BoxImage::new(r.camera, l, t, rr, b)
    }
}

impl From<BoxImage> for BoxImageRepr {
    fn from(b: BoxImage) -> Self {
        BoxImageRepr { camera: b.camera_id, ltrb: [b.left, b.top, b.right, b.bottom] }
    }
}

impl BoxImage {
    pub fn new(camera_id: impl Into<String>, left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        if ![left, top, right, bottom].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox("non-finite image box".into()));
        }
        if left >= right || top >= bottom {
            return Err(Error::InvalidBox(format!("image box must satisfy left < right and top < bottom, got [{left}, {top}, {right}, {bottom}]")));
        }
        Ok(BoxImage { camera_id: camera_id.into(), left, top, right, bottom })
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))
    }
}

// ---------------------------------------------------------------------------
// Cameras

/// Pinhole camera. `extrinsics` maps tracking-frame points into the camera
/// frame (z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    camera_id: String,
    intrinsics: Matrix3<f64>,
    extrinsics: RigidTransform,
    image_size: (u32, u32),
}

impl CameraModel {
    pub fn new(camera_id: impl Into<String>, intrinsics: Matrix3<f64>, extrinsics: RigidTransform, image_size: (u32, u32)) -> Result<Self> {
        let camera_id = camera_id.into();
        let invalid = |reason: String| Error::InvalidCamera { camera: camera_id.clone(), reason };
        if !intrinsics.iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite intrinsics".into()));
        }
        if intrinsics[(0, 0)] <= 0.0 || intrinsics[(1, 1)] <= 0.0 {
            return Err(invalid("focal lengths must be positive".into()));
        }
        if intrinsics[(1, 0)] != 0.0 || intrinsics[(2, 0)] != 0.0 || intrinsics[(2, 1)] != 0.0 {
            return Err(invalid("intrinsics must be upper-triangular".into()));
        }
        if intrinsics[(2, 2)] <= 0.0 {
            return Err(invalid("intrinsics[2][2] must be positive".into()));
        }
        let err = orthonormality_error(extrinsics.rotation());
        if err > ORTHONORMAL_TOLERANCE {
            return Err(invalid(format!("extrinsic rotation not orthonormal ({err:.3e})")));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(invalid("image size must be positive".into()));
        }
        Ok(CameraModel { camera_id, intrinsics, extrinsics, image_size })
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &RigidTransform {
        &self.extrinsics
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn principal_point(&self) -> (f64, f64) {
        let k = &self.intrinsics;
        (k[(0, 2)] / k[(2, 2)], k[(1, 2)] / k[(2, 2)])
    }

    /// The same camera seen from the world frame, given the ego pose
    /// (ego → world) at the current frame.
    pub fn with_ego_pose(&self, ego_pose: &RigidTransform) -> CameraModel {
        CameraModel { extrinsics: self.extrinsics.compose(&ego_pose.inverse()), ..self.clone() }
    }

    /// Pixel coordinates of a camera-frame point; `None` at or behind
    /// [`DEPTH_EPSILON`].
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= DEPTH_EPSILON {
            return None;
        }
        let h = self.intrinsics * p;
        Some((h.x / h.z, h.y / h.z))
    }
}

/// Axis-aligned hull of the projected box, clipped to the image. `None` when
/// fewer than two corners are in front of the camera or the clipped hull has
/// no area. Corners behind the camera are dropped, not interpolated.
pub fn project_box(b: &Box3D, cam: &CameraModel) -> Option<BoxImage> {
    let mut count = 0usize;
    let (mut min_u, mut min_v) = (f64::INFINITY, f64::INFINITY);
    let (mut max_u, mut max_v) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in b.corners() {
        let pc = cam.extrinsics.apply(&corner);
        if let Some((u, v)) = cam.project_camera_point(&pc) {
            count += 1;
            min_u = min_u.min(u);
            max_u = max_u.max(u);
            min_v = min_v.min(v);
            max_v = max_v.max(v);
        }
    }
    if count < 2 {
        return None;
    }
    let (w, h) = (cam.image_size.0 as f64, cam.image_size.1 as f64);
    let left = min_u.max(0.0);
    let top = min_v.max(0.0);
    let right = max_u.min(w);
    let bottom = max_v.min(h);
    if !(right > left && bottom > top) {
        return None;
    }
    Some(BoxImage { camera_id: cam.camera_id.clone(), left, top, right, bottom })
}

// ---------------------------------------------------------------------------
// Metrics

/// Orientation penalty in `[1, 2]`: `2 − clamp(cos Δ, 0, 1)`. Headings 90°
/// or more apart are maximally dissimilar.
pub fn alpha_orientation(yaw_i: f64, yaw_j: f64) -> f64 {
    // cos is even, so taking |Δ| makes the result exactly symmetric.
    let delta = (yaw_i - yaw_j).abs();
    2.0 - delta.cos().clamp(0.0, 1.0)
}

/// Euclidean distance over `[x, y, z, h, w, l]` scaled by the orientation
/// penalty.
pub fn scaled_distance(a: &Box3D, b: &Box3D) -> f64 {
    let ra = a.location_and_size();
    let rb = b.location_and_size();
    let sq: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    sq.sqrt() * alpha_orientation(a.yaw, b.yaw)
}

/// Distance between centers projected on the ground plane.
pub fn planar_distance(a: &Box3D, b: &Box3D) -> f64 {
    let (i, j) = GROUND_AXES;
    let du = a.position[i] - b.position[i];
    let dv = a.position[j] - b.position[j];
    (du * du + dv * dv).sqrt()
}

/// Intersection over union of two image boxes. Camera ids are not checked.
pub fn iou_2d(a: &BoxImage, b: &BoxImage) -> f64 {
    let iw = a.right.min(b.right) - a.left.max(b.left);
    let ih = a.bottom.min(b.bottom) - a.top.max(b.top);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volume IoU of two yaw-oriented boxes: exact footprint intersection
/// (convex polygon clipping) times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a_lo, a_hi) = a.vertical_extent();
    let (b_lo, b_hi) = b.vertical_extent();
    let overlap_h = a_hi.min(b_hi) - a_lo.max(b_lo);
    if overlap_h <= 0.0 {
        return 0.0;
    }
    // Footprints can only meet if the circumscribed circles do.
    let ra = 0.5 * a.length().hypot(a.width());
    let rb = 0.5 * b.length().hypot(b.width());
    if planar_distance(a, b) >= ra + rb {
        return 0.0;
    }
    let area = convex_intersection_area(&a.footprint(), &b.footprint());
    if area <= 0.0 {
        return 0.0;
    }
    let inter = area * overlap_h;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn polygon_area_signed(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Sutherland–Hodgman clipping of two counter-clockwise convex quads.
fn convex_intersection_area(subject: &[[f64; 2]; 4], clip: &[[f64; 2]; 4]) -> f64 {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let mut input: Vec<[f64; 2]> = Vec::with_capacity(8);
    for i in 0..clip.len() {
        if output.is_empty() {
            return 0.0;
        }
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let dc = side(cur);
            let dp = side(prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(lerp_at_zero(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(lerp_at_zero(prev, cur, dp, dc));
            }
        }
    }
    if output.len() < 3 {
        return 0.0;
    }
    polygon_area_signed(&output).max(0.0)
}

fn lerp_at_zero(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn bx(xyz: [f64; 3], hwl: [f64; 3], yaw: f64) -> Box3D {
        Box3D::new(Vector3::from(xyz), Vector3::from(hwl), yaw).unwrap()
    }

    pub(crate) fn kitti_camera() -> CameraModel {
        let k = Matrix3::new(721.5377, 0.0, 609.5593, 0.0, 721.5377, 172.854, 0.0, 0.0, 1.0);
        CameraModel::new("cam", k, RigidTransform::identity(), (1242, 375)).unwrap()
    }

    /// Point-sampling estimate of the 3D IoU: sample inside `a`, count hits
    /// in `b`.
    fn iou_3d_monte_carlo(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inside = |bb: &Box3D, p: &Vector3<f64>| {
            let local = rotation_about_vertical(bb.yaw()).transpose() * (p - bb.position());
            local.x.abs() <= 0.5 * bb.length() && local.y.abs() <= 0.5 * bb.height() && local.z.abs() <= 0.5 * bb.width()
        };
        let rot = rotation_about_vertical(a.yaw());
        let mut hits = 0usize;
        for _ in 0..samples {
            let local = Vector3::new(
                (rng.random::<f64>() - 0.5) * a.length(),
                (rng.random::<f64>() - 0.5) * a.height(),
                (rng.random::<f64>() - 0.5) * a.width(),
            );
            let p = a.position() + rot * local;
            if inside(b, &p) {
                hits += 1;
            }
        }
        let inter = hits as f64 / samples as f64 * a.volume();
        inter / (a.volume() + b.volume() - inter)
    }

    #[test]
    fn wrap_angle_convention() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * FRAC_PI_2) + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(wrap_angle(0.1), 0.1);
        assert!((wrap_angle(TAU + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_orientation(0.7, 0.7), 1.0);
        assert_eq!(alpha_orientation(0.0, FRAC_PI_2), 2.0);
        assert!((alpha_orientation(0.0, PI / 3.0) - 1.5).abs() < 1e-12);
        // Opposing headings are clamped to the maximum.
        assert_eq!(alpha_orientation(0.0, PI), 2.0);
    }

    #[test]
    fn scaled_distance_examples() {
        let a = bx([0.0, 0.0, 0.0], [1.5, 1.6, 3.9], 0.3);
        assert_eq!(scaled_distance(&a, &a), 0.0);
        let b = a.translated(&Vector3::new(3.0, 4.0, 0.0));
        assert!((scaled_distance(&a, &b) - 5.0).abs() < 1e-12);
        let c = bx([1.0, 0.0, 0.0], [1.5, 1.6, 3.9], 0.3 + FRAC_PI_2);
        assert!((scaled_distance(&a, &c) - 2.0).abs() < 1e-12);
        // Zero when location and size agree, whatever the yaw.
        assert_eq!(scaled_distance(&a, &a.with_yaw(2.0)), 0.0);
    }

    #[test]
    fn planar_distance_examples() {
        let a = bx([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(planar_distance(&a, &a), 0.0);
        let b = a.translated(&Vector3::new(3.0, 0.0, 4.0));
        assert!((planar_distance(&a, &b) - 5.0).abs() < 1e-12);
        let c = a.translated(&Vector3::new(0.0, 7.0, 0.0));
        assert_eq!(planar_distance(&a, &c), 0.0);
    }

    /// Pixel-count IoU on a grid of `step`-sized cells.
    fn iou_2d_raster(a: &BoxImage, b: &BoxImage, step: f64) -> f64 {
        let x0 = a.left.min(b.left);
        let y0 = a.top.min(b.top);
        let x1 = a.right.max(b.right);
        let y1 = a.bottom.max(b.bottom);
        let nx = ((x1 - x0) / step).round() as usize;
        let ny = ((y1 - y0) / step).round() as usize;
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..nx {
            let x = x0 + (i as f64 + 0.5) * step;
            for j in 0..ny {
                let y = y0 + (j as f64 + 0.5) * step;
                let ia = x > a.left && x < a.right && y > a.top && y < a.bottom;
                let ib = x > b.left && x < b.right && y > b.top && y < b.bottom;
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_2d_examples() {
        let a = BoxImage::new("c", 0.0, 0.0, 10.0, 10.0).unwrap();
        let far = BoxImage::new("c", 20.0, 0.0, 30.0, 10.0).unwrap();
        let half = BoxImage::new("c", 5.0, 0.0, 15.0, 10.0).unwrap();
        assert_eq!(iou_2d(&a, &a), 1.0);
        assert_eq!(iou_2d(&a, &far), 0.0);
        let oracle = iou_2d_raster(&a, &half, 0.05);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-6);
        assert!((iou_2d(&a, &half) - oracle).abs() < 1e-6);
    }

    #[test]
    fn iou_2d_matches_raster_oracle_on_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            // Integer coordinates keep the raster oracle exact.
            let mut mk = || {
                let l = rng.random_range(0..20) as f64;
                let t = rng.random_range(0..20) as f64;
                BoxImage::new("c", l, t, l + rng.random_range(1..15) as f64, t + rng.random_range(1..15) as f64).unwrap()
            };
            let (a, b) = (mk(), mk());
            assert!((iou_2d(&a, &b) - iou_2d_raster(&a, &b, 0.25)).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_3d_examples() {
        let a = bx([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
        let far = a.translated(&Vector3::new(100.0, 0.0, 0.0));
        assert_eq!(iou_3d(&a, &far), 0.0);
        let shifted = a.translated(&Vector3::new(0.5, 0.0, 0.0));
        let oracle = iou_3d_monte_carlo(&a, &shifted, 200_000, 1);
        assert!((oracle - 1.0 / 3.0).abs() < 0.01);
        assert!((iou_3d(&a, &shifted) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn iou_3d_rotated_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..10 {
            let a = bx([0.0, 0.0, 0.0], [1.5, 1.6, 3.9], rng.random_range(-PI..PI));
            let b = bx(
                [rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5), rng.random_range(-1.5..1.5)],
                [1.4, 1.8, 4.2],
                rng.random_range(-PI..PI),
            );
            let mc = iou_3d_monte_carlo(&a, &b, 100_000, k);
            assert!((iou_3d(&a, &b) - mc).abs() < 0.02, "{} vs {}", iou_3d(&a, &b), mc);
        }
    }

    #[test]
    fn corners_unit_cube() {
        let a = bx([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let corners = a.corners();
        for c in &corners {
            for v in c.iter() {
                assert!((v.abs() - 0.5).abs() < 1e-12);
            }
        }
        let centroid = corners.iter().fold(Vector3::zeros(), |acc, c| acc + c) / 8.0;
        assert!(centroid.norm() < 1e-12);

        // yaw = π yields the same vertex set.
        let flipped = a.with_yaw(PI).corners();
        for c in &corners {
            assert!(flipped.iter().any(|f| (f - c).norm() < 1e-12));
        }
    }

    #[test]
    fn corners_extent_follow_axis_table() {
        let a = bx([0.0, 0.0, 0.0], [2.0, 4.0, 6.0], 0.0);
        let mut ext = [0.0f64; 3];
        for c in a.corners() {
            for k in 0..3 {
                ext[k] = ext[k].max(c[k].abs());
            }
        }
        // length along x, height along y, width along z.
        assert_eq!(ext, [3.0, 1.0, 2.0]);
        // Corners 0..4 form the ground-contact face (y down).
        for c in &a.corners()[..4] {
            assert_eq!(c.y, 1.0);
        }
    }

    #[test]
    fn heading_matches_yaw() {
        for yaw in [-2.5, -0.3, 0.0, 1.0, PI] {
            let b = bx([0.0; 3], [1.0; 3], yaw);
            assert!((heading_yaw(&b.heading()) - yaw).abs() < 1e-12 || (yaw - PI).abs() < 1e-12);
        }
    }

    #[test]
    fn project_centered_box_hits_principal_point() {
        let cam = kitti_camera();
        let b = bx([0.0, 0.0, 10.0], [1.5, 1.6, 3.9], 0.0);
        let p = project_box(&b, &cam).unwrap();
        let (cu, cv) = p.center();
        let (pu, pv) = cam.principal_point();
        assert!((cu - pu).abs() < 1e-9);
        assert!((cv - pv).abs() < 1e-9);
    }

    #[test]
    fn project_behind_camera_is_empty() {
        let cam = kitti_camera();
        let b = bx([0.0, 0.0, -10.0], [1.5, 1.6, 3.9], 0.0);
        assert!(project_box(&b, &cam).is_none());
    }

    #[test]
    fn project_clips_left_border() {
        let cam = kitti_camera();
        // The left edge of the hull falls at negative u.
        let b = bx([-7.0, 0.0, 8.0], [1.5, 1.6, 3.9], 0.0);
        let p = project_box(&b, &cam).unwrap();
        assert_eq!(p.left, 0.0);
        assert!(p.right > 0.0);
    }

    #[test]
    fn projection_symmetric_through_rotated_extrinsics() {
        let k = *kitti_camera().intrinsics();
        let theta = 0.4;
        let ext = RigidTransform::about_vertical(theta, Vector3::new(0.5, -1.0, 2.0));
        let cam = CameraModel::new("c", k, ext, (1242, 375)).unwrap();
        // Place the box 12 m down the optical axis, expressed in the tracking frame.
        let center = ext.inverse().apply(&Vector3::new(0.0, 0.0, 12.0));
        let b = bx(center.into(), [1.5, 1.6, 3.9], -theta);
        let p = project_box(&b, &cam).unwrap();
        let (cu, cv) = p.center();
        let (pu, pv) = cam.principal_point();
        assert!((cu - pu).abs() < 1e-9, "{cu} vs {pu}");
        assert!((cv - pv).abs() < 1e-9);
    }

    #[test]
    fn transform_rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 1e-3;
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
        assert!(RigidTransform::from_input(r, Vector3::zeros()).is_err());
        r[(0, 1)] = 5e-7;
        let t = RigidTransform::from_input(r, Vector3::zeros()).unwrap();
        assert!(orthonormality_error(t.rotation()) < ORTHONORMAL_TOLERANCE);
    }

    #[test]
    fn camera_rejects_bad_intrinsics() {
        let mut k = *kitti_camera().intrinsics();
        k[(1, 0)] = 3.0;
        assert!(CameraModel::new("c", k, RigidTransform::identity(), (10, 10)).is_err());
        let mut k = *kitti_camera().intrinsics();
        k[(0, 0)] = -1.0;
        assert!(CameraModel::new("c", k, RigidTransform::identity(), (10, 10)).is_err());
    }

    #[test]
    fn box_rejects_non_positive_dimensions() {
        assert!(Box3D::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 0.0).is_err());
        assert!(BoxImage::new("c", 5.0, 0.0, 5.0, 1.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (prop::array::uniform3(-20.0f64..20.0), prop::array::uniform3(0.2f64..6.0), -10.0f64..10.0).prop_map(|(p, d, y)| bx(p, d, y))
    }

    proptest! {
        #[test]
        fn metrics_symmetric(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(alpha_orientation(a.yaw(), b.yaw()), alpha_orientation(b.yaw(), a.yaw()));
            prop_assert!((scaled_distance(&a, &b) - scaled_distance(&b, &a)).abs() <= 1e-12);
            prop_assert!((planar_distance(&a, &b) - planar_distance(&b, &a)).abs() <= 1e-12);
            prop_assert!((iou_3d(&a, &b) - iou_3d(&b, &a)).abs() <= 1e-12);
            let alpha = alpha_orientation(a.yaw(), b.yaw());
            prop_assert!((1.0..=2.0).contains(&alpha));
        }

        #[test]
        fn yaw_always_wrapped(y in -100.0f64..100.0) {
            let b = bx([0.0; 3], [1.0; 3], y);
            prop_assert!(b.yaw() > -PI && b.yaw() <= PI);
            prop_assert!(((b.yaw() - y) / TAU - ((b.yaw() - y) / TAU).round()).abs() < 1e-9);
        }

        #[test]
        fn projection_invariant_under_half_turn(a in arb_box()) {
            let cam = kitti_camera();
            let b = a.with_yaw(a.yaw() + PI);
            match (project_box(&a, &cam), project_box(&b, &cam)) {
                (None, None) => {}
                (Some(p), Some(q)) => {
                    prop_assert!((p.left - q.left).abs() < 1e-6);
                    prop_assert!((p.right - q.right).abs() < 1e-6);
                    prop_assert!((p.top - q.top).abs() < 1e-6);
                    prop_assert!((p.bottom - q.bottom).abs() < 1e-6);
                }
                (p, q) => prop_assert!(false, "{:?} vs {:?}", p, q),
            }
        }

        #[test]
        fn transform_round_trip(a in arb_box(), yaw in -PI..PI, t in prop::array::uniform3(-50.0f64..50.0)) {
            let pose = RigidTransform::about_vertical(yaw, Vector3::from(t));
            let back = pose.inverse().apply_box(&pose.apply_box(&a));
            prop_assert!((back.position() - a.position()).norm() < 1e-9);
            prop_assert!(wrap_angle(back.yaw() - a.yaw()).abs() < 1e-9);
            prop_assert_eq!(back.dimensions(), a.dimensions());
        }
    }
}
