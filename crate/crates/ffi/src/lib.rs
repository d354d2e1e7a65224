//! C interface to the tracker.
//!
//! Every fallible function returns an [`FtStatus`]; on failure the message
//! is available from [`ft_last_error_message`] on the same thread. Strings
//! returned through out-parameters are owned by the caller and released
//! with [`ft_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fusetrack::config::Preset;
use fusetrack::dataio::{build_sequences, parse_calibration, parse_detections, DetectionSet, PoseSet};
use fusetrack::geometry::{iou_3d, scaled_distance, Box3D, RigidTransform};
use fusetrack::{Error, FrameInput, Tracker, TrackerConfig};
use nalgebra::{Matrix3, Vector3};

pub const FT_PRESET_KITTI: u32 = 0;
pub const FT_PRESET_NUSCENES: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    ConfigError = 5,
    SequencingError = 6,
    IoError = 7,
    Panic = 8,
}

/// Oriented box: center `x y z`, size `h w l`, rotation `yaw` about the
/// vertical axis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtBox3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

/// Opaque tracker handle.
pub struct FtTracker {
    inner: Tracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> FtStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::MissingKey(_) => FtStatus::ParseError,
        Error::Config(_) | Error::Scenario(_) => FtStatus::ConfigError,
        Error::Sequencing { .. } => FtStatus::SequencingError,
        Error::Io(_) => FtStatus::IoError,
        Error::File { source, .. } => status_of(source),
        _ => FtStatus::InvalidArgument,
    }
}

struct Failure(FtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FtStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FtStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {message}"));
            FtStatus::Panic
        }
    }
}

/// # Safety
/// `p` is NULL or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|e| Failure(FtStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure(FtStatus::NullPointer, format!("`{name}` must not be NULL")))
}

fn to_box(b: &FtBox3D) -> Result<Box3D, Failure> {
    Ok(Box3D::new(Vector3::new(b.x, b.y, b.z), Vector3::new(b.h, b.w, b.l), b.yaw)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ft_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ft_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a tracker.
///
/// `config_json` (nullable) is merged over the preset `FT_PRESET_KITTI` or
/// `FT_PRESET_NUSCENES`. `calibration` is rig JSON or KITTI calibration text.
///
/// # Safety
/// String arguments are NULL or NUL-terminated; `out` is a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ft_tracker_new(config_json: *const c_char, preset: u32, calibration: *const c_char, out: *mut *mut FtTracker) -> FtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FtStatus::NullPointer, "`out` must not be NULL".into()));
        }
        *out = ptr::null_mut();
        let preset = match preset {
            FT_PRESET_KITTI => Preset::Kitti,
            FT_PRESET_NUSCENES => Preset::Nuscenes,
            other => return Err(Failure(FtStatus::InvalidArgument, format!("unknown preset {other}"))),
        };
        let config = match str_arg(config_json, "config_json")? {
            Some(text) => TrackerConfig::from_json_str(text, preset)?,
            None => TrackerConfig::preset(preset),
        };
        let rig = parse_calibration(required(str_arg(calibration, "calibration")?, "calibration")?)?;
        let tracker = Tracker::new(config, rig)?;
        *out = Box::into_raw(Box::new(FtTracker { inner: tracker }));
        Ok(())
    })
}

/// Releases a tracker. NULL is ignored.
///
/// # Safety
/// `tracker` is NULL or a handle from [`ft_tracker_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ft_tracker_free(tracker: *mut FtTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Processes one frame.
///
/// `detections_jsonl` (nullable) holds detection lines in the sensor frame,
/// all with `"frame": frame`. `pose` (nullable, identity when NULL) points
/// to 12 doubles: the sensor → world transform `[R | t]` in row-major
/// order. On success `*out_json` receives the frame output as JSON, to be
/// released with [`ft_string_free`].
///
/// # Safety
/// `tracker` is a live handle; `detections_jsonl` is NULL or
/// NUL-terminated; `pose` is NULL or points to 12 readable doubles;
/// `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn ft_tracker_step(
    tracker: *mut FtTracker,
    frame: u32,
    detections_jsonl: *const c_char,
    pose: *const f64,
    out_json: *mut *mut c_char,
) -> FtStatus {
    guard(|| {
        if tracker.is_null() || out_json.is_null() {
            return Err(Failure(FtStatus::NullPointer, "`tracker` and `out_json` must not be NULL".into()));
        }
        *out_json = ptr::null_mut();
        let t = &mut (*tracker).inner;

        let ego_pose = if pose.is_null() {
            RigidTransform::identity()
        } else {
            let v = std::slice::from_raw_parts(pose, 12);
            let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            RigidTransform::from_input(r, Vector3::new(v[3], v[7], v[11]))?
        };

        let mut set = DetectionSet::new();
        if let Some(text) = str_arg(detections_jsonl, "detections_jsonl")? {
            parse_detections(text.as_bytes(), &mut set)?;
        }
        if set.len() > 1 {
            return Err(Failure(FtStatus::InvalidArgument, "detections span several sequences".into()));
        }
        let mut input = FrameInput::empty(frame);
        input.ego_pose = ego_pose;
        if let Some((name, frames)) = set.iter().next() {
            if let Some(other) = frames.keys().find(|&&f| f != frame) {
                return Err(Failure(FtStatus::InvalidArgument, format!("detection for frame {other} passed with frame {frame}")));
            }
            let poses = PoseSet::from([(name.clone(), BTreeMap::from([(frame, ego_pose)]))]);
            let mut seqs = build_sequences(&set, &poses, t.rig())?;
            input = seqs.remove(0).frames.remove(0);
        }

        let output = t.step(&input)?;
        let json = serde_json::to_string(&output).map_err(Error::from)?;
        *out_json = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Number of live tracks, confirmed or not.
///
/// # Safety
/// `tracker` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ft_tracker_live_tracks(tracker: *const FtTracker, out: *mut usize) -> FtStatus {
    guard(|| {
        if tracker.is_null() || out.is_null() {
            return Err(Failure(FtStatus::NullPointer, "`tracker` and `out` must not be NULL".into()));
        }
        *out = (*tracker).inner.tracks().len();
        Ok(())
    })
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` is NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ft_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Volume IoU of two oriented boxes.
///
/// # Safety
/// All pointers are valid for the call.
#[no_mangle]
pub unsafe extern "C" fn ft_iou_3d(a: *const FtBox3D, b: *const FtBox3D, out: *mut f64) -> FtStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(Failure(FtStatus::NullPointer, "arguments must not be NULL".into()));
        }
        *out = iou_3d(&to_box(&*a)?, &to_box(&*b)?);
        Ok(())
    })
}

/// Center and size distance scaled by the orientation penalty.
///
/// # Safety
/// All pointers are valid for the call.
#[no_mangle]
pub unsafe extern "C" fn ft_scaled_distance(a: *const FtBox3D, b: *const FtBox3D, out: *mut f64) -> FtStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(Failure(FtStatus::NullPointer, "arguments must not be NULL".into()));
        }
        *out = scaled_distance(&to_box(&*a)?, &to_box(&*b)?);
        Ok(())
    })
}
