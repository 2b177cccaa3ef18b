//! C ABI over the dualmocap library.
//!
//! Every function returns a [`DmStatus`]. On failure a message is kept per
//! thread and can be read with [`dm_last_error`]. Objects that outlive a
//! call are opaque handles created by a `*_new`/`*_open` function and
//! released with the matching `*_free`. Arrays are row-major `double`
//! buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use libc::{c_char, c_int, size_t};

use dualmocap::alignment::{procrustes_similarity, procrustes_yaw, CorrespondenceSet};
use dualmocap::calibrator::{calibrate, initialize_offsets, OffsetParams, OptimizerConfig};
use dualmocap::geom::{Intrinsics, Mat3, PointCloud, Pose, SimilarityTransform, Vec2, Vec3};
use dualmocap::io::Session;
use dualmocap::losses::{self, ViewOffset};
use dualmocap::metrics;
use dualmocap::triangulator::{triangulate_joint, TriangulationConfig, ViewObservation};
use dualmocap::{Error, ErrorFamily};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// Malformed, missing or inconsistent input, including unreadable files.
    Input = 2,
    /// The inputs were well formed but the computation failed.
    Numerical = 3,
    /// A bug inside the library; the call had no effect.
    Internal = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.family() {
            ErrorFamily::Input => DmStatus::Input,
            ErrorFamily::Numerical => DmStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DmStatus::NullArgument, format!("{what} is NULL"))
}

/// Runs `f`, records any failure and converts panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DmStatus::Internal
        }
    }
}

unsafe fn doubles<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn points(xyz: &[f64]) -> Vec<Vec3> {
    xyz.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn mat3(m: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(m)
}

/// Message of the last failed call on this thread, or NULL after a
/// success. The pointer stays valid until the next call on the thread.
#[no_mangle]
pub extern "C" fn dm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- geometry

/// `x' = scale * rotation * x + translation`, rotation row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmSimilarity {
    pub scale: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&SimilarityTransform> for DmSimilarity {
    fn from(t: &SimilarityTransform) -> Self {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = t.rotation[(r, c)];
            }
        }
        Self { scale: t.scale, rotation, translation: [t.translation.x, t.translation.y, t.translation.z] }
    }
}

/// Least-squares similarity taking `n` source points onto `n` target
/// points (`3n` doubles each). With `yaw_only` the rotation is restricted
/// to the vertical axis; without `with_scale` the scale is fixed to 1.
///
/// # Safety
/// `source` and `target` must point to `3 * n` readable doubles and `out`
/// to a writable `DmSimilarity`.
#[no_mangle]
pub unsafe extern "C" fn dm_procrustes(
    source: *const f64,
    target: *const f64,
    n: size_t,
    with_scale: bool,
    yaw_only: bool,
    out_transform: *mut DmSimilarity,
) -> DmStatus {
    guard(|| {
        let src = points(doubles(source, 3 * n, "source")?);
        let dst = points(doubles(target, 3 * n, "target")?);
        let out_transform = out(out_transform, "out_transform")?;
        let c = CorrespondenceSet::new(src, dst)?;
        let t = if yaw_only { procrustes_yaw(&c, with_scale)? } else { procrustes_similarity(&c, with_scale)? };
        *out_transform = (&t).into();
        Ok(())
    })
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// One view's sighting of a point: pixel, confidence in [0, 1] and the
/// camera pose `x_cam = rotation * x_world + translation`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmObservation {
    pub pixel: [f64; 2],
    pub confidence: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub intrinsics: DmIntrinsics,
}

/// Triangulates one point from `n` observations. Views below
/// `confidence_gate` are ignored; rays closer than `min_ray_angle_deg`
/// are rejected as degenerate.
///
/// # Safety
/// `observations` must point to `n` readable records, `out_xyz` to three
/// writable doubles and `out_residual_px` to one.
#[no_mangle]
pub unsafe extern "C" fn dm_triangulate(
    observations: *const DmObservation,
    n: size_t,
    confidence_gate: f64,
    min_ray_angle_deg: f64,
    out_xyz: *mut f64,
    out_residual_px: *mut f64,
) -> DmStatus {
    guard(|| {
        if observations.is_null() && n > 0 {
            return Err(null("observations"));
        }
        let raw = if n == 0 { &[][..] } else { slice::from_raw_parts(observations, n) };
        if out_xyz.is_null() {
            return Err(null("out_xyz"));
        }
        let out_residual_px = out(out_residual_px, "out_residual_px")?;
        let obs = raw
            .iter()
            .map(|o| {
                let k = &o.intrinsics;
                Ok(ViewObservation {
                    pixel: Vec2::new(o.pixel[0], o.pixel[1]),
                    confidence: o.confidence,
                    pose: Pose::new(mat3(&o.rotation), Vec3::from(o.translation))?,
                    intrinsics: Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let cfg = TriangulationConfig { confidence_gate, min_ray_angle_deg, ..Default::default() };
        let p = triangulate_joint(&obs, &cfg)?;
        let xyz = slice::from_raw_parts_mut(out_xyz, 3);
        xyz.copy_from_slice(p.position.as_slice());
        *out_residual_px = p.residual_px;
        Ok(())
    })
}

// ---------------------------------------------------------------- clouds

/// Opaque point cloud.
pub struct DmCloud {
    cloud: PointCloud,
}

/// Copies `n` points (`3n` doubles) into a new cloud.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles and `out_cloud` to a
/// writable handle slot. Release the handle with [`dm_cloud_free`].
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_new(xyz: *const f64, n: size_t, out_cloud: *mut *mut DmCloud) -> DmStatus {
    guard(|| {
        let pts = points(doubles(xyz, 3 * n, "xyz")?);
        let slot = out(out_cloud, "out_cloud")?;
        let cloud = PointCloud::new(pts);
        cloud.validate()?;
        *slot = Box::into_raw(Box::new(DmCloud { cloud }));
        Ok(())
    })
}

/// # Safety
/// `cloud` must be NULL or a handle from [`dm_cloud_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_free(cloud: *mut DmCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Number of points in the cloud, 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_len(cloud: *const DmCloud) -> size_t {
    cloud.as_ref().map_or(0, |c| c.cloud.len())
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance
/// each way, summed.
///
/// # Safety
/// `a` and `b` must be live handles and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_chamfer(a: *const DmCloud, b: *const DmCloud, out_value: *mut f64) -> DmStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("a"))?;
        let b = b.as_ref().ok_or_else(|| null("b"))?;
        *out(out_value, "out_value")? = losses::chamfer(&a.cloud, &b.cloud)?;
        Ok(())
    })
}

// ---------------------------------------------------------------- metrics

unsafe fn sequence(p: *const f64, frames: usize, joints: usize, what: &str) -> Result<Vec<Vec<Vec3>>, Failure> {
    let flat = doubles(p, 3 * frames * joints, what)?;
    Ok(flat.chunks_exact(3 * joints.max(1)).map(points).collect())
}

/// Which aligned joint error [`dm_joint_error`] reports.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmJointError {
    /// Each chunk aligned by its first two frames.
    TwoFrameAligned = 0,
    /// Each chunk aligned as a whole.
    ChunkAligned = 1,
}

/// Mean per-joint error in millimetres over non-overlapping chunks of
/// `chunk` frames. `pred` and `gt` hold `frames * joints * 3` doubles.
///
/// # Safety
/// Both buffers must be readable for the stated size and `out_mm` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_joint_error(
    pred: *const f64,
    gt: *const f64,
    frames: size_t,
    joints: size_t,
    chunk: size_t,
    kind: DmJointError,
    out_mm: *mut f64,
) -> DmStatus {
    guard(|| {
        let p = sequence(pred, frames, joints, "pred")?;
        let g = sequence(gt, frames, joints, "gt")?;
        let out_mm = out(out_mm, "out_mm")?;
        *out_mm = match kind {
            DmJointError::TwoFrameAligned => metrics::w_mpjpe(&p, &g, chunk)?,
            DmJointError::ChunkAligned => metrics::wa_mpjpe(&p, &g, chunk)?,
        };
        Ok(())
    })
}

/// Root translation error in percent of the ground-truth path length.
/// `pred_root` and `gt_root` hold `frames * 3` doubles.
///
/// # Safety
/// Both buffers must be readable for the stated size and `out_percent`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dm_root_translation_error(
    pred_root: *const f64,
    gt_root: *const f64,
    frames: size_t,
    out_percent: *mut f64,
) -> DmStatus {
    guard(|| {
        let p = points(doubles(pred_root, 3 * frames, "pred_root")?);
        let g = points(doubles(gt_root, 3 * frames, "gt_root")?);
        *out(out_percent, "out_percent")? = metrics::rte(&p, &g)?;
        Ok(())
    })
}

// ---------------------------------------------------------------- sessions

/// Opaque handle to a loaded capture session (manifest plus the files it
/// references).
pub struct DmSession {
    session: Session,
}

/// Per-view yaw (radians) and translation (m) into the world frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DmOffset {
    pub yaw: f64,
    pub translation: [f64; 3],
}

impl From<&ViewOffset> for DmOffset {
    fn from(o: &ViewOffset) -> Self {
        Self { yaw: o.yaw, translation: [o.translation.x, o.translation.y, o.translation.z] }
    }
}

/// Loads a session manifest.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated UTF-8 path and `out_session`
/// a writable handle slot. Release the handle with [`dm_session_free`].
#[no_mangle]
pub unsafe extern "C" fn dm_session_open(manifest_path: *const c_char, out_session: *mut *mut DmSession) -> DmStatus {
    guard(|| {
        if manifest_path.is_null() {
            return Err(null("manifest_path"));
        }
        let path = CStr::from_ptr(manifest_path)
            .to_str()
            .map_err(|_| Failure(DmStatus::Input, "manifest path is not UTF-8".into()))?;
        let slot = out(out_session, "out_session")?;
        let session = Session::load(Path::new(path))?;
        *slot = Box::into_raw(Box::new(DmSession { session }));
        Ok(())
    })
}

/// # Safety
/// `session` must be NULL or a handle from [`dm_session_open`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn dm_session_free(session: *mut DmSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Number of views, 0 for NULL.
///
/// # Safety
/// `session` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_session_view_count(session: *const DmSession) -> size_t {
    session.as_ref().map_or(0, |s| s.session.trajectories.len())
}

/// Estimates per-view offsets from the registered keyframes and refines
/// them with the default calibration settings. `out_offsets` receives one
/// record per view, `capacity` of them at most. `max_iterations` of 0
/// keeps the default.
///
/// # Safety
/// `session` must be a live handle and `out_offsets` writable for
/// `capacity` records.
#[no_mangle]
pub unsafe extern "C" fn dm_session_calibrate(
    session: *const DmSession,
    max_iterations: c_int,
    out_offsets: *mut DmOffset,
    capacity: size_t,
) -> DmStatus {
    guard(|| {
        let s = &session.as_ref().ok_or_else(|| null("session"))?.session;
        if out_offsets.is_null() {
            return Err(null("out_offsets"));
        }
        let n = s.trajectories.len();
        if capacity < n {
            return Err(Failure(DmStatus::Input, format!("room for {capacity} offsets, session has {n} views")));
        }
        let regs = s
            .registrations
            .as_ref()
            .ok_or_else(|| Failure(DmStatus::Input, "session has no registrations".into()))?;
        let init = s
            .trajectories
            .iter()
            .zip(regs)
            .map(|(t, r)| initialize_offsets(t, r, false).map(|sim| ViewOffset::new(sim.yaw(), sim.translation)))
            .collect::<Result<Vec<_>, Error>>()?;
        let mut cfg = OptimizerConfig::default();
        if max_iterations > 0 {
            cfg.adam.max_iterations = max_iterations as usize;
        }
        let r = calibrate(&s.calibration_inputs()?, &OffsetParams::new(init)?, &cfg)?;
        let dst = slice::from_raw_parts_mut(out_offsets, n);
        for (d, o) in dst.iter_mut().zip(&r.params.offsets) {
            *d = o.into();
        }
        Ok(())
    })
}
