//! World-frame motion metrics.
//!
//! Joint sequences are `frames × joints` positions in meters; errors are
//! reported in millimetres, RTE in percent.

use crate::error::{Error, Result};
use crate::geom::{Mat3, Trajectory, Vec3, MIN_DEPTH};
use crate::triangulator::Keypoint2DFrame;

/// Least-squares rigid transform (no scale) taking `src` onto `dst`.
/// Rank-deficient configurations (e.g. collinear points) return one of the
/// minimizers rather than failing.
pub fn rigid_fit(src: &[Vec3], dst: &[Vec3]) -> Result<(Mat3, Vec3)> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch(src.len(), dst.len()));
    }
    if src.is_empty() {
        return Err(Error::EmptyInput("alignment points"));
    }
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - ms) * (d - md).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let (imin, _) = svd.singular_values.argmin();
    let v = v_t.transpose();
    let mut s = Vec3::repeat(1.0);
    if (v * u.transpose()).determinant() < 0.0 {
        s[imin] = -1.0;
    }
    let r = v * Mat3::from_diagonal(&s) * u.transpose();
    Ok((r, md - r * ms))
}

fn check_sequences(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("joint sequence"));
    }
    for (a, b) in pred.iter().zip(gt) {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::LengthMismatch(a.len(), b.len()));
        }
    }
    Ok(())
}

fn mean_joint_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], r: &Mat3, t: &Vec3) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in pred.iter().zip(gt) {
        for (p, g) in a.iter().zip(b) {
            sum += (r * p + t - g).norm();
            n += 1;
        }
    }
    sum / n as f64
}

fn chunked(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], chunk: usize, align_frames: Option<usize>) -> Result<f64> {
    check_sequences(pred, gt)?;
    if chunk < 2 {
        return Err(Error::InvalidInput(format!("chunk length {chunk} < 2")));
    }
    let mut means = Vec::new();
    for start in (0..pred.len()).step_by(chunk) {
        let end = (start + chunk).min(pred.len());
        if end - start < 2 {
            continue;
        }
        let k = align_frames.map_or(end - start, |k| k.min(end - start));
        let src: Vec<Vec3> = pred[start..start + k].iter().flatten().copied().collect();
        let dst: Vec<Vec3> = gt[start..start + k].iter().flatten().copied().collect();
        let (r, t) = rigid_fit(&src, &dst)?;
        means.push(mean_joint_error(&pred[start..end], &gt[start..end], &r, &t));
    }
    if means.is_empty() {
        return Err(Error::InvalidInput("sequence shorter than two frames".into()));
    }
    Ok(1000.0 * means.iter().sum::<f64>() / means.len() as f64)
}

/// Mean per-joint error after aligning each chunk by its first two frames.
/// Chunks do not overlap; a trailing chunk shorter than two frames is
/// skipped.
pub fn w_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], chunk: usize) -> Result<f64> {
    chunked(pred, gt, chunk, Some(2))
}

/// Mean per-joint error after aligning each whole chunk.
pub fn wa_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], chunk: usize) -> Result<f64> {
    chunked(pred, gt, chunk, None)
}

/// Root translation error: mean root distance after rigid alignment of the
/// whole trajectory, as a percentage of the ground-truth path length.
pub fn rte(pred_root: &[Vec3], gt_root: &[Vec3]) -> Result<f64> {
    if pred_root.len() != gt_root.len() {
        return Err(Error::LengthMismatch(pred_root.len(), gt_root.len()));
    }
    if pred_root.len() < 2 {
        return Err(Error::InvalidInput("RTE needs at least two frames".into()));
    }
    let path: f64 = gt_root.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if !(path > 0.0) {
        return Err(Error::ZeroDisplacement);
    }
    let (r, t) = rigid_fit(pred_root, gt_root)?;
    let err: f64 = pred_root.iter().zip(gt_root).map(|(p, g)| (r * p + t - g).norm()).sum::<f64>() / pred_root.len() as f64;
    Ok(100.0 * err / path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    /// Mean horizontal speed of grounded feet, meters per frame.
    pub value: f64,
    /// Number of grounded frame pairs that contributed.
    pub samples: usize,
}

/// Foot skating: horizontal foot speed over frame pairs where the foot is
/// below `contact_height` at both ends, averaged per foot and then over the
/// feet that touched the ground. No contact at all gives 0 with no samples.
pub fn jitter(seq: &[Vec<Vec3>], foot_joints: &[usize], contact_height: f64) -> Result<Jitter> {
    if seq.len() < 2 {
        return Err(Error::InvalidInput("jitter needs at least two frames".into()));
    }
    let mut per_foot = Vec::new();
    let mut samples = 0;
    for &f in foot_joints {
        let mut sum = 0.0;
        let mut n = 0usize;
        for w in seq.windows(2) {
            let (a, b) = (
                w[0].get(f).ok_or_else(|| Error::InvalidInput(format!("foot joint {f} out of range")))?,
                w[1].get(f).ok_or_else(|| Error::InvalidInput(format!("foot joint {f} out of range")))?,
            );
            if a.z < contact_height && b.z < contact_height {
                sum += ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
                n += 1;
            }
        }
        if n > 0 {
            per_foot.push(sum / n as f64);
            samples += n;
        }
    }
    if per_foot.is_empty() {
        log::warn!("jitter: no grounded foot samples");
        return Ok(Jitter { value: 0.0, samples: 0 });
    }
    Ok(Jitter {
        value: per_foot.iter().sum::<f64>() / per_foot.len() as f64,
        samples,
    })
}

/// Mean pixel distance between projected joints and 2D keypoints whose
/// confidence passes `gate`. `k2d[v][i]` pairs with `joints[i]`.
pub fn reproj_error(joints: &[Vec<Vec3>], k2d: &[Vec<Keypoint2DFrame>], trajs: &[Trajectory], gate: f64) -> Result<f64> {
    if k2d.len() != trajs.len() {
        return Err(Error::LengthMismatch(k2d.len(), trajs.len()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (stream, traj) in k2d.iter().zip(trajs) {
        if stream.len() != joints.len() {
            return Err(Error::LengthMismatch(stream.len(), joints.len()));
        }
        for (f, js) in stream.iter().zip(joints) {
            let pose = traj.pose(f.frame)?;
            for ((q, c), x) in f.joints.iter().zip(js) {
                if *c < gate || *c <= 0.0 {
                    continue;
                }
                let pc = pose.to_camera(x);
                if pc.z <= MIN_DEPTH {
                    continue;
                }
                sum += (q - traj.intrinsics.project_camera_point(&pc)).norm();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyObservations);
    }
    Ok(sum / n as f64)
}

/// Observed depth at the pixel of one joint in one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub view: usize,
    /// Trajectory frame of the view.
    pub frame: usize,
    /// Index into the joint sequence.
    pub index: usize,
    pub joint: usize,
    pub depth: f64,
}

/// Mean squared difference between each joint's camera depth and the
/// sensor depth sampled at its pixel, m². Stands in for comparing a
/// rendered body depth map against the sensor.
pub fn depth_mse_proxy(joints: &[Vec<Vec3>], samples: &[DepthSample], trajs: &[Trajectory]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let mut sum = 0.0;
    for s in samples {
        let traj = trajs.get(s.view).ok_or_else(|| Error::InvalidInput(format!("unknown view {}", s.view)))?;
        let x = joints
            .get(s.index)
            .and_then(|j| j.get(s.joint))
            .ok_or_else(|| Error::InvalidInput(format!("no joint {} at {}", s.joint, s.index)))?;
        let z = traj.pose(s.frame)?.to_camera(x).z;
        sum += (z - s.depth).powi(2);
    }
    Ok(sum / samples.len() as f64)
}
