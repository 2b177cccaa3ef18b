//! Confidence-weighted multi-view triangulation of 2D keypoints.

use nalgebra::{DMatrix, Matrix3x4, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Pose, Trajectory, Vec2, Vec3, MIN_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationConfig {
    /// Views below this confidence are ignored.
    pub confidence_gate: f64,
    /// Minimum largest angle between confident viewing rays, degrees.
    pub min_ray_angle_deg: f64,
    /// Depth reweighting passes after the first solve. Each pass rescales
    /// every view's rows by the inverse depth of the previous estimate, so
    /// the algebraic residual approaches the pixel residual.
    pub reweight_iterations: usize,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            confidence_gate: 0.3,
            min_ray_angle_deg: 2.0,
            reweight_iterations: 10,
        }
    }
}

/// One view's observation of a joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewObservation {
    pub pixel: Vec2,
    pub confidence: f64,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulatedPoint {
    pub position: Vec3,
    /// `sqrt(Σ c e² / Σ c)` over the confident views, pixels.
    pub residual_px: f64,
}

fn camera_matrix(pose: &Pose, k: &Intrinsics) -> Matrix3x4<f64> {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
    k.matrix() * rt
}

fn solve_dlt(rows: &DMatrix<f64>) -> Option<Vec3> {
    let svd = rows.clone().svd(false, true);
    let v_t = svd.v_t?;
    let (imin, _) = svd.singular_values.argmin();
    let h: Vector4<f64> = v_t.row(imin).transpose().fixed_rows::<4>(0).into_owned();
    if h[3].abs() <= 1e-15 * h.norm() {
        return None;
    }
    Some(Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Weighted pixel residual `sqrt(Σ c ‖q − π(X)‖² / Σ c)` over views above
/// the gate. Points behind a camera give `None`.
pub fn weighted_reprojection_rms(x: &Vec3, obs: &[ViewObservation], gate: f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for o in obs.iter().filter(|o| o.confidence >= gate) {
        let pc = o.pose.to_camera(x);
        if pc.z <= MIN_DEPTH {
            return None;
        }
        num += o.confidence * (o.pixel - o.intrinsics.project_camera_point(&pc)).norm_squared();
        den += o.confidence;
    }
    (den > 0.0).then(|| (num / den).sqrt())
}

/// Triangulates one joint from all views whose confidence passes the gate.
pub fn triangulate_joint(obs: &[ViewObservation], cfg: &TriangulationConfig) -> Result<TriangulatedPoint> {
    let used: Vec<&ViewObservation> = obs
        .iter()
        .filter(|o| o.confidence >= cfg.confidence_gate && o.confidence > 0.0)
        .collect();
    if used.len() < 2 {
        return Err(Error::TooFewConfidentViews { found: used.len() });
    }
    for o in &used {
        if !(o.confidence <= 1.0) || !o.pixel.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidInput("keypoint confidence outside [0, 1] or non-finite pixel".into()));
        }
    }

    let rays: Vec<Vec3> = used
        .iter()
        .map(|o| (o.pose.rotation.transpose() * o.intrinsics.unproject_ray(&o.pixel)).normalize())
        .collect();
    let mut max_angle: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            max_angle = max_angle.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    if max_angle.to_degrees() < cfg.min_ray_angle_deg {
        return Err(Error::DegenerateRays {
            angle_deg: max_angle.to_degrees(),
        });
    }

    let projections: Vec<Matrix3x4<f64>> = used.iter().map(|o| camera_matrix(&o.pose, &o.intrinsics)).collect();
    let build = |scales: &[f64]| {
        let mut a = DMatrix::zeros(2 * used.len(), 4);
        for (i, o) in used.iter().enumerate() {
            let p = &projections[i];
            let w = o.confidence.sqrt() * scales[i];
            let r0 = (p.row(2) * o.pixel.x - p.row(0)) * w;
            let r1 = (p.row(2) * o.pixel.y - p.row(1)) * w;
            a.row_mut(2 * i).copy_from(&r0);
            a.row_mut(2 * i + 1).copy_from(&r1);
        }
        a
    };
    let degenerate = || Error::DegenerateConfiguration("triangulation has no finite solution".into());
    let mut x = solve_dlt(&build(&vec![1.0; used.len()])).ok_or_else(degenerate)?;
    for _ in 0..cfg.reweight_iterations {
        let depths: Vec<f64> = used.iter().map(|o| o.pose.to_camera(&x).z).collect();
        if depths.iter().any(|z| *z <= MIN_DEPTH) {
            break;
        }
        let scales: Vec<f64> = depths.iter().map(|z| 1.0 / z).collect();
        let next = solve_dlt(&build(&scales)).ok_or_else(degenerate)?;
        let step = (next - x).norm();
        x = next;
        if step <= 1e-13 * x.norm().max(1.0) {
            break;
        }
    }
    let residual_px = weighted_reprojection_rms(&x, obs, cfg.confidence_gate.max(f64::MIN_POSITIVE))
        .ok_or(Error::BehindCamera { z: used.iter().map(|o| o.pose.to_camera(&x).z).fold(f64::INFINITY, f64::min) })?;
    Ok(TriangulatedPoint { position: x, residual_px })
}

/// 2D keypoints of one view at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint2DFrame {
    pub view: usize,
    pub frame: usize,
    /// Pixel and confidence per joint.
    pub joints: Vec<(Vec2, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointStatus {
    Valid,
    TooFewConfidentViews,
    DegenerateRays,
    BehindCamera,
    Degenerate,
}

impl JointStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            JointStatus::Valid => "valid",
            JointStatus::TooFewConfidentViews => "too_few_confident_views",
            JointStatus::DegenerateRays => "degenerate_rays",
            JointStatus::BehindCamera => "behind_camera",
            JointStatus::Degenerate => "degenerate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            JointStatus::Valid,
            JointStatus::TooFewConfidentViews,
            JointStatus::DegenerateRays,
            JointStatus::BehindCamera,
            JointStatus::Degenerate,
        ]
        .into_iter()
        .find(|j| j.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint3D {
    pub position: Vec3,
    pub status: JointStatus,
    pub residual_px: f64,
}

impl Joint3D {
    pub fn is_valid(&self) -> bool {
        self.status == JointStatus::Valid
    }

    fn invalid(status: JointStatus) -> Self {
        Self {
            position: Vec3::repeat(f64::NAN),
            status,
            residual_px: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint3DFrame {
    pub frame: usize,
    pub joints: Vec<Joint3D>,
}

/// Triangulates every joint of every frame. `k2d[v]` is view `v`'s stream,
/// already synchronized so that element `i` of every stream is the same
/// instant; its `frame` field indexes `trajs[v]`.
pub fn triangulate_sequence(
    k2d: &[Vec<Keypoint2DFrame>],
    trajs: &[Trajectory],
    cfg: &TriangulationConfig,
) -> Result<Vec<Keypoint3DFrame>> {
    if k2d.len() != trajs.len() {
        return Err(Error::SizeMismatch {
            what: "keypoint streams vs trajectories",
            left: k2d.len(),
            right: trajs.len(),
        });
    }
    if k2d.len() < 2 {
        return Err(Error::InvalidInput("triangulation needs at least two views".into()));
    }
    let n = k2d[0].len();
    if let Some(bad) = k2d.iter().find(|s| s.len() != n) {
        return Err(Error::FrameMisalignment(format!(
            "keypoint streams have {} and {} frames",
            n,
            bad.len()
        )));
    }
    let n_joints = k2d[0].first().map_or(0, |f| f.joints.len());
    for s in k2d {
        for f in s {
            if f.joints.len() != n_joints {
                return Err(Error::InvalidInput(format!(
                    "frame {} has {} joints, expected {n_joints}",
                    f.frame,
                    f.joints.len()
                )));
            }
        }
    }

    (0..n)
        .into_par_iter()
        .map(|i| {
            let poses: Vec<(Pose, Intrinsics)> = k2d
                .iter()
                .zip(trajs)
                .map(|(s, t)| Ok((*t.pose(s[i].frame)?, t.intrinsics)))
                .collect::<Result<_>>()?;
            let joints = (0..n_joints)
                .map(|j| {
                    let obs: Vec<ViewObservation> = k2d
                        .iter()
                        .zip(&poses)
                        .map(|(s, (pose, k))| ViewObservation {
                            pixel: s[i].joints[j].0,
                            confidence: s[i].joints[j].1,
                            pose: *pose,
                            intrinsics: *k,
                        })
                        .collect();
                    match triangulate_joint(&obs, cfg) {
                        Ok(p) => Ok(Joint3D {
                            position: p.position,
                            status: JointStatus::Valid,
                            residual_px: p.residual_px,
                        }),
                        Err(Error::TooFewConfidentViews { .. }) => Ok(Joint3D::invalid(JointStatus::TooFewConfidentViews)),
                        Err(Error::DegenerateRays { .. }) => Ok(Joint3D::invalid(JointStatus::DegenerateRays)),
                        Err(Error::BehindCamera { .. }) => Ok(Joint3D::invalid(JointStatus::BehindCamera)),
                        Err(Error::DegenerateConfiguration(_)) => Ok(Joint3D::invalid(JointStatus::Degenerate)),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Keypoint3DFrame {
                frame: k2d[0][i].frame,
                joints,
            })
        })
        .collect()
}
