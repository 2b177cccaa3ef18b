//! Geometric primitives shared by every stage: intrinsics, rigid poses,
//! trajectories, point clouds and similarity transforms.
//!
//! Camera convention: a [`Pose`] maps world points into the camera frame,
//! `x_cam = R * x_world + T`. The world frame is Z-up, gravity aligned and
//! metric. Camera axes are x right, y down, z forward.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `‖RᵀR − I‖` accepted for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Minimum camera-frame depth for a point to be considered visible.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹ [q; 1]`, the camera-frame ray with unit z.
    pub fn unproject_ray(&self, q: &Vec2) -> Vec3 {
        Vec3::new((q.x - self.cx) / self.fx, (q.y - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point. The caller guarantees `p.z > 0`.
    pub fn project_camera_point(&self, p: &Vec3) -> Vec2 {
        Vec2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    pub fn contains(&self, q: &Vec2) -> bool {
        q.x >= 0.0 && q.y >= 0.0 && q.x < self.width as f64 && q.y < self.height as f64
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !is_rotation(&rotation) {
            return Err(Error::InvalidInput(
                "pose rotation is not a proper orthonormal matrix".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds the pose of a camera with the given world orientation
    /// (camera axes expressed in world) and optical center.
    pub fn from_camera_to_world(orientation: &Mat3, center: &Vec3) -> Self {
        let rotation = orientation.transpose();
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    /// Camera at `center` looking at `target` with image rows pointing
    /// down the world z axis. Fails when the view direction is vertical.
    pub fn look_at(center: &Vec3, target: &Vec3) -> Result<Self> {
        let fwd = (target - center).try_normalize(1e-12).ok_or(Error::DegenerateConfiguration("camera target equals its center".into()))?;
        let right = fwd
            .cross(&Vec3::z())
            .try_normalize(1e-9)
            .ok_or(Error::DegenerateConfiguration("vertical viewing direction".into()))?;
        let down = fwd.cross(&right);
        Ok(Self::from_camera_to_world(&Mat3::from_columns(&[right, down, fwd]), center))
    }

    /// Camera optical center in world coordinates, `-Rᵀ T`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.rotation * p_world + self.translation
    }

    pub fn to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Pose of the same physical camera after the world is remapped by
    /// `x' = R x + t`: `R' = R_cam Rᵀ`, `T' = T − R_cam Rᵀ t`.
    pub fn with_world_remap(&self, rotation: &Mat3, translation: &Vec3) -> Self {
        let r = self.rotation * rotation.transpose();
        Self {
            rotation: r,
            translation: self.translation - r * translation,
        }
    }

    /// Pose after the world is remapped by a similarity `x' = sRx + t`.
    /// Camera-frame coordinates scale by `s` as well.
    pub fn with_world_similarity(&self, sim: &SimilarityTransform) -> Self {
        let r = self.rotation * sim.rotation.transpose();
        Self {
            rotation: r,
            translation: sim.scale * self.translation - r * sim.translation,
        }
    }

    /// Quaternion (x, y, z, w) of the world-to-camera rotation.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        [q.i, q.j, q.k, q.w]
    }

    pub fn from_quaternion_xyzw(q: [f64; 4], translation: Vec3) -> Result<Self> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidInput("zero-norm quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Pose::new(*unit.to_rotation_matrix().matrix(), translation)
    }
}

/// One timestamped pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Per-view camera trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub view_id: String,
    pub frames: Vec<TimedPose>,
    pub intrinsics: Intrinsics,
}

impl Trajectory {
    pub fn new(view_id: impl Into<String>, frames: Vec<TimedPose>, intrinsics: Intrinsics) -> Result<Self> {
        let traj = Self {
            view_id: view_id.into(),
            frames,
            intrinsics,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyInput("trajectory has no frames"));
        }
        if self
            .frames
            .windows(2)
            .any(|w| !(w[1].timestamp > w[0].timestamp))
        {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: timestamps not strictly increasing",
                self.view_id
            )));
        }
        self.intrinsics.validate()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pose(&self, frame: usize) -> Result<&Pose> {
        self.frames
            .get(frame)
            .map(|f| &f.pose)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "trajectory {}: frame {frame} out of range ({} frames)",
                    self.view_id,
                    self.frames.len()
                ))
            })
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.pose.center()).collect()
    }

    pub fn map_poses(&self, f: impl Fn(&Pose) -> Pose) -> Self {
        Self {
            view_id: self.view_id.clone(),
            frames: self
                .frames
                .iter()
                .map(|fr| TimedPose {
                    timestamp: fr.timestamp,
                    pose: f(&fr.pose),
                })
                .collect(),
            intrinsics: self.intrinsics,
        }
    }
}

/// Metric point set with optional per-point confidence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub confidence: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            confidence: None,
        }
    }

    pub fn with_confidence(points: Vec<Vec3>, confidence: Vec<f64>) -> Result<Self> {
        let cloud = Self {
            points,
            confidence: Some(confidence),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("non-finite point coordinate".into()));
        }
        if let Some(c) = &self.confidence {
            if c.len() != self.points.len() {
                return Err(Error::SizeMismatch {
                    what: "confidence vs points",
                    left: c.len(),
                    right: self.points.len(),
                });
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput("confidence outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            confidence: self.confidence.clone(),
        }
    }
}

/// `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
        }
        if !is_rotation(&rotation) {
            return Err(Error::InvalidInput(
                "similarity rotation is not a proper orthonormal matrix".into(),
            ));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rigid(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            scale: 1.0,
            rotation,
            translation,
        }
    }

    /// Rigid transform with a z-axis rotation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self::rigid(yaw_rotation(yaw), translation)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// Rotation angle about z, assuming the rotation is a pure yaw.
    pub fn yaw(&self) -> f64 {
        yaw_of(&self.rotation)
    }
}

/// Rotation by `angle` radians about the world z axis.
pub fn yaw_rotation(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Derivative of [`yaw_rotation`] with respect to the angle.
pub fn yaw_rotation_derivative(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

pub fn yaw_of(r: &Mat3) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn is_rotation(r: &Mat3) -> bool {
    r.iter().all(|v| v.is_finite())
        && (r.transpose() * r - Mat3::identity()).norm() < ROTATION_TOLERANCE
        && r.determinant() > 0.0
}

/// Projects a world point through a pose and intrinsics.
pub fn project(p_world: &Vec3, pose: &Pose, k: &Intrinsics) -> Result<Vec2> {
    let pc = pose.to_camera(p_world);
    if pc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { z: pc.z });
    }
    Ok(k.project_camera_point(&pc))
}

/// Back-projects a pixel with z-depth `depth` into the world:
/// `Rᵀ (depth · K⁻¹ [q; 1] − T)`.
pub fn backproject(q: &Vec2, depth: f64, pose: &Pose, k: &Intrinsics) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(pose.to_world(&(depth * k.unproject_ray(q))))
}

pub fn apply_similarity(t: &SimilarityTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// Rotation helpers on SO(3) in axis-angle form.
pub mod so3 {
    use super::{Mat3, Vec3};

    pub fn skew(v: &Vec3) -> Mat3 {
        Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
    }

    /// Rodrigues' formula.
    pub fn exp(w: &Vec3) -> Mat3 {
        let theta2 = w.norm_squared();
        let k = skew(w);
        if theta2 < 1e-16 {
            return Mat3::identity() + k + 0.5 * k * k;
        }
        let theta = theta2.sqrt();
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Mat3::identity() + a * k + b * k * k
    }

    /// Axis-angle vector of a rotation matrix, magnitude in `[0, π]`.
    pub fn log(r: &Mat3) -> Vec3 {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        rot.scaled_axis()
    }

    /// Left Jacobian: `(∂ exp(w)/∂w_i) exp(w)ᵀ = skew(J_l(w) e_i)`.
    pub fn left_jacobian(w: &Vec3) -> Mat3 {
        let theta2 = w.norm_squared();
        let k = skew(w);
        if theta2 < 1e-12 {
            return Mat3::identity() + 0.5 * k + (1.0 / 6.0) * k * k;
        }
        let theta = theta2.sqrt();
        let a = (1.0 - theta.cos()) / theta2;
        let b = (theta - theta.sin()) / (theta2 * theta);
        Mat3::identity() + a * k + b * k * k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn random_rotation(rng: &mut impl Rng) -> Mat3 {
        let w = Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        so3::exp(&w)
    }

    fn k500() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 250.0, 250.0, 500, 500).unwrap()
    }

    #[test]
    fn project_principal_point() {
        let q = project(&Vec3::new(0.0, 0.0, 1.0), &Pose::identity(), &k500()).unwrap();
        assert_eq!(q, Vec2::new(250.0, 250.0));
    }

    #[test]
    fn project_pinhole_arithmetic() {
        let q = project(&Vec3::new(0.1, 0.0, 1.0), &Pose::identity(), &k500()).unwrap();
        assert!((q - Vec2::new(300.0, 250.0)).norm() < 1e-12);
    }

    #[test]
    fn project_behind_camera() {
        let err = project(&Vec3::new(0.0, 0.0, -1.0), &Pose::identity(), &k500());
        assert!(matches!(err, Err(Error::BehindCamera { .. })));
        let err = project(&Vec3::new(0.0, 0.0, 0.0), &Pose::identity(), &k500());
        assert!(matches!(err, Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn backproject_optical_axis() {
        let k = k500();
        let p = backproject(&Vec2::new(k.cx, k.cy), 2.5, &Pose::identity(), &k).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.5));
        assert!(matches!(
            backproject(&Vec2::new(1.0, 1.0), 0.0, &Pose::identity(), &k),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn project_backproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = Intrinsics::new(600.0, 610.0, 240.0, 320.0, 480, 640).unwrap();
        for _ in 0..1000 {
            let pose = Pose::new(
                random_rotation(&mut rng),
                Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
            )
            .unwrap();
            let q = Vec2::new(rng.random_range(0.0..480.0), rng.random_range(0.0..640.0));
            let d = rng.random_range(0.2..8.0);
            let p = backproject(&q, d, &pose, &k).unwrap();
            let q2 = project(&p, &pose, &k).unwrap();
            assert!((q - q2).norm() < 1e-9, "{}", (q - q2).norm());
            let p2 = backproject(&q2, pose.to_camera(&p).z, &pose, &k).unwrap();
            assert!((p - p2).norm() < 1e-9);
        }
    }

    #[test]
    fn same_point_from_two_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = k500();
        let x = Vec3::new(0.3, -0.2, 0.1);
        for _ in 0..100 {
            let centers: Vec<Vec3> = (0..2)
                .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 2.0))
                .collect();
            for c in centers {
                let pose = look_at(&c, &x);
                let q = project(&x, &pose, &k).unwrap();
                let d = pose.to_camera(&x).z;
                assert!((backproject(&q, d, &pose, &k).unwrap() - x).norm() < 1e-9);
            }
        }
    }

    fn look_at(center: &Vec3, target: &Vec3) -> Pose {
        let fwd = (target - center).normalize();
        let right = fwd.cross(&Vec3::z()).normalize();
        let down = fwd.cross(&right);
        Pose::from_camera_to_world(&Mat3::from_columns(&[right, down, fwd]), center)
    }

    #[test]
    fn yaw_rotation_basics() {
        assert_eq!(yaw_rotation(0.0), Mat3::identity());
        let v = yaw_rotation(FRAC_PI_2) * Vec3::x();
        assert!((v - Vec3::y()).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = rng.random_range(-10.0..10.0);
            let b = rng.random_range(-10.0..10.0);
            let r = yaw_rotation(a);
            assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
            assert!((yaw_rotation(a) * yaw_rotation(b) - yaw_rotation(a + b)).norm() < 1e-12);
            assert!((wrap_angle(a) - yaw_of(&r)).abs() < 1e-12 || (wrap_angle(a).abs() - std::f64::consts::PI).abs() < 1e-9);
        }
    }

    #[test]
    fn yaw_derivative_matches_finite_difference() {
        for a in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (yaw_rotation(a + h) - yaw_rotation(a - h)) / (2.0 * h);
            assert!((fd - yaw_rotation_derivative(a)).norm() < 1e-9);
        }
    }

    #[test]
    fn similarity_apply_and_inverse() {
        let p = Vec3::new(1.0, 1.0, 1.0);
        assert_eq!(apply_similarity(&SimilarityTransform::identity(), &p), p);
        let s2 = SimilarityTransform::new(2.0, Mat3::identity(), Vec3::zeros()).unwrap();
        assert_eq!(apply_similarity(&s2, &p), Vec3::new(2.0, 2.0, 2.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let t = SimilarityTransform::new(
                rng.random_range(0.2..5.0),
                random_rotation(&mut rng),
                Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 1.0),
            )
            .unwrap();
            let id = t.compose(&t.inverse());
            assert!((id.scale - 1.0).abs() < 1e-12);
            assert!((id.rotation - Mat3::identity()).norm() < 1e-12);
            assert!(id.translation.norm() < 1e-12);
            let q = Vec3::new(rng.random_range(-2.0..2.0), 0.5, -0.3);
            assert!((t.inverse().apply(&t.apply(&q)) - q).norm() < 1e-12);
            assert!(is_rotation(&t.compose(&t).rotation));
        }
    }

    #[test]
    fn world_remap_moves_camera_center_rigidly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pose = Pose::new(random_rotation(&mut rng), Vec3::new(0.3, -1.0, 2.0)).unwrap();
            let r = random_rotation(&mut rng);
            let t = Vec3::new(1.0, 2.0, -0.5);
            let moved = pose.with_world_remap(&r, &t);
            assert!(((r * pose.center() + t) - moved.center()).norm() < 1e-12);
            assert!(is_rotation(&moved.rotation));
            let x = Vec3::new(0.1, 0.2, 3.0);
            assert!((pose.to_camera(&x) - moved.to_camera(&(r * x + t))).norm() < 1e-12);
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let pose = Pose::new(random_rotation(&mut rng), Vec3::new(1.0, 2.0, 3.0)).unwrap();
            let back = Pose::from_quaternion_xyzw(pose.quaternion_xyzw(), pose.translation).unwrap();
            assert!((back.rotation - pose.rotation).norm() < 1e-12);
        }
    }

    #[test]
    fn so3_left_jacobian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let w = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let jl = so3::left_jacobian(&w);
            let r = so3::exp(&w);
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = 1e-6;
                let d = (so3::exp(&(w + e)) - so3::exp(&(w - e))) / 2e-6;
                let expected = so3::skew(&jl.column(i).into_owned());
                assert!((d * r.transpose() - expected).norm() < 1e-7);
            }
            assert!((so3::exp(&so3::log(&r)) - r).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Intrinsics::new(-1.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 11.0, 1.0, 10, 10).is_err());
        assert!(Pose::new(Mat3::identity() * 2.0, Vec3::zeros()).is_err());
        assert!(Pose::new(-Mat3::identity(), Vec3::zeros()).is_err());
        assert!(SimilarityTransform::new(0.0, Mat3::identity(), Vec3::zeros()).is_err());
        let k = k500();
        let f = |t: f64| TimedPose {
            timestamp: t,
            pose: Pose::identity(),
        };
        assert!(Trajectory::new("v", vec![], k).is_err());
        assert!(Trajectory::new("v", vec![f(1.0), f(1.0)], k).is_err());
        assert!(Trajectory::new("v", vec![f(0.0), f(1.0)], k).is_ok());
        assert!(PointCloud::with_confidence(vec![Vec3::zeros()], vec![0.5, 0.5]).is_err());
    }
}
