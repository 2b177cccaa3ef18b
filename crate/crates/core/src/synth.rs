//! Synthetic worlds with exact ground truth: analytic scene primitives, a
//! procedurally walking performer, two moving cameras, and every
//! observation the pipeline consumes, derived from them.
//!
//! Each view's trajectory and local cloud live in that view's own frame;
//! the injected per-view offsets map them into the world. Observations are
//! exact until [`perturb`] adds noise.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{DepthFrame, DepthImage, SceneClass};
use crate::geom::{project, so3, yaw_rotation, Intrinsics, PointCloud, Pose, TimedPose, Trajectory, Vec2, Vec3};
use crate::losses::{CalibrationInputs, LandmarkObservation, TrackedCorrespondence, ViewOffset};
use crate::metrics::DepthSample;
use crate::motion_fit::{contact_anchor, ContactAnnotation, ContactMarker};
use crate::skeleton::{FramePose, SkeletonModel, SkeletonParams, JOINT_COUNT, SHAPE_DIM};
use crate::triangulator::Keypoint2DFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Rectangle `center + a·u + b·v` for `|a|, |b| ≤ 1`; `u ⟂ v`.
    Rect { center: Vec3, u: Vec3, v: Vec3 },
    /// Box with half extents `half`, rotated by `yaw` about z.
    Cuboid { center: Vec3, half: Vec3, yaw: f64 },
    Sphere { center: Vec3, radius: f64 },
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Rect { u, v, .. } => u.norm() > 0.0 && v.norm() > 0.0 && u.dot(v).abs() < 1e-9 * u.norm() * v.norm(),
            Primitive::Cuboid { half, .. } => half.iter().all(|h| *h > 0.0),
            Primitive::Sphere { radius, .. } => *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SpecInvalid(format!("degenerate primitive {self:?}")))
        }
    }

    /// Smallest ray parameter `t > eps` with `o + t·d` on the surface.
    /// `d` need not be unit length.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Primitive::Rect { center, u, v } => {
                let n = u.cross(v);
                let denom = d.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (center - o).dot(&n) / denom;
                if t <= EPS {
                    return None;
                }
                let q = o + t * d - center;
                let a = q.dot(u) / u.norm_squared();
                let b = q.dot(v) / v.norm_squared();
                (a.abs() <= 1.0 && b.abs() <= 1.0).then_some(t)
            }
            Primitive::Cuboid { center, half, yaw } => {
                let r = yaw_rotation(-yaw);
                let lo = r * (o - center);
                let ld = r * d;
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if ld[i].abs() < 1e-15 {
                        if lo[i].abs() > half[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[i] - lo[i]) / ld[i];
                    let b = (half[i] - lo[i]) / ld[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.norm_squared();
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|t| *t > EPS)
            }
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Primitive::Rect { center, u, v } => {
                let q = p - center;
                let (lu, lv) = (u.norm(), v.norm());
                let (uh, vh) = (u / lu, v / lv);
                let a = q.dot(&uh);
                let b = q.dot(&vh);
                let closest = center + a.clamp(-lu, lu) * uh + b.clamp(-lv, lv) * vh;
                (p - closest).norm()
            }
            Primitive::Cuboid { center, half, yaw } => {
                let q = yaw_rotation(-yaw) * (p - center);
                let d = q.abs() - half;
                let outside = d.map(|x| x.max(0.0)).norm();
                let inside = d.max().min(0.0);
                (outside + inside).abs()
            }
            Primitive::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Primitive::Rect { u, v, .. } => 4.0 * u.cross(v).norm(),
            Primitive::Cuboid { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// Uniform sample on the surface.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        match self {
            Primitive::Rect { center, u, v } => center + rng.random_range(-1.0..=1.0) * u + rng.random_range(-1.0..=1.0) * v,
            Primitive::Cuboid { center, half, yaw } => {
                let faces = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in faces.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let mut q = Vec3::zeros();
                for i in 0..3 {
                    q[i] = rng.random_range(-half[i]..=half[i]);
                }
                q[axis] = if rng.random_bool(0.5) { half[axis] } else { -half[axis] };
                center + yaw_rotation(*yaw) * q
            }
            Primitive::Sphere { center, radius } => {
                let d = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                center + *radius * d.normalize()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub class: SceneClass,
    pub seed: u64,
}

impl SyntheticScene {
    /// Nearest hit along the ray, as the ray parameter.
    pub fn cast(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(o, d))
            .min_by(f64::total_cmp)
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.primitives.iter().map(|q| q.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Area-weighted uniform samples over all primitives.
    pub fn sample_surface(&self, rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        let areas: Vec<f64> = self.primitives.iter().map(Primitive::area).collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random_range(0.0..total);
                let mut idx = areas.len() - 1;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        idx = i;
                        break;
                    }
                    pick -= a;
                }
                self.primitives[idx].sample(rng)
            })
            .collect()
    }

    /// True when nothing blocks the segment from `eye` to `p`.
    pub fn visible(&self, eye: &Vec3, p: &Vec3) -> bool {
        match self.cast(eye, &(p - eye)) {
            Some(t) => t > 1.0 - 1e-7,
            None => true,
        }
    }

    /// z-depth image seen from `pose`; 0 where no surface is hit.
    pub fn render_depth(&self, pose: &Pose, k: &Intrinsics) -> DepthImage {
        let eye = pose.center();
        let rt = pose.rotation.transpose();
        let data: Vec<f32> = (0..k.height)
            .into_par_iter()
            .flat_map_iter(|v| {
                (0..k.width).map(move |u| {
                    // unit z in the camera frame, so the ray parameter is the z-depth
                    let ray = rt * k.unproject_ray(&Vec2::new(u as f64, v as f64));
                    self.cast(&eye, &ray).map_or(0.0, |t| t as f32)
                })
            })
            .collect();
        DepthImage {
            width: k.width,
            height: k.height,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Furnished indoor room.
    Room,
    /// Open ground with only distant landmarks along each view's line of
    /// sight and independently sampled clouds. A single view sees little
    /// of its own depth offset here.
    Ambiguity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub frames: usize,
    /// Forward speed, m per frame.
    pub step: f64,
    /// Walking direction, radians from +x.
    pub heading: f64,
    /// Frames per gait cycle.
    pub gait_period: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            frames: 120,
            step: 0.015,
            heading: 0.0,
            gait_period: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub intrinsics: Intrinsics,
    /// Horizontal distance to the performer, m.
    pub distance: f64,
    pub height: f64,
    /// Azimuth between the two views about the performer, degrees.
    pub baseline_deg: f64,
    /// Azimuth of the first view relative to the walking direction, degrees.
    pub first_azimuth_deg: f64,
    /// Handheld sway amplitude, m.
    pub sway: f64,
    /// Accumulated camera translation between keyframes, m.
    pub keyframe_gate: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            distance: 3.0,
            height: 1.4,
            baseline_deg: 90.0,
            first_azimuth_deg: -90.0,
            sway: 0.03,
            keyframe_gate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub scene: SceneKind,
    pub motion: MotionSpec,
    pub camera: CameraSpec,
    pub landmarks: usize,
    /// Every n-th frame carries landmark observations.
    pub landmark_stride: usize,
    pub cloud_points: usize,
    /// Every n-th frame carries tracked body points.
    pub track_stride: usize,
    pub tracks_per_frame: usize,
    /// Every n-th frame carries joint depth samples.
    pub depth_sample_stride: usize,
    /// Frames between contact markers.
    pub contact_stride: usize,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            scene: SceneKind::Room,
            motion: MotionSpec::default(),
            camera: CameraSpec::default(),
            landmarks: 80,
            landmark_stride: 4,
            cloud_points: 3000,
            track_stride: 4,
            tracks_per_frame: 16,
            depth_sample_stride: 5,
            contact_stride: 10,
        }
    }
}

impl GenerateSpec {
    pub fn ambiguity() -> Self {
        Self {
            scene: SceneKind::Ambiguity,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.motion;
        let c = &self.camera;
        let bad = |what: &str| Err(Error::SpecInvalid(what.to_string()));
        if m.frames < 3 {
            return bad("at least 3 frames");
        }
        if !(m.step >= 0.0 && m.step.is_finite() && m.heading.is_finite() && m.gait_period > 0.0) {
            return bad("motion step, heading and gait period must be finite, period positive");
        }
        if c.intrinsics.validate().is_err() {
            return bad("camera intrinsics invalid");
        }
        if !(c.distance > 0.5 && c.height > 0.0 && c.sway >= 0.0 && c.keyframe_gate > 0.0) {
            return bad("camera distance > 0.5 m, height > 0, sway ≥ 0, keyframe gate > 0");
        }
        if !(c.baseline_deg > 0.0 && c.baseline_deg < 180.0) {
            return bad("baseline must lie in (0°, 180°)");
        }
        if [self.landmark_stride, self.track_stride, self.depth_sample_stride, self.contact_stride].contains(&0) {
            return bad("strides must be positive");
        }
        if self.landmarks == 0 || self.cloud_points == 0 || self.tracks_per_frame == 0 {
            return bad("landmark, cloud and track counts must be positive");
        }
        Ok(())
    }
}

/// Everything generated for one seed. Fields marked as truth are never
/// touched by [`perturb`].
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub seed: u64,
    pub spec: GenerateSpec,
    /// Truth.
    pub scene: SyntheticScene,
    /// Truth: maps each view's frame into the world.
    pub offsets: Vec<ViewOffset>,
    /// Truth: camera poses in the world.
    pub world_trajectories: Vec<Trajectory>,
    /// Truth.
    pub skeleton: SkeletonParams,
    /// Truth: world joint positions per frame.
    pub joints: Vec<Vec<Vec3>>,
    /// Truth: global scene cloud, humans excluded.
    pub global_cloud: PointCloud,
    /// Truth: landmark table.
    pub landmarks: Vec<Vec3>,
    /// Per-view trajectories in the views' own frames.
    pub trajectories: Vec<Trajectory>,
    /// Per view: keyframe index and its registered world pose.
    pub registrations: Vec<Vec<(usize, Pose)>>,
    /// Per view: 2D joints at every frame.
    pub keypoints: Vec<Vec<Keypoint2DFrame>>,
    pub tracks: Vec<TrackedCorrespondence>,
    pub observations: Vec<LandmarkObservation>,
    /// Per-view scene clouds in the views' own frames.
    pub local_clouds: Vec<PointCloud>,
    pub depth_samples: Vec<DepthSample>,
    pub contacts: ContactAnnotation,
}

impl Bundle {
    pub fn calibration_inputs(&self) -> CalibrationInputs {
        CalibrationInputs {
            trajectories: self.trajectories.clone(),
            tracks: self.tracks.clone(),
            landmarks: self.landmarks.clone(),
            observations: self.observations.clone(),
            local_clouds: self.local_clouds.clone(),
            global_cloud: self.global_cloud.clone(),
        }
    }

    pub fn n_views(&self) -> usize {
        self.trajectories.len()
    }

    pub fn keyframes(&self, view: usize) -> Vec<usize> {
        self.registrations[view].iter().map(|(f, _)| *f).collect()
    }

    /// Depth images at each view's keyframes, rendered from the true world
    /// poses and truncated per the scene class.
    pub fn depth_frames(&self) -> Result<Vec<(usize, usize, DepthFrame)>> {
        let mut out = Vec::new();
        for (v, traj) in self.world_trajectories.iter().enumerate() {
            for f in self.keyframes(v) {
                let pose = *traj.pose(f)?;
                let img = self.scene.render_depth(&pose, &traj.intrinsics);
                out.push((v, f, DepthFrame::new(img, pose, traj.intrinsics, self.scene.class)?));
            }
        }
        Ok(out)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian3(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng))
}

/// Procedural walk along `heading`, feet touching z = 0 at their lowest.
pub fn walk(model: &SkeletonModel, spec: &MotionSpec, shape: Vec<f64>, phase: f64) -> SkeletonParams {
    let dir = Vec3::new(spec.heading.cos(), spec.heading.sin(), 0.0);
    let frames: Vec<FramePose> = (0..spec.frames)
        .map(|i| {
            let s = TAU * i as f64 / spec.gait_period + phase;
            let mut pose = vec![Vec3::zeros(); JOINT_COUNT];
            pose[0] = Vec3::new(0.0, 0.0, spec.heading - FRAC_PI_2 + 0.05 * s.sin());
            pose[1] = Vec3::new(0.35 * s.sin(), 0.0, 0.0);
            pose[2] = Vec3::new(-0.35 * s.sin(), 0.0, 0.0);
            pose[4] = Vec3::new(-0.3 * (1.0 + (s + 0.8).cos()), 0.0, 0.0);
            pose[5] = Vec3::new(-0.3 * (1.0 - (s + 0.8).cos()), 0.0, 0.0);
            pose[7] = Vec3::new(0.1 * s.cos(), 0.0, 0.0);
            pose[8] = Vec3::new(-0.1 * s.cos(), 0.0, 0.0);
            pose[3] = Vec3::new(0.05, 0.0, -0.04 * s.sin());
            pose[16] = Vec3::new(-0.3 * s.sin(), 1.2, 0.0);
            pose[17] = Vec3::new(0.3 * s.sin(), -1.2, 0.0);
            pose[18] = Vec3::new(0.0, 0.0, 0.3);
            pose[19] = Vec3::new(0.0, 0.0, -0.3);
            pose[15] = Vec3::new(0.1 * (0.5 * s).sin(), 0.0, 0.0);
            FramePose {
                pose,
                translation: spec.step * i as f64 * dir + Vec3::new(0.0, 0.0, 0.92 + 0.015 * (2.0 * s).cos()),
            }
        })
        .collect();
    let mut params = SkeletonParams { shape, frames };
    let lowest = params
        .joints(model)
        .iter()
        .flat_map(|js| model.contact_joints.iter().map(move |j| js[*j].z))
        .fold(f64::INFINITY, f64::min);
    for f in &mut params.frames {
        f.translation.z -= lowest;
    }
    params
}

fn keyframes_by_translation(centers: &[Vec3], gate: f64) -> Vec<usize> {
    let mut out = vec![0];
    let mut acc = 0.0;
    for i in 1..centers.len() {
        acc += (centers[i] - centers[i - 1]).norm();
        if acc >= gate {
            out.push(i);
            acc = 0.0;
        }
    }
    out
}

fn room() -> Vec<Primitive> {
    let (w, h) = (4.5, 1.4);
    vec![
        Primitive::Rect { center: Vec3::zeros(), u: Vec3::new(w, 0.0, 0.0), v: Vec3::new(0.0, w, 0.0) },
        Primitive::Rect { center: Vec3::new(0.0, 0.0, 2.0 * h), u: Vec3::new(w, 0.0, 0.0), v: Vec3::new(0.0, w, 0.0) },
        Primitive::Rect { center: Vec3::new(w, 0.0, h), u: Vec3::new(0.0, w, 0.0), v: Vec3::new(0.0, 0.0, h) },
        Primitive::Rect { center: Vec3::new(-w, 0.0, h), u: Vec3::new(0.0, w, 0.0), v: Vec3::new(0.0, 0.0, h) },
        Primitive::Rect { center: Vec3::new(0.0, w, h), u: Vec3::new(w, 0.0, 0.0), v: Vec3::new(0.0, 0.0, h) },
        Primitive::Rect { center: Vec3::new(0.0, -w, h), u: Vec3::new(w, 0.0, 0.0), v: Vec3::new(0.0, 0.0, h) },
        Primitive::Cuboid { center: Vec3::new(1.5, 2.2, 0.375), half: Vec3::new(0.6, 0.4, 0.375), yaw: 0.3 },
        Primitive::Cuboid { center: Vec3::new(-2.6, -0.5, 0.225), half: Vec3::new(0.25, 0.25, 0.225), yaw: -0.2 },
        Primitive::Sphere { center: Vec3::new(-2.0, 2.2, 0.4), radius: 0.4 },
    ]
}

/// Generates a full ground-truth bundle. Pure in `(seed, spec)`.
pub fn generate(seed: u64, spec: &GenerateSpec) -> Result<Bundle> {
    spec.validate()?;
    let model = SkeletonModel::default();
    let k = spec.camera.intrinsics;
    let m = &spec.motion;
    let n = m.frames;

    let mut rng = rng_for(seed, 0);
    let shape: Vec<f64> = (0..SHAPE_DIM).map(|_| rng.random_range(-0.1..0.1)).collect();
    let phase = rng.random_range(0.0..TAU);
    let mut skeleton = walk(&model, m, shape, phase);
    // centre the walk on the origin
    let mid = (skeleton.frames[0].translation + skeleton.frames[n - 1].translation) / 2.0;
    for f in &mut skeleton.frames {
        f.translation -= Vec3::new(mid.x, mid.y, 0.0);
    }
    let joints = skeleton.joints(&model);

    // cameras following the performer
    let mut world_trajectories = Vec::new();
    for v in 0..2 {
        let az = m.heading + (spec.camera.first_azimuth_deg + v as f64 * spec.camera.baseline_deg).to_radians();
        let out = Vec3::new(az.cos(), az.sin(), 0.0);
        let frames = (0..n)
            .map(|i| {
                let root = skeleton.frames[i].translation;
                let t = i as f64;
                let sway = spec.camera.sway * Vec3::new((0.11 * t + v as f64).sin(), (0.07 * t + 2.0 * v as f64).cos(), (0.13 * t).sin());
                let center = Vec3::new(root.x, root.y, spec.camera.height) + spec.camera.distance * out + sway;
                let target = Vec3::new(root.x, root.y, 0.9) + 0.3 * sway;
                Ok(TimedPose {
                    timestamp: t / 30.0,
                    pose: Pose::look_at(&center, &target)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        world_trajectories.push(Trajectory::new(format!("v{}", v + 1), frames, k)?);
    }

    // the view frames: arbitrary yaw and origin, gravity aligned
    let offsets: Vec<ViewOffset> = (0..2)
        .map(|_| {
            ViewOffset::new(
                rng.random_range(-PI..PI),
                Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.2..0.2)),
            )
        })
        .collect();
    let trajectories: Vec<Trajectory> = world_trajectories
        .iter()
        .zip(&offsets)
        .map(|(t, o)| {
            let inv = o.transform().inverse();
            t.map_poses(|p| p.with_world_remap(&inv.rotation, &inv.translation))
        })
        .collect();

    let registrations: Vec<Vec<(usize, Pose)>> = world_trajectories
        .iter()
        .map(|t| {
            keyframes_by_translation(&t.centers(), spec.camera.keyframe_gate)
                .into_iter()
                .map(|f| (f, t.frames[f].pose))
                .collect()
        })
        .collect();

    // scene, global and local clouds, landmarks
    let mut scene_rng = rng_for(seed, 1);
    let (primitives, class) = match spec.scene {
        SceneKind::Room => (room(), SceneClass::Indoor),
        SceneKind::Ambiguity => (
            vec![Primitive::Rect { center: Vec3::zeros(), u: Vec3::new(20.0, 0.0, 0.0), v: Vec3::new(0.0, 20.0, 0.0) }],
            SceneClass::Outdoor,
        ),
    };
    let scene = SyntheticScene { primitives, class, seed };
    for p in &scene.primitives {
        p.validate()?;
    }
    let global = scene.sample_surface(&mut scene_rng, spec.cloud_points);
    let local_clouds: Vec<PointCloud> = offsets
        .iter()
        .map(|o| {
            let inv = o.transform().inverse();
            let pts = match spec.scene {
                SceneKind::Room => global.clone(),
                SceneKind::Ambiguity => scene.sample_surface(&mut scene_rng, spec.cloud_points),
            };
            PointCloud::new(pts.iter().map(|p| inv.apply(p)).collect())
        })
        .collect();
    let landmarks: Vec<Vec3> = match spec.scene {
        SceneKind::Room => scene.sample_surface(&mut scene_rng, spec.landmarks),
        SceneKind::Ambiguity => {
            // far points hugging each view's mean line of sight
            (0..spec.landmarks)
                .map(|i| {
                    let traj = &world_trajectories[i % 2];
                    let c = traj.centers().iter().sum::<Vec3>() / n as f64;
                    let mut axis = traj.frames.iter().map(|f| f.pose.rotation.row(2).transpose()).sum::<Vec3>();
                    axis.z = 0.0;
                    let dir = yaw_rotation(scene_rng.random_range(-0.003..0.003)) * axis.normalize();
                    c + scene_rng.random_range(15.0..40.0) * dir + Vec3::new(0.0, 0.0, scene_rng.random_range(-0.05..0.05))
                })
                .collect()
        }
    };

    let mut observations = Vec::new();
    for (v, t) in world_trajectories.iter().enumerate() {
        for f in (0..n).step_by(spec.landmark_stride) {
            let pose = &t.frames[f].pose;
            let eye = pose.center();
            for (j, x) in landmarks.iter().enumerate() {
                let Ok(q) = project(x, pose, &k) else { continue };
                if k.contains(&q) && scene.visible(&eye, x) {
                    observations.push(LandmarkObservation { view: v, frame: f, landmark: j, pixel: q });
                }
            }
        }
    }

    // 2D joints
    let mut kp_rng = rng_for(seed, 2);
    let keypoints: Vec<Vec<Keypoint2DFrame>> = world_trajectories
        .iter()
        .enumerate()
        .map(|(v, t)| {
            (0..n)
                .map(|f| {
                    let pose = &t.frames[f].pose;
                    let joints = joints[f]
                        .iter()
                        .map(|x| {
                            let c = kp_rng.random_range(0.6..1.0);
                            (k.project_camera_point(&pose.to_camera(x)), c)
                        })
                        .collect();
                    Keypoint2DFrame { view: v, frame: f, joints }
                })
                .collect()
        })
        .collect();

    // body surface tracks seen by both views
    let mut track_rng = rng_for(seed, 3);
    let mut tracks = Vec::new();
    for f in (0..n).step_by(spec.track_stride) {
        let mut made = 0;
        let mut tries = 0;
        while made < spec.tracks_per_frame && tries < 20 * spec.tracks_per_frame {
            tries += 1;
            let j = track_rng.random_range(0..JOINT_COUNT);
            let x = joints[f][j] + 0.06 * gaussian3(&mut track_rng).map(|c| c.clamp(-1.0, 1.0));
            let mut pixel = [Vec2::zeros(); 2];
            let mut depth = [0.0; 2];
            let mut ok = true;
            for v in 0..2 {
                let pc = world_trajectories[v].frames[f].pose.to_camera(&x);
                let q = k.project_camera_point(&pc);
                ok &= pc.z > 0.1 && k.contains(&q);
                pixel[v] = q;
                depth[v] = pc.z;
            }
            let confidence = [track_rng.random_range(0.5..1.0), track_rng.random_range(0.5..1.0)];
            if ok {
                tracks.push(TrackedCorrespondence { frame: f, pixel, depth, confidence });
                made += 1;
            }
        }
    }

    let depth_samples = world_trajectories
        .iter()
        .enumerate()
        .flat_map(|(v, t)| {
            let joints = &joints;
            (0..n).step_by(spec.depth_sample_stride).flat_map(move |f| {
                let pose = t.frames[f].pose;
                (0..JOINT_COUNT).map(move |j| DepthSample {
                    view: v,
                    frame: f,
                    index: f,
                    joint: j,
                    depth: pose.to_camera(&joints[f][j]).z,
                })
            })
        })
        .collect();

    // contact markers where a foot is planted
    let lows: Vec<f64> = (0..n).map(|f| contact_anchor(&model, &skeleton, f).map(|a| a.z)).collect::<Result<_>>()?;
    let mut contacts = ContactAnnotation::default();
    for f in (0..n).step_by(spec.contact_stride) {
        if lows[f] < 0.02 {
            contacts.contacts.push(ContactMarker { frame: f, position: contact_anchor(&model, &skeleton, f)? });
        }
    }

    Ok(Bundle {
        seed,
        spec: *spec,
        scene,
        offsets,
        world_trajectories,
        skeleton,
        joints,
        global_cloud: PointCloud::new(global),
        landmarks,
        trajectories,
        registrations,
        keypoints,
        tracks,
        observations,
        local_clouds,
        depth_samples,
        contacts,
    })
}

/// Noise levels applied by [`perturb`]. All must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// 2D joint pixel σ.
    pub keypoint_px: f64,
    /// Tracked and landmark pixel σ.
    pub feature_px: f64,
    /// Relative σ of track depths and joint depth samples.
    pub depth_rel: f64,
    /// Per-coordinate σ of local cloud points, m.
    pub cloud_m: f64,
    /// Per-frame trajectory position σ (m) and rotation σ (rad).
    pub trajectory_m: f64,
    pub trajectory_rad: f64,
    /// Registered keyframe position σ (m) and rotation σ (rad).
    pub registration_m: f64,
    pub registration_rad: f64,
    /// Probability that a 2D joint's confidence drops to zero.
    pub dropout: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.keypoint_px,
            self.feature_px,
            self.depth_rel,
            self.cloud_m,
            self.trajectory_m,
            self.trajectory_rad,
            self.registration_m,
            self.registration_rad,
            self.dropout,
        ];
        if all.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || self.dropout > 1.0 {
            return Err(Error::SpecInvalid("noise levels must be finite and ≥ 0, dropout ≤ 1".into()));
        }
        Ok(())
    }
}

fn jitter_pose(p: &Pose, rng: &mut impl Rng, sigma_m: f64, sigma_rad: f64) -> Pose {
    // perturb the camera about its own center
    let dr = so3::exp(&(sigma_rad * gaussian3(rng)));
    let center = p.center() + sigma_m * gaussian3(rng);
    let orient = dr * p.rotation.transpose();
    Pose::from_camera_to_world(&orient, &center)
}

/// Adds Gaussian noise and dropout to the observations. Truth fields are
/// left untouched. Each observation family draws from its own stream and
/// draws the same numbers whatever the σ, so scaling one σ scales that
/// family's residuals exactly.
pub fn perturb(bundle: &Bundle, noise: &NoiseSpec, seed: u64) -> Result<Bundle> {
    noise.validate()?;
    let mut out = bundle.clone();
    let mut rng = rng_for(seed, 100);
    for stream in &mut out.keypoints {
        for f in stream {
            for (q, c) in &mut f.joints {
                *q += noise.keypoint_px * Vec2::new(gaussian(&mut rng), gaussian(&mut rng));
                if rng.random::<f64>() < noise.dropout {
                    *c = 0.0;
                }
            }
        }
    }
    let mut rng = rng_for(seed, 101);
    for t in &mut out.tracks {
        for v in 0..2 {
            t.pixel[v] += noise.feature_px * Vec2::new(gaussian(&mut rng), gaussian(&mut rng));
            t.depth[v] *= (1.0 + noise.depth_rel * gaussian(&mut rng)).max(0.05);
        }
    }
    for o in &mut out.observations {
        o.pixel += noise.feature_px * Vec2::new(gaussian(&mut rng), gaussian(&mut rng));
    }
    let mut rng = rng_for(seed, 102);
    for c in &mut out.local_clouds {
        for p in &mut c.points {
            *p += noise.cloud_m * gaussian3(&mut rng);
        }
    }
    let mut rng = rng_for(seed, 103);
    for t in &mut out.trajectories {
        for f in &mut t.frames {
            let jittered = jitter_pose(&f.pose, &mut rng, noise.trajectory_m, noise.trajectory_rad);
            if noise.trajectory_m > 0.0 || noise.trajectory_rad > 0.0 {
                f.pose = jittered;
            }
        }
    }
    for r in &mut out.registrations {
        for (_, p) in r.iter_mut() {
            let jittered = jitter_pose(p, &mut rng, noise.registration_m, noise.registration_rad);
            if noise.registration_m > 0.0 || noise.registration_rad > 0.0 {
                *p = jittered;
            }
        }
    }
    let mut rng = rng_for(seed, 104);
    for s in &mut out.depth_samples {
        s.depth *= (1.0 + noise.depth_rel * gaussian(&mut rng)).max(0.05);
    }
    Ok(out)
}

/// Moves each offset by exactly `yaw` radians (random sign) and `translation`
/// metres (random direction).
pub fn offset_perturbation(truth: &[ViewOffset], yaw: f64, translation: f64, seed: u64) -> Vec<ViewOffset> {
    let mut rng = rng_for(seed, 200);
    truth
        .iter()
        .map(|o| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let dir = gaussian3(&mut rng).normalize();
            ViewOffset::new(o.yaw + sign * yaw, o.translation + translation * dir)
        })
        .collect()
}

/// Depth frames of a unit cube floating in a closed studio, seen from
/// cameras spread over a sphere around it. The studio walls give every
/// ray a valid return so free space around the cube is observed.
#[derive(Debug, Clone)]
pub struct FusionScene {
    pub scene: SyntheticScene,
    pub cube: Primitive,
    pub frames: Vec<DepthFrame>,
}

pub fn cube_scene(views: usize, k: Intrinsics) -> Result<FusionScene> {
    if views == 0 {
        return Err(Error::SpecInvalid("at least one view".into()));
    }
    let center = Vec3::new(0.0, 0.0, 1.0);
    let cube = Primitive::Cuboid { center, half: Vec3::repeat(0.5), yaw: 0.0 };
    let w = 2.0;
    let mut primitives = vec![cube];
    for axis in 0..3 {
        let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            let mut c = center;
            c[axis] += sign * w;
            let mut u = Vec3::zeros();
            let mut v = Vec3::zeros();
            u[i] = w;
            v[j] = w;
            primitives.push(Primitive::Rect { center: c, u, v });
        }
    }
    let scene = SyntheticScene { primitives, class: SceneClass::Outdoor, seed: 0 };
    let golden = PI * (3.0 - 5f64.sqrt());
    let frames = (0..views)
        .into_par_iter()
        .map(|i| {
            // Fibonacci directions, kept away from the poles
            let z = 0.9 * (1.0 - 2.0 * (i as f64 + 0.5) / views as f64);
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64 + 0.4;
            let eye = center + 1.6 * Vec3::new(r * a.cos(), r * a.sin(), z);
            let pose = Pose::look_at(&eye, &center)?;
            DepthFrame::new(scene.render_depth(&pose, &k), pose, k, scene.class)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FusionScene { scene, cube, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::{calibrate, OffsetParams, OptimizerConfig};
    use crate::geom::backproject;
    use crate::losses::{ba_loss, chamfer, track_loss};
    use crate::triangulator::{triangulate_sequence, JointStatus, TriangulationConfig};

    fn small() -> GenerateSpec {
        GenerateSpec {
            motion: MotionSpec { frames: 40, ..Default::default() },
            cloud_points: 800,
            landmarks: 40,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let a = generate(7, &small()).unwrap();
        let b = generate(7, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate(8, &small()).unwrap();
        assert_ne!(a.offsets, c.offsets);
    }

    #[test]
    fn observations_are_exact() {
        let b = generate(3, &small()).unwrap();
        let k = b.spec.camera.intrinsics;
        for t in &b.tracks {
            let mut world = Vec::new();
            for v in 0..2 {
                let pose = b.world_trajectories[v].pose(t.frame).unwrap();
                world.push(backproject(&t.pixel[v], t.depth[v], pose, &k).unwrap());
            }
            assert!((world[0] - world[1]).norm() < 1e-9);
        }
        for o in &b.observations {
            let q = project(&b.landmarks[o.landmark], b.world_trajectories[o.view].pose(o.frame).unwrap(), &k).unwrap();
            assert!((q - o.pixel).norm() < 1e-9);
        }
        for (stream, traj) in b.keypoints.iter().zip(&b.world_trajectories) {
            for f in stream {
                for ((q, _), x) in f.joints.iter().zip(&b.joints[f.frame]) {
                    assert!((project(x, traj.pose(f.frame).unwrap(), &k).unwrap() - q).norm() < 1e-9);
                }
            }
        }
        // view frames map back onto the world poses
        for v in 0..2 {
            let t = b.offsets[v].transform();
            for (a, w) in b.trajectories[v].frames.iter().zip(&b.world_trajectories[v].frames) {
                let back = a.pose.with_world_remap(&t.rotation, &t.translation);
                assert!((back.rotation - w.pose.rotation).norm() < 1e-12);
                assert!((back.translation - w.pose.translation).norm() < 1e-9);
            }
        }
        assert!(!b.contacts.contacts.is_empty());
        assert!(b.registrations.iter().all(|r| r.len() >= 3));
    }

    #[test]
    fn zero_noise_gives_zero_losses() {
        let b = generate(11, &small()).unwrap();
        let inputs = b.calibration_inputs();
        assert!(track_loss(&b.tracks, &b.offsets, &b.trajectories).unwrap() < 1e-12);
        let ba = ba_loss(&b.observations, &b.landmarks, &b.offsets, &b.trajectories).unwrap();
        assert!(ba.per_view.iter().all(|l| *l < 1e-10));
        for (v, local) in inputs.local_clouds.iter().enumerate() {
            assert!(chamfer(&local.transformed(&b.offsets[v].transform()), &b.global_cloud).unwrap() < 1e-20);
        }
        let same = perturb(&b, &NoiseSpec::default(), 5).unwrap();
        assert_eq!(same, b);

        let cfg = OptimizerConfig { adam: crate::optim::AdamConfig { max_iterations: 5, ..Default::default() }, ..Default::default() };
        let init = OffsetParams::new(b.offsets.clone()).unwrap();
        let res = calibrate(&inputs, &init, &cfg).unwrap();
        assert!(res.breakdown.total < 1e-10);
    }

    #[test]
    fn doubling_keypoint_noise_doubles_residuals() {
        let b = generate(2, &small()).unwrap();
        let rms = |sigma: f64| {
            let p = perturb(&b, &NoiseSpec { keypoint_px: sigma, ..Default::default() }, 9).unwrap();
            let mut s = 0.0;
            let mut n = 0.0;
            for (a, c) in p.keypoints.iter().flatten().zip(b.keypoints.iter().flatten()) {
                for ((qa, _), (qc, _)) in a.joints.iter().zip(&c.joints) {
                    s += (qa - qc).norm_squared();
                    n += 1.0;
                }
            }
            (s / n).sqrt()
        };
        let (r1, r2) = (rms(1.5), rms(3.0));
        assert!((r2 / r1 - 2.0).abs() < 0.1, "{r1} {r2}");
        // chi-square: mean squared residual per coordinate near sigma^2
        assert!((r1 * r1 / 2.0 / 2.25 - 1.0).abs() < 0.05, "{r1}");
    }

    #[test]
    fn full_dropout_starves_triangulation() {
        let b = generate(4, &small()).unwrap();
        let p = perturb(&b, &NoiseSpec { dropout: 1.0, ..Default::default() }, 1).unwrap();
        assert!(p.keypoints.iter().flatten().all(|f| f.joints.iter().all(|(_, c)| *c == 0.0)));
        let k3d = triangulate_sequence(&p.keypoints, &p.world_trajectories, &TriangulationConfig::default()).unwrap();
        assert!(k3d.iter().flat_map(|f| &f.joints).all(|j| j.status == JointStatus::TooFewConfidentViews));
    }

    #[test]
    fn ray_casting_matches_primitive_distance() {
        let b = generate(5, &small()).unwrap();
        let k = Intrinsics::new(60.0, 60.0, 40.0, 30.0, 80, 60).unwrap();
        let pose = b.world_trajectories[0].frames[0].pose;
        let img = b.scene.render_depth(&pose, &k);
        let mut hits = 0;
        for v in 0..k.height {
            for u in 0..k.width {
                let d = img.get(u, v) as f64;
                if d > 0.0 {
                    let x = backproject(&Vec2::new(u as f64, v as f64), d, &pose, &k).unwrap();
                    assert!(b.scene.distance(&x) < 1e-5);
                    hits += 1;
                }
            }
        }
        assert_eq!(hits, (k.width * k.height) as usize, "closed room: every ray hits");
    }

    #[test]
    fn walk_feet_touch_ground() {
        let model = SkeletonModel::default();
        let p = walk(&model, &MotionSpec::default(), vec![0.0; SHAPE_DIM], 0.3);
        let js = p.joints(&model);
        let lowest = js.iter().flat_map(|f| model.contact_joints.iter().map(move |j| f[*j].z)).fold(f64::INFINITY, f64::min);
        assert!(lowest.abs() < 1e-12);
        // heads stay well above the feet
        assert!(js.iter().all(|f| f[15].z > 1.3));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.camera.baseline_deg = 180.0;
        assert!(matches!(generate(1, &s), Err(Error::SpecInvalid(_))));
        let mut s = small();
        s.motion.frames = 1;
        assert!(matches!(generate(1, &s), Err(Error::SpecInvalid(_))));
        assert!(perturb(&generate(1, &small()).unwrap(), &NoiseSpec { dropout: 1.5, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn cube_views_see_the_cube() {
        let k = Intrinsics::new(125.0, 125.0, 80.0, 60.0, 160, 120).unwrap();
        let s = cube_scene(20, k).unwrap();
        assert_eq!(s.frames.len(), 20);
        for f in &s.frames {
            // every ray returns; the cube fills the image centre
            assert!(f.depth().data.iter().all(|d| *d > 0.0));
            let mid = f.depth().get(80, 60) as f64;
            assert!(mid < 1.6 - 0.5 + 1e-6);
        }
    }
}
