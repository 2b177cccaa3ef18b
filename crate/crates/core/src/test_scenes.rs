//! Small hand-built calibration scenes shared by unit tests.

use rand::Rng;

use crate::geom::{Intrinsics, PointCloud, Pose, TimedPose, Trajectory, Vec2, Vec3};
use crate::losses::{CalibrationInputs, LandmarkObservation, TrackedCorrespondence, ViewOffset};

pub fn k() -> Intrinsics {
    Intrinsics::new(500.0, 500.0, 240.0, 320.0, 480, 640).unwrap()
}

pub fn look_at(center: Vec3, target: Vec3) -> Pose {
    Pose::look_at(&center, &target).unwrap()
}

/// Two views orbiting a region near the origin, plus random offsets
/// that map each view's frame into the scene.
pub struct Scene {
    pub inputs: CalibrationInputs,
    pub truth: Vec<ViewOffset>,
}

pub fn scene(rng: &mut impl Rng, n_frames: usize) -> Scene {
    let truth: Vec<ViewOffset> = (0..2)
        .map(|_| ViewOffset::new(rng.random_range(-3.0..3.0), Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.2..0.2))))
        .collect();
    let mut trajs = Vec::new();
    let mut world_poses = Vec::new();
    for v in 0..2 {
        let base = v as f64 * 1.6;
        let poses: Vec<Pose> = (0..n_frames)
            .map(|i| {
                let a = base + 0.05 * i as f64;
                look_at(Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.5), Vec3::new(0.0, 0.0, 1.0))
            })
            .collect();
        let to_view = truth[v].transform().inverse();
        let frames = poses
            .iter()
            .enumerate()
            .map(|(i, p)| TimedPose {
                timestamp: i as f64,
                pose: p.with_world_remap(&to_view.rotation, &to_view.translation),
            })
            .collect();
        trajs.push(Trajectory::new(format!("v{v}"), frames, k()).unwrap());
        world_poses.push(poses);
    }
    let mut tracks = Vec::new();
    for _ in 0..60 {
        let x = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.3..1.7));
        let f = rng.random_range(0..n_frames);
        let mut pixel = [Vec2::zeros(); 2];
        let mut depth = [0.0; 2];
        for v in 0..2 {
            let pose = &world_poses[v][f];
            pixel[v] = crate::geom::project(&x, pose, &k()).unwrap();
            depth[v] = pose.to_camera(&x).z;
        }
        tracks.push(TrackedCorrespondence {
            frame: f,
            pixel,
            depth,
            confidence: [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)],
        });
    }
    let landmarks: Vec<Vec3> = (0..40)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)))
        .collect();
    let mut observations = Vec::new();
    for v in 0..2 {
        for f in (0..n_frames).step_by(3) {
            for (j, x) in landmarks.iter().enumerate() {
                let q = crate::geom::project(x, &world_poses[v][f], &k()).unwrap();
                observations.push(LandmarkObservation { view: v, frame: f, landmark: j, pixel: q });
            }
        }
    }
    let global: Vec<Vec3> = (0..300)
        .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0)))
        .collect();
    let local_clouds = truth
        .iter()
        .map(|t| PointCloud::new(global.iter().map(|p| t.transform().inverse().apply(p)).collect()))
        .collect();
    Scene {
        inputs: CalibrationInputs {
            trajectories: trajs,
            tracks,
            landmarks,
            observations,
            local_clouds,
            global_cloud: PointCloud::new(global),
        },
        truth,
    }
}

pub fn perturbed(truth: &[ViewOffset], rng: &mut impl Rng, ang: f64, trans: f64) -> Vec<ViewOffset> {
    truth
        .iter()
        .map(|t| ViewOffset::new(t.yaw + rng.random_range(-ang..ang), t.translation + Vec3::new(rng.random_range(-trans..trans), rng.random_range(-trans..trans), rng.random_range(-trans..trans))))
        .collect()
}

