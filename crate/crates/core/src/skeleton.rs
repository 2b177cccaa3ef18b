//! Generic 24-joint kinematic skeleton with bone-group length scales.
//!
//! Joint order and tree follow the common SMPL body layout. Rest offsets
//! are in a Z-up body frame with +x to the body's left and +y forward; the
//! pelvis sits at the root translation.

use crate::error::{Error, Result};
use crate::geom::{so3, Mat3, Vec3};

pub const JOINT_COUNT: usize = 24;
pub const SHAPE_DIM: usize = 10;
/// Global orientation plus one rotation per non-root joint, 3 values each.
pub const POSE_DIM: usize = 3 * JOINT_COUNT;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
];

const PARENTS: [i32; JOINT_COUNT] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

const REST_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.07, 0.0, -0.09],
    [-0.07, 0.0, -0.09],
    [0.0, -0.01, 0.11],
    [0.03, 0.0, -0.38],
    [-0.03, 0.0, -0.38],
    [0.0, 0.01, 0.13],
    [0.0, -0.03, -0.40],
    [0.0, -0.03, -0.40],
    [0.0, 0.0, 0.05],
    [0.0, 0.12, -0.05],
    [0.0, 0.12, -0.05],
    [0.0, -0.02, 0.21],
    [0.07, -0.01, 0.11],
    [-0.07, -0.01, 0.11],
    [0.0, 0.05, 0.09],
    [0.11, -0.01, 0.03],
    [-0.11, -0.01, 0.03],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.08, 0.0, 0.0],
    [-0.08, 0.0, 0.0],
];

/// Shape group scaling the bone that ends at each joint: torso, neck/head,
/// hips, thighs, shins, feet, collars, shoulders, upper arms, forearms+hands.
const BONE_GROUPS: [usize; JOINT_COUNT] = [0, 2, 2, 0, 3, 3, 0, 4, 4, 0, 5, 5, 1, 6, 6, 1, 7, 7, 8, 8, 9, 9, 9, 9];

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonModel {
    /// Parent of each joint; `None` only for the root (joint 0).
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<Vec3>,
    pub bone_groups: Vec<usize>,
    /// Joints whose lowest point defines ground contact.
    pub contact_joints: Vec<usize>,
    /// Joints whose horizontal sliding is measured.
    pub foot_joints: Vec<usize>,
}

impl Default for SkeletonModel {
    fn default() -> Self {
        Self {
            parents: PARENTS.iter().map(|p| usize::try_from(*p).ok()).collect(),
            rest_offsets: REST_OFFSETS.iter().map(|o| Vec3::new(o[0], o[1], o[2])).collect(),
            bone_groups: BONE_GROUPS.to_vec(),
            contact_joints: vec![7, 8, 10, 11],
            foot_joints: vec![10, 11],
        }
    }
}

impl SkeletonModel {
    pub fn n_joints(&self) -> usize {
        self.parents.len()
    }

    /// Checks the tree is rooted at joint 0 with every parent preceding its
    /// child (hence connected and acyclic) and every bone non-degenerate.
    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if n == 0 || self.rest_offsets.len() != n || self.bone_groups.len() != n {
            return Err(Error::InvalidInput("skeleton arrays disagree in length".into()));
        }
        if self.parents[0].is_some() {
            return Err(Error::InvalidInput("joint 0 must be the root".into()));
        }
        for j in 1..n {
            match self.parents[j] {
                Some(p) if p < j => {}
                _ => return Err(Error::InvalidInput(format!("joint {j} has no earlier parent"))),
            }
            if !(self.rest_offsets[j].norm() > 0.0) || self.bone_groups[j] >= SHAPE_DIM {
                return Err(Error::InvalidInput(format!("bone {j} is degenerate")));
            }
        }
        if self
            .contact_joints
            .iter()
            .chain(&self.foot_joints)
            .any(|j| *j >= n)
        {
            return Err(Error::InvalidInput("foot joint out of range".into()));
        }
        Ok(())
    }

    pub fn bone_scales(shape: &[f64]) -> [f64; SHAPE_DIM] {
        let mut s = [1.0; SHAPE_DIM];
        for (o, b) in s.iter_mut().zip(shape) {
            *o = b.exp();
        }
        s
    }

    /// Joint positions for one frame. `pose[0]` is the global orientation,
    /// `pose[j]` the rotation of joint `j` relative to its parent.
    pub fn forward(&self, shape: &[f64], pose: &[Vec3], translation: &Vec3) -> Vec<Vec3> {
        self.forward_full(shape, pose, translation).positions
    }

    pub fn forward_full(&self, shape: &[f64], pose: &[Vec3], translation: &Vec3) -> Kinematics {
        let n = self.n_joints();
        let scales = Self::bone_scales(shape);
        let mut positions = vec![Vec3::zeros(); n];
        let mut rotations = vec![Mat3::identity(); n];
        rotations[0] = so3::exp(&pose[0]);
        positions[0] = translation + scales[self.bone_groups[0]] * (rotations[0] * self.rest_offsets[0]);
        for j in 1..n {
            let p = self.parents[j].expect("validated tree");
            positions[j] = positions[p] + scales[self.bone_groups[j]] * (rotations[p] * self.rest_offsets[j]);
            rotations[j] = rotations[p] * so3::exp(&pose[j]);
        }
        Kinematics {
            positions,
            rotations,
            scales,
        }
    }

    /// Vector-Jacobian product of [`forward`](Self::forward): given `∂L/∂p_j`
    /// for every joint, returns `∂L/∂pose`, `∂L/∂translation` and
    /// `∂L/∂shape`.
    pub fn backward(&self, kin: &Kinematics, pose: &[Vec3], grad_positions: &[Vec3]) -> KinematicsGradient {
        let n = self.n_joints();
        // Subtree sums of g and p × g, accumulated leaf to root.
        let mut gsum = grad_positions.to_vec();
        let mut moment: Vec<Vec3> = (0..n).map(|j| kin.positions[j].cross(&grad_positions[j])).collect();
        for j in (1..n).rev() {
            let p = self.parents[j].expect("validated tree");
            let (g, m) = (gsum[j], moment[j]);
            gsum[p] += g;
            moment[p] += m;
        }
        let mut grad_pose = vec![Vec3::zeros(); n];
        for k in 0..n {
            // Rotating joint k by δ turns its subtree about p_k with world
            // angular velocity G_parent J_l(θ_k) δ. Joint k itself does
            // not move, so its own term cancels in the torque.
            let torque = moment[k] - kin.positions[k].cross(&gsum[k]);
            let parent_rot = self.parents[k].map_or(Mat3::identity(), |p| kin.rotations[p]);
            grad_pose[k] = (parent_rot * so3::left_jacobian(&pose[k])).transpose() * torque;
        }
        let mut grad_shape = [0.0; SHAPE_DIM];
        for j in 0..n {
            let parent_rot = self.parents[j].map_or(kin.rotations[0], |p| kin.rotations[p]);
            let g = self.bone_groups[j];
            let d = kin.scales[g] * (parent_rot * self.rest_offsets[j]);
            grad_shape[g] += d.dot(&gsum[j]);
        }
        KinematicsGradient {
            pose: grad_pose,
            translation: gsum[0],
            shape: grad_shape,
        }
    }
}

/// Forward-kinematics state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub positions: Vec<Vec3>,
    /// World rotation of each joint's frame.
    pub rotations: Vec<Mat3>,
    pub scales: [f64; SHAPE_DIM],
}

#[derive(Debug, Clone)]
pub struct KinematicsGradient {
    pub pose: Vec<Vec3>,
    pub translation: Vec3,
    pub shape: [f64; SHAPE_DIM],
}

/// Pose of the skeleton at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    /// Axis-angle per joint; entry 0 is the global orientation.
    pub pose: Vec<Vec3>,
    /// Root (pelvis) position, meters.
    pub translation: Vec3,
}

impl FramePose {
    pub fn rest(n_joints: usize) -> Self {
        Self {
            pose: vec![Vec3::zeros(); n_joints],
            translation: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonParams {
    pub shape: Vec<f64>,
    pub frames: Vec<FramePose>,
}

impl SkeletonParams {
    pub fn validate(&self, model: &SkeletonModel) -> Result<()> {
        if self.shape.len() != SHAPE_DIM {
            return Err(Error::InvalidInput(format!("shape has {} entries, expected {SHAPE_DIM}", self.shape.len())));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.pose.len() != model.n_joints() {
                return Err(Error::InvalidInput(format!("frame {t} pose has {} joints", f.pose.len())));
            }
            let finite = f.pose.iter().chain(std::iter::once(&f.translation)).all(|v| v.iter().all(|x| x.is_finite()));
            if !finite || !self.shape.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("frame {t} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn joints(&self, model: &SkeletonModel) -> Vec<Vec<Vec3>> {
        self.frames
            .iter()
            .map(|f| model.forward(&self.shape, &f.pose, &f.translation))
            .collect()
    }
}

/// Rewrites an axis-angle vector to the equivalent one with magnitude ≤ π.
pub fn wrap_axis_angle(w: &Vec3) -> Vec3 {
    let t = w.norm();
    if t <= std::f64::consts::PI {
        return *w;
    }
    let wrapped = crate::geom::wrap_angle(t);
    w * (wrapped / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::max_relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng) -> (Vec<f64>, Vec<Vec3>, Vec3) {
        let shape = (0..SHAPE_DIM).map(|_| rng.random_range(-0.2..0.2)).collect();
        let pose = (0..JOINT_COUNT)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let t = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..1.5));
        (shape, pose, t)
    }

    #[test]
    fn default_model_is_valid() {
        let m = SkeletonModel::default();
        m.validate().unwrap();
        assert_eq!(m.n_joints(), JOINT_COUNT);
        assert_eq!(POSE_DIM, 72);
    }

    #[test]
    fn rest_pose_and_translation() {
        let m = SkeletonModel::default();
        let zero = vec![Vec3::zeros(); JOINT_COUNT];
        let rest = m.forward(&[0.0; SHAPE_DIM], &zero, &Vec3::zeros());
        // rest positions are cumulative offsets along the tree
        for j in 1..JOINT_COUNT {
            let p = m.parents[j].unwrap();
            assert!((rest[j] - rest[p] - m.rest_offsets[j]).norm() < 1e-15);
        }
        let shift = Vec3::new(0.3, -1.0, 0.9);
        let moved = m.forward(&[0.0; SHAPE_DIM], &zero, &shift);
        for (a, b) in moved.iter().zip(&rest) {
            assert!((a - b - shift).norm() < 1e-15);
        }
        assert!(rest[10].z < -0.9 && rest[15].z > 0.5);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (shape, pose, t) = random_params(&mut rng);
            let g: Vec<Vec3> = (0..JOINT_COUNT)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let loss = |shape: &[f64], pose: &[Vec3], t: &Vec3| -> f64 {
                m.forward(shape, pose, t).iter().zip(&g).map(|(p, g)| p.dot(g)).sum()
            };
            let kin = m.forward_full(&shape, &pose, &t);
            let an = m.backward(&kin, &pose, &g);
            let h = 1e-6;
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for j in 0..JOINT_COUNT {
                for i in 0..3 {
                    let (mut a, mut b) = (pose.clone(), pose.clone());
                    a[j][i] += h;
                    b[j][i] -= h;
                    numeric.push((loss(&shape, &a, &t) - loss(&shape, &b, &t)) / (2.0 * h));
                    analytic.push(an.pose[j][i]);
                }
            }
            for i in 0..3 {
                let (mut a, mut b) = (t, t);
                a[i] += h;
                b[i] -= h;
                numeric.push((loss(&shape, &pose, &a) - loss(&shape, &pose, &b)) / (2.0 * h));
                analytic.push(an.translation[i]);
            }
            for i in 0..SHAPE_DIM {
                let (mut a, mut b) = (shape.clone(), shape.clone());
                a[i] += h;
                b[i] -= h;
                numeric.push((loss(&a, &pose, &t) - loss(&b, &pose, &t)) / (2.0 * h));
                analytic.push(an.shape[i]);
            }
            let err = max_relative_error(&analytic, &numeric, 1e-3);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn bone_lengths_follow_shape() {
        let m = SkeletonModel::default();
        let mut shape = [0.0; SHAPE_DIM];
        shape[3] = 0.1f64.ln_1p();
        let zero = vec![Vec3::zeros(); JOINT_COUNT];
        let p = m.forward(&shape, &zero, &Vec3::zeros());
        assert!(((p[4] - p[1]).norm() - 1.1 * m.rest_offsets[4].norm()).abs() < 1e-12);
        assert!(((p[7] - p[4]).norm() - m.rest_offsets[7].norm()).abs() < 1e-12);
    }

    #[test]
    fn axis_angle_wrapping_preserves_rotation() {
        let w = Vec3::new(2.0, -2.5, 1.0);
        let v = wrap_axis_angle(&w);
        assert!(v.norm() <= std::f64::consts::PI);
        assert!((so3::exp(&w) - so3::exp(&v)).amax() < 1e-12);
    }
}
