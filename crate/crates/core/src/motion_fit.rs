//! World-frame skeleton fitting to triangulated and 2D keypoints, and the
//! contact-marker rigid post-alignment.

use rayon::prelude::*;

use crate::alignment::{procrustes_yaw, CorrespondenceSet};
use crate::error::{Error, Result};
use crate::geom::{so3, yaw_rotation, yaw_rotation_derivative, Intrinsics, Pose, Trajectory, Vec2, Vec3, MIN_DEPTH};
use crate::optim::{finite_difference, max_relative_error, minimize, AdamConfig, Termination};
use crate::skeleton::{wrap_axis_angle, FramePose, SkeletonModel, SkeletonParams, SHAPE_DIM};
use crate::triangulator::{Keypoint2DFrame, Keypoint3DFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWeights {
    pub kp3d: f64,
    pub smooth: f64,
    pub prior: f64,
    /// Per squared pixel.
    pub reproj: f64,
}

impl Default for FitWeights {
    fn default() -> Self {
        Self {
            kp3d: 1.0,
            smooth: 0.5,
            prior: 0.01,
            reproj: 1e-5,
        }
    }
}

impl FitWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.kp3d, self.smooth, self.prior, self.reproj];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidInput(format!("invalid fit weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub weights: FitWeights,
    /// Stage 1: shape and root translation only.
    pub shape_stage: AdamConfig,
    /// Stage 2: all parameters.
    pub full_stage: AdamConfig,
    /// 2D keypoints below this confidence are ignored.
    pub confidence_gate: f64,
    pub check_gradient: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: FitWeights::default(),
            shape_stage: AdamConfig {
                learning_rate: 5e-3,
                max_iterations: 200,
                final_lr_fraction: 0.1,
                ..Default::default()
            },
            full_stage: AdamConfig {
                learning_rate: 5e-3,
                max_iterations: 800,
                final_lr_fraction: 0.05,
                ..Default::default()
            },
            confidence_gate: 0.3,
            check_gradient: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitBreakdown {
    pub kp3d: f64,
    pub smooth: f64,
    pub prior: f64,
    pub reproj: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: SkeletonParams,
    pub initial: FitBreakdown,
    pub last: FitBreakdown,
    /// Loss curves of the two stages.
    pub histories: [Vec<f64>; 2],
    pub terminations: [Termination; 2],
    pub gradient_check: Option<f64>,
}

struct Obs2D {
    joint: usize,
    pixel: Vec2,
    confidence: f64,
    pose: Pose,
    k: Intrinsics,
}

/// Packed layout: shape, then per frame the 24 joint rotations followed by
/// the root translation.
pub struct FitObjective<'a> {
    model: &'a SkeletonModel,
    targets: Vec<Vec<Option<Vec3>>>,
    n_targets: usize,
    obs: Vec<Vec<Obs2D>>,
    n_obs: usize,
    init_pose: Vec<Vec<Vec3>>,
    weights: FitWeights,
}

impl<'a> FitObjective<'a> {
    pub fn new(
        model: &'a SkeletonModel,
        k3d: &[Keypoint3DFrame],
        k2d: &[Vec<Keypoint2DFrame>],
        trajs: &[Trajectory],
        init: &SkeletonParams,
        weights: FitWeights,
        confidence_gate: f64,
    ) -> Result<Self> {
        model.validate()?;
        init.validate(model)?;
        weights.validate()?;
        let n = init.frames.len();
        if n == 0 {
            return Err(Error::EmptyInput("skeleton frames"));
        }
        if k3d.len() != n {
            return Err(Error::FrameMisalignment(format!("{} keypoint frames vs {n} skeleton frames", k3d.len())));
        }
        let nj = model.n_joints();
        let mut targets = Vec::with_capacity(n);
        for f in k3d {
            if f.joints.len() != nj {
                return Err(Error::InvalidInput(format!("frame {} has {} joints, expected {nj}", f.frame, f.joints.len())));
            }
            let t: Vec<Option<Vec3>> = f.joints.iter().map(|j| j.is_valid().then_some(j.position)).collect();
            if t.iter().all(Option::is_none) {
                return Err(Error::NoValidJoints { frame: f.frame });
            }
            targets.push(t);
        }
        let n_targets = targets.iter().flatten().flatten().count();

        if k2d.len() != trajs.len() && !k2d.is_empty() {
            return Err(Error::SizeMismatch {
                what: "keypoint streams vs trajectories",
                left: k2d.len(),
                right: trajs.len(),
            });
        }
        let mut obs: Vec<Vec<Obs2D>> = (0..n).map(|_| Vec::new()).collect();
        for (stream, traj) in k2d.iter().zip(trajs) {
            if stream.len() != n {
                return Err(Error::FrameMisalignment(format!("{} 2D frames vs {n} skeleton frames", stream.len())));
            }
            for (i, f) in stream.iter().enumerate() {
                let pose = *traj.pose(f.frame)?;
                for (j, (pixel, c)) in f.joints.iter().enumerate().take(nj) {
                    if *c >= confidence_gate && *c > 0.0 {
                        obs[i].push(Obs2D {
                            joint: j,
                            pixel: *pixel,
                            confidence: *c,
                            pose,
                            k: traj.intrinsics,
                        });
                    }
                }
            }
        }
        let n_obs = obs.iter().map(Vec::len).sum();
        Ok(Self {
            model,
            targets,
            n_targets,
            obs,
            n_obs,
            init_pose: init.frames.iter().map(|f| f.pose.clone()).collect(),
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        SHAPE_DIM + self.targets.len() * self.frame_dim()
    }

    fn frame_dim(&self) -> usize {
        3 * self.model.n_joints() + 3
    }

    pub fn pack(&self, p: &SkeletonParams) -> Vec<f64> {
        let mut x = p.shape.clone();
        for f in &p.frames {
            for w in &f.pose {
                x.extend(w.iter());
            }
            x.extend(f.translation.iter());
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> SkeletonParams {
        let nj = self.model.n_joints();
        let frames = x[SHAPE_DIM..]
            .chunks_exact(self.frame_dim())
            .map(|c| FramePose {
                pose: (0..nj).map(|j| Vec3::new(c[3 * j], c[3 * j + 1], c[3 * j + 2])).collect(),
                translation: Vec3::new(c[3 * nj], c[3 * nj + 1], c[3 * nj + 2]),
            })
            .collect();
        SkeletonParams {
            shape: x[..SHAPE_DIM].to_vec(),
            frames,
        }
    }

    pub fn evaluate(&self, p: &SkeletonParams) -> FitBreakdown {
        self.evaluate_impl(p, false).0
    }

    pub fn evaluate_with_gradient(&self, p: &SkeletonParams) -> (FitBreakdown, Vec<f64>) {
        let (b, g) = self.evaluate_impl(p, true);
        (b, g.expect("gradient requested"))
    }

    fn evaluate_impl(&self, p: &SkeletonParams, want_grad: bool) -> (FitBreakdown, Option<Vec<f64>>) {
        let nf = p.frames.len();
        let nj = self.model.n_joints();
        let w = self.weights;
        let kin: Vec<_> = p
            .frames
            .par_iter()
            .map(|f| self.model.forward_full(&p.shape, &f.pose, &f.translation))
            .collect();

        // Per-frame data terms and their position gradients.
        let per_frame: Vec<(f64, f64, usize, Vec<Vec3>)> = (0..nf)
            .into_par_iter()
            .map(|t| {
                let pos = &kin[t].positions;
                let mut g = vec![Vec3::zeros(); nj];
                let mut l3 = 0.0;
                for (j, y) in self.targets[t].iter().enumerate() {
                    if let Some(y) = y {
                        let r = pos[j] - y;
                        l3 += r.norm_squared();
                        g[j] += (2.0 * w.kp3d / self.n_targets as f64) * r;
                    }
                }
                let mut lr = 0.0;
                let mut dropped = 0;
                for o in &self.obs[t] {
                    let pc = o.pose.to_camera(&pos[o.joint]);
                    if pc.z <= MIN_DEPTH {
                        dropped += 1;
                        continue;
                    }
                    let e = o.pixel - o.k.project_camera_point(&pc);
                    lr += o.confidence * e.norm_squared();
                    if want_grad && w.reproj > 0.0 {
                        let iz = 1.0 / pc.z;
                        let du = Vec3::new(o.k.fx * iz, 0.0, -o.k.fx * pc.x * iz * iz);
                        let dv = Vec3::new(0.0, o.k.fy * iz, -o.k.fy * pc.y * iz * iz);
                        let dpc = (-2.0 * o.confidence * w.reproj / self.n_obs as f64) * (e.x * du + e.y * dv);
                        g[o.joint] += o.pose.rotation.transpose() * dpc;
                    }
                }
                (l3, lr, dropped, g)
            })
            .collect();
        let kp3d = per_frame.iter().map(|f| f.0).sum::<f64>() / self.n_targets as f64;
        let reproj = if self.n_obs > 0 {
            per_frame.iter().map(|f| f.1).sum::<f64>() / self.n_obs as f64
        } else {
            0.0
        };
        let mut grad_pos: Vec<Vec<Vec3>> = per_frame.into_iter().map(|f| f.3).collect();
        let mut grad_pose: Vec<Vec<Vec3>> = vec![vec![Vec3::zeros(); nj]; nf];

        let mut smooth = 0.0;
        if nf >= 3 {
            let na = ((nf - 2) * nj) as f64;
            for t in 1..nf - 1 {
                for j in 0..nj {
                    let a = kin[t + 1].positions[j] - 2.0 * kin[t].positions[j] + kin[t - 1].positions[j];
                    smooth += a.norm_squared() / na;
                    if want_grad {
                        let g = (2.0 * w.smooth / na) * a;
                        grad_pos[t + 1][j] += g;
                        grad_pos[t][j] -= 2.0 * g;
                        grad_pos[t - 1][j] += g;
                    }
                    let b = p.frames[t + 1].pose[j] - 2.0 * p.frames[t].pose[j] + p.frames[t - 1].pose[j];
                    smooth += b.norm_squared() / na;
                    if want_grad {
                        let g = (2.0 * w.smooth / na) * b;
                        grad_pose[t + 1][j] += g;
                        grad_pose[t][j] -= 2.0 * g;
                        grad_pose[t - 1][j] += g;
                    }
                }
            }
        }

        let np = (nf * (nj - 1)) as f64;
        let mut prior = 0.0;
        for t in 0..nf {
            for j in 1..nj {
                let d = p.frames[t].pose[j] - self.init_pose[t][j];
                prior += d.norm_squared() / np;
                if want_grad {
                    grad_pose[t][j] += (2.0 * w.prior / np) * d;
                }
            }
        }

        let breakdown = FitBreakdown {
            kp3d,
            smooth,
            prior,
            reproj,
            total: w.kp3d * kp3d + w.smooth * smooth + w.prior * prior + w.reproj * reproj,
        };
        if !want_grad {
            return (breakdown, None);
        }

        let back: Vec<_> = (0..nf)
            .into_par_iter()
            .map(|t| self.model.backward(&kin[t], &p.frames[t].pose, &grad_pos[t]))
            .collect();
        let mut grad = vec![0.0; self.dim()];
        let fd = self.frame_dim();
        for (t, b) in back.iter().enumerate() {
            for (s, g) in grad[..SHAPE_DIM].iter_mut().zip(&b.shape) {
                *s += g;
            }
            let base = SHAPE_DIM + t * fd;
            for j in 0..nj {
                let g = b.pose[j] + grad_pose[t][j];
                grad[base + 3 * j..base + 3 * j + 3].copy_from_slice(g.as_slice());
            }
            grad[base + 3 * nj..base + 3 * nj + 3].copy_from_slice(b.translation.as_slice());
        }
        (breakdown, Some(grad))
    }
}

/// Two-stage fit: shape and root translation first, then everything.
pub fn fit_motion(
    model: &SkeletonModel,
    k3d: &[Keypoint3DFrame],
    k2d: &[Vec<Keypoint2DFrame>],
    trajs: &[Trajectory],
    init: &SkeletonParams,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let obj = FitObjective::new(model, k3d, k2d, trajs, init, cfg.weights, cfg.confidence_gate)?;
    let x0 = obj.pack(init);
    let initial = obj.evaluate(init);
    if !initial.total.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut gradient_check = None;
    if cfg.check_gradient {
        let (_, g) = obj.evaluate_with_gradient(init);
        let fd = finite_difference(&x0, 1e-6, |x| Ok(obj.evaluate(&obj.unpack(x)).total))?;
        let err = max_relative_error(&g, &fd, 1e-3);
        if err > 1e-4 {
            log::warn!("fit gradient check: relative error {err:.3e}");
        }
        gradient_check = Some(err);
    }

    let nj = model.n_joints();
    let fd = obj.frame_dim();
    let is_rotation = |i: usize| i >= SHAPE_DIM && (i - SHAPE_DIM) % fd < 3 * nj;
    let wrap = |x: &mut [f64]| {
        for t in 0..(x.len() - SHAPE_DIM) / fd {
            for j in 0..nj {
                let i = SHAPE_DIM + t * fd + 3 * j;
                let w = wrap_axis_angle(&Vec3::new(x[i], x[i + 1], x[i + 2]));
                x[i..i + 3].copy_from_slice(w.as_slice());
            }
        }
    };

    let stage1 = minimize(
        &x0,
        &cfg.shape_stage,
        |x| {
            let (b, mut g) = obj.evaluate_with_gradient(&obj.unpack(x));
            for (i, gi) in g.iter_mut().enumerate() {
                if is_rotation(i) {
                    *gi = 0.0;
                }
            }
            Ok((b.total, g))
        },
        |_| {},
    )?;
    let stage2 = minimize(
        &stage1.best,
        &cfg.full_stage,
        |x| {
            let (b, g) = obj.evaluate_with_gradient(&obj.unpack(x));
            Ok((b.total, g))
        },
        wrap,
    )?;
    log::info!(
        "motion fit: stage 1 {} iterations ({:?}), stage 2 {} iterations ({:?}), loss {:.6e} -> {:.6e}",
        stage1.iterations,
        stage1.termination,
        stage2.iterations,
        stage2.termination,
        initial.total,
        stage2.best_loss
    );
    let params = obj.unpack(&stage2.best);
    let last = obj.evaluate(&params);
    Ok(FitResult {
        params,
        initial,
        last,
        histories: [stage1.history, stage2.history],
        terminations: [stage1.termination, stage2.termination],
        gradient_check,
    })
}

/// Starting point for [`fit_motion`] built from triangulated keypoints: rest
/// shape and pose, root at the triangulated pelvis, heading from the hips.
/// Frames missing those joints borrow the nearest frame that has them.
pub fn initial_params(model: &SkeletonModel, k3d: &[Keypoint3DFrame]) -> Result<SkeletonParams> {
    const PELVIS: usize = 0;
    const HIPS: (usize, usize) = (1, 2);
    model.validate()?;
    if k3d.is_empty() {
        return Err(Error::EmptyInput("keypoint frames"));
    }
    let valid = |f: &Keypoint3DFrame, j: usize| f.joints.get(j).filter(|p| p.is_valid()).map(|p| p.position);
    let centroid = |f: &Keypoint3DFrame| {
        let v: Vec<Vec3> = f.joints.iter().filter(|j| j.is_valid()).map(|j| j.position).collect();
        (!v.is_empty()).then(|| v.iter().sum::<Vec3>() / v.len() as f64)
    };
    // the centroid of whatever was triangulated only stands in when no
    // frame has a pelvis at all
    let pelvis: Vec<Option<Vec3>> = k3d.iter().map(|f| valid(f, PELVIS)).collect();
    let roots = fill_nearest(&pelvis).or_else(|| fill_nearest(&k3d.iter().map(centroid).collect::<Vec<_>>()));
    let yaws: Vec<Option<f64>> = k3d
        .iter()
        .map(|f| {
            let d = valid(f, HIPS.0)? - valid(f, HIPS.1)?;
            (d.xy().norm() > 1e-6).then(|| d.y.atan2(d.x))
        })
        .collect();
    let roots = roots.ok_or(Error::NoValidJoints { frame: k3d[0].frame })?;
    let yaws = fill_nearest(&yaws).unwrap_or_else(|| vec![0.0; k3d.len()]);
    let frames = roots
        .into_iter()
        .zip(yaws)
        .map(|(translation, yaw)| {
            let mut pose = vec![Vec3::zeros(); model.n_joints()];
            pose[0] = Vec3::new(0.0, 0.0, yaw);
            FramePose { pose, translation }
        })
        .collect();
    Ok(SkeletonParams { shape: vec![0.0; SHAPE_DIM], frames })
}

/// Replaces each gap with the closest present value (earlier on ties).
fn fill_nearest<T: Copy>(xs: &[Option<T>]) -> Option<Vec<T>> {
    let present: Vec<usize> = (0..xs.len()).filter(|i| xs[*i].is_some()).collect();
    if present.is_empty() {
        return None;
    }
    Some(
        (0..xs.len())
            .map(|i| {
                let k = present.partition_point(|p| *p < i);
                let best = match (k.checked_sub(1).map(|a| present[a]), present.get(k)) {
                    (Some(a), Some(b)) => if i - a <= *b - i { a } else { *b },
                    (Some(a), None) => a,
                    (None, Some(b)) => *b,
                    (None, None) => unreachable!(),
                };
                xs[best].unwrap()
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactMarker {
    pub frame: usize,
    /// Marker position; its z is the contact height.
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactAnnotation {
    pub contacts: Vec<ContactMarker>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactConfig {
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub gradient_tolerance: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContactAlignment {
    pub params: SkeletonParams,
    pub trajectories: Vec<Trajectory>,
    /// Rigid xy-plane transform `x' = Rz(yaw) x + translation`.
    pub yaw: f64,
    pub translation: Vec3,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Lowest contact joint of the skeleton at `frame`.
pub fn contact_anchor(model: &SkeletonModel, params: &SkeletonParams, frame: usize) -> Result<Vec3> {
    let f = params
        .frames
        .get(frame)
        .ok_or_else(|| Error::InvalidInput(format!("contact frame {frame} outside the sequence")))?;
    let joints = model.forward(&params.shape, &f.pose, &f.translation);
    model
        .contact_joints
        .iter()
        .map(|j| joints[*j])
        .min_by(|a, b| a.z.total_cmp(&b.z))
        .ok_or_else(|| Error::InvalidInput("skeleton has no contact joints".into()))
}

fn contact_loss(anchors: &[Vec3], markers: &[Vec3], yaw: f64, t: &Vec3) -> (f64, [f64; 4]) {
    let r = yaw_rotation(yaw);
    let dr = yaw_rotation_derivative(yaw);
    let n = anchors.len() as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 4];
    for (a, m) in anchors.iter().zip(markers) {
        let moved = r * a + t;
        let e = moved - m;
        loss += (e.x * e.x + e.y * e.y + e.z * e.z) / n;
        let da = dr * a;
        g[0] += 2.0 * (e.x * da.x + e.y * da.y) / n;
        g[1] += 2.0 * e.x / n;
        g[2] += 2.0 * e.y / n;
        g[3] += 2.0 * e.z / n;
    }
    (loss, g)
}

/// Moves the skeleton and cameras rigidly in the ground plane (plus a
/// vertical shift) so the lowest foot point meets each contact marker.
pub fn contact_align(
    model: &SkeletonModel,
    params: &SkeletonParams,
    trajs: &[Trajectory],
    ann: &ContactAnnotation,
    cfg: &ContactConfig,
) -> Result<ContactAlignment> {
    if ann.contacts.is_empty() {
        return Err(Error::NoContactFrames);
    }
    let anchors: Vec<Vec3> = ann
        .contacts
        .iter()
        .map(|c| contact_anchor(model, params, c.frame))
        .collect::<Result<_>>()?;
    let markers: Vec<Vec3> = ann.contacts.iter().map(|c| c.position).collect();
    if markers.iter().any(|m| !m.iter().all(|x| x.is_finite())) {
        return Err(Error::InvalidInput("non-finite contact marker".into()));
    }

    // Closed-form start: yaw Procrustes in the ground plane when the
    // anchors span it, otherwise a pure shift.
    let flat = |v: &Vec3| Vec3::new(v.x, v.y, 0.0);
    let n = anchors.len() as f64;
    let dz = markers.iter().zip(&anchors).map(|(m, a)| m.z - a.z).sum::<f64>() / n;
    let start = CorrespondenceSet::new(anchors.iter().map(flat).collect(), markers.iter().map(flat).collect())
        .and_then(|c| procrustes_yaw(&c, false));
    let (mut yaw, mut t) = match start {
        Ok(s) => (s.yaw(), Vec3::new(s.translation.x, s.translation.y, dz)),
        Err(_) => {
            let ma = anchors.iter().sum::<Vec3>() / n;
            let mm = markers.iter().sum::<Vec3>() / n;
            (0.0, Vec3::new(mm.x - ma.x, mm.y - ma.y, dz))
        }
    };

    // Gradient descent with a backtracking step.
    let (loss_before, _) = contact_loss(&anchors, &markers, 0.0, &Vec3::zeros());
    let (mut loss, mut g) = contact_loss(&anchors, &markers, yaw, &t);
    let mut step = 1.0;
    for _ in 0..cfg.max_iterations {
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gn < cfg.gradient_tolerance {
            break;
        }
        let mut improved = false;
        while step > 1e-12 {
            let cy = yaw - step * g[0];
            let ct = t - step * Vec3::new(g[1], g[2], g[3]);
            let (cl, cg) = contact_loss(&anchors, &markers, cy, &ct);
            if cl < loss {
                (yaw, t, loss, g) = (cy, ct, cl, cg);
                step *= 2.0;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let r = yaw_rotation(yaw);
    let frames = params
        .frames
        .iter()
        .map(|f| {
            let mut pose = f.pose.clone();
            pose[0] = so3::log(&(r * so3::exp(&f.pose[0])));
            FramePose {
                pose,
                translation: r * f.translation + t,
            }
        })
        .collect();
    let trajectories = trajs
        .iter()
        .map(|tr| tr.map_poses(|p| p.with_world_remap(&r, &t)))
        .collect();
    Ok(ContactAlignment {
        params: SkeletonParams {
            shape: params.shape.clone(),
            frames,
        },
        trajectories,
        yaw,
        translation: t,
        loss_before,
        loss_after: loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project, TimedPose};
    use crate::skeleton::JOINT_COUNT;
    use crate::test_scenes::{k, look_at};
    use crate::triangulator::{Joint3D, JointStatus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn walk(rng: &mut impl Rng, n: usize) -> SkeletonParams {
        let phase: f64 = rng.random_range(0.0..1.0);
        let frames = (0..n)
            .map(|i| {
                let s = 0.15 * i as f64 + phase;
                let mut pose = vec![Vec3::zeros(); JOINT_COUNT];
                pose[0] = Vec3::new(0.0, 0.0, 0.3 + 0.01 * i as f64);
                pose[1] = Vec3::new(0.4 * s.sin(), 0.0, 0.0);
                pose[2] = Vec3::new(-0.4 * s.sin(), 0.0, 0.0);
                pose[4] = Vec3::new(0.3 * (1.0 - s.cos()), 0.0, 0.0);
                pose[5] = Vec3::new(0.3 * (1.0 + s.cos()), 0.0, 0.0);
                pose[16] = Vec3::new(0.0, 0.0, -1.1);
                pose[17] = Vec3::new(0.0, 0.0, 1.1);
                pose[18] = Vec3::new(0.0, 0.3 * s.sin(), 0.0);
                FramePose {
                    pose,
                    translation: Vec3::new(0.02 * i as f64, 0.005 * i as f64, 0.9 + 0.01 * (2.0 * s).sin()),
                }
            })
            .collect();
        SkeletonParams {
            shape: (0..SHAPE_DIM).map(|_| rng.random_range(-0.1..0.1)).collect(),
            frames,
        }
    }

    fn cameras(n: usize) -> Vec<Trajectory> {
        (0..2)
            .map(|v| {
                let a = v as f64 * std::f64::consts::FRAC_PI_2;
                let frames = (0..n)
                    .map(|i| TimedPose {
                        timestamp: i as f64,
                        pose: look_at(Vec3::new(3.5 * a.cos() + 0.02 * i as f64, 3.5 * a.sin(), 1.3), Vec3::new(0.02 * i as f64, 0.0, 0.9)),
                    })
                    .collect();
                Trajectory::new(format!("v{v}"), frames, k()).unwrap()
            })
            .collect()
    }

    fn observations(model: &SkeletonModel, p: &SkeletonParams, trajs: &[Trajectory]) -> (Vec<Keypoint3DFrame>, Vec<Vec<Keypoint2DFrame>>) {
        let joints = p.joints(model);
        let k3d = joints
            .iter()
            .enumerate()
            .map(|(t, js)| Keypoint3DFrame {
                frame: t,
                joints: js
                    .iter()
                    .map(|x| Joint3D { position: *x, status: JointStatus::Valid, residual_px: 0.0 })
                    .collect(),
            })
            .collect();
        let k2d = trajs
            .iter()
            .enumerate()
            .map(|(v, tr)| {
                joints
                    .iter()
                    .enumerate()
                    .map(|(t, js)| Keypoint2DFrame {
                        view: v,
                        frame: t,
                        joints: js.iter().map(|x| (project(x, &tr.frames[t].pose, &k()).unwrap(), 1.0)).collect(),
                    })
                    .collect()
            })
            .collect();
        (k3d, k2d)
    }

    #[test]
    fn initial_params_from_pelvis_and_hips() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = walk(&mut rng, 8);
        let (mut k3d, _) = observations(&model, &gt, &cameras(8));
        k3d[3].joints[0] = Joint3D { position: Vec3::repeat(f64::NAN), status: JointStatus::DegenerateRays, residual_px: f64::NAN };
        k3d[3].joints[1].status = JointStatus::BehindCamera;
        let init = initial_params(&model, &k3d).unwrap();
        assert_eq!(init.shape, vec![0.0; SHAPE_DIM]);
        for (t, f) in init.frames.iter().enumerate() {
            let src = if t == 3 { 2 } else { t };
            assert!((f.translation - gt.frames[src].translation).norm() < 1e-12);
            assert!((f.pose[0].z - (0.3 + 0.01 * src as f64)).abs() < 1e-12, "{t}: {:?}", f.pose[0]);
            assert!(f.pose[1..].iter().all(|w| *w == Vec3::zeros()));
        }
        for f in &mut k3d {
            for j in &mut f.joints {
                j.status = JointStatus::TooFewConfidentViews;
            }
        }
        assert!(matches!(initial_params(&model, &k3d), Err(Error::NoValidJoints { .. })));
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = walk(&mut rng, 30);
        let trajs = cameras(30);
        let (k3d, k2d) = observations(&model, &gt, &trajs);
        let obj = FitObjective::new(&model, &k3d, &k2d, &trajs, &gt, FitWeights::default(), 0.3).unwrap();
        let b = obj.evaluate(&gt);
        assert!(b.kp3d < 1e-24 && b.reproj < 1e-16 && b.prior == 0.0);
        let cfg = FitConfig {
            weights: FitWeights { smooth: 0.0, ..Default::default() },
            ..Default::default()
        };
        let r = fit_motion(&model, &k3d, &k2d, &trajs, &gt, &cfg).unwrap();
        let x = obj.pack(&r.params);
        let y = obj.pack(&gt);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(r.histories[0][0] < 1e-16);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = walk(&mut rng, 6);
        let trajs = cameras(6);
        let (k3d, k2d) = observations(&model, &gt, &trajs);
        let mut init = gt.clone();
        for f in &mut init.frames {
            for w in &mut f.pose {
                *w += Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            }
            f.translation += Vec3::new(0.05, -0.03, 0.02);
        }
        let weights = FitWeights { kp3d: 1.0, smooth: 0.5, prior: 0.3, reproj: 1e-3 };
        let obj = FitObjective::new(&model, &k3d, &k2d, &trajs, &gt, weights, 0.3).unwrap();
        let mut moved = init.clone();
        for f in &mut moved.frames {
            f.pose[3] += Vec3::new(0.05, 0.0, -0.02);
        }
        let (_, g) = obj.evaluate_with_gradient(&moved);
        let x = obj.pack(&moved);
        let fd = finite_difference(&x, 1e-6, |x| Ok(obj.evaluate(&obj.unpack(x)).total)).unwrap();
        let err = max_relative_error(&g, &fd, 1e-3);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn fit_never_increases_loss_and_recovers() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = walk(&mut rng, 40);
        let trajs = cameras(40);
        let (k3d, k2d) = observations(&model, &gt, &trajs);
        let mut init = gt.clone();
        init.shape.iter_mut().for_each(|s| *s = 0.0);
        for f in &mut init.frames {
            f.translation += Vec3::new(0.05, -0.04, 0.03);
        }
        let r = fit_motion(&model, &k3d, &k2d, &trajs, &init, &FitConfig::default()).unwrap();
        assert!(r.last.total <= r.initial.total);
        let fitted = r.params.joints(&model);
        let truth = gt.joints(&model);
        let mpjpe: f64 = fitted
            .iter()
            .zip(&truth)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .sum::<f64>()
            / (40 * JOINT_COUNT) as f64;
        assert!(mpjpe < 0.01, "mpjpe {mpjpe}");
    }

    #[test]
    fn no_valid_joints_is_an_error() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = walk(&mut rng, 5);
        let trajs = cameras(5);
        let (mut k3d, k2d) = observations(&model, &gt, &trajs);
        k3d[2].joints.iter_mut().for_each(|j| j.status = JointStatus::TooFewConfidentViews);
        assert!(matches!(
            fit_motion(&model, &k3d, &k2d, &trajs, &gt, &FitConfig::default()),
            Err(Error::NoValidJoints { frame: 2 })
        ));
    }

    fn contacts_of(model: &SkeletonModel, p: &SkeletonParams, frames: &[usize]) -> ContactAnnotation {
        ContactAnnotation {
            contacts: frames
                .iter()
                .map(|f| ContactMarker { frame: *f, position: contact_anchor(model, p, *f).unwrap() })
                .collect(),
        }
    }

    #[test]
    fn markers_at_feet_give_identity() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = walk(&mut rng, 30);
        let ann = contacts_of(&model, &p, &[0, 10, 20, 29]);
        let r = contact_align(&model, &p, &cameras(30), &ann, &ContactConfig::default()).unwrap();
        assert!(r.yaw.abs() < 1e-12 && r.translation.norm() < 1e-12);
        for (a, b) in r.params.frames.iter().zip(&p.frames) {
            assert!((a.translation - b.translation).norm() < 1e-12);
            assert!((so3::exp(&a.pose[0]) - so3::exp(&b.pose[0])).amax() < 1e-12);
        }
        assert!(matches!(
            contact_align(&model, &p, &cameras(30), &ContactAnnotation::default(), &ContactConfig::default()),
            Err(Error::NoContactFrames)
        ));
    }

    #[test]
    fn recovers_known_ground_plane_transform() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = walk(&mut rng, 30);
        let trajs = cameras(30);
        let ann = contacts_of(&model, &p, &[0, 7, 15, 22, 29]);
        let (phi, tt) = (0.2, Vec3::new(0.5, -0.3, 0.02));
        let r = yaw_rotation(phi);
        let moved = SkeletonParams {
            shape: p.shape.clone(),
            frames: p
                .frames
                .iter()
                .map(|f| {
                    let mut pose = f.pose.clone();
                    pose[0] = so3::log(&(r * so3::exp(&f.pose[0])));
                    FramePose { pose, translation: r * f.translation + tt }
                })
                .collect(),
        };
        let moved_trajs: Vec<Trajectory> = trajs.iter().map(|t| t.map_poses(|q| q.with_world_remap(&r, &tt))).collect();
        let out = contact_align(&model, &moved, &moved_trajs, &ann, &ContactConfig::default()).unwrap();
        assert!((out.yaw + phi).abs() < 1e-6);
        let expected_t = -(r.transpose() * tt);
        assert!((out.translation - expected_t).norm() < 1e-6);
        let rec = out.params.joints(&model);
        for (a, b) in rec.iter().zip(p.joints(&model)) {
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() < 1e-6);
            }
        }
        // the rotation stays about the vertical axis
        let rc = yaw_rotation(out.yaw);
        assert_eq!((rc[(2, 0)], rc[(2, 1)], rc[(2, 2)]), (0.0, 0.0, 1.0));
    }

    #[test]
    fn projections_survive_joint_and_camera_remap() {
        let model = SkeletonModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = walk(&mut rng, 20);
        let trajs = cameras(20);
        let mut ann = contacts_of(&model, &p, &[0, 10, 19]);
        for c in &mut ann.contacts {
            c.position += Vec3::new(0.3, -0.2, 0.05);
        }
        let out = contact_align(&model, &p, &trajs, &ann, &ContactConfig::default()).unwrap();
        assert!(out.loss_after < 1e-20 && out.loss_before > 0.1);
        let before = p.joints(&model);
        let after = out.params.joints(&model);
        for v in 0..2 {
            for t in 0..20 {
                for j in 0..JOINT_COUNT {
                    let a = project(&before[t][j], &trajs[v].frames[t].pose, &k()).unwrap();
                    let b = project(&after[t][j], &out.trajectories[v].frames[t].pose, &k()).unwrap();
                    assert!((a - b).norm() < 1e-9);
                }
            }
        }
    }
}
