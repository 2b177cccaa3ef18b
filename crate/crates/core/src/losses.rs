//! Calibration loss terms and their weighted composite.
//!
//! Every term is a function of per-view rigid offsets restricted to a yaw
//! angle and a translation. An offset remaps the view's trajectory frame
//! into the scene frame, `x_scene = Rz(yaw) x_view + t`.

use rayon::prelude::*;

use crate::alignment::apply_offset_to_trajectory;
use crate::error::{Error, Result};
use crate::geom::{
    backproject, yaw_rotation, yaw_rotation_derivative, Intrinsics, Mat3, PointCloud, Pose,
    SimilarityTransform, Trajectory, Vec2, Vec3, MIN_DEPTH,
};
use crate::kdtree::KdTree;

/// Per-view yaw + translation offset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ViewOffset {
    pub yaw: f64,
    pub translation: Vec3,
}

impl ViewOffset {
    pub fn new(yaw: f64, translation: Vec3) -> Self {
        Self { yaw, translation }
    }

    pub fn transform(&self) -> SimilarityTransform {
        SimilarityTransform::from_yaw(self.yaw, self.translation)
    }
}

/// A point tracked across both views at synchronized frame `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedCorrespondence {
    pub frame: usize,
    pub pixel: [Vec2; 2],
    pub depth: [f64; 2],
    pub confidence: [f64; 2],
}

impl TrackedCorrespondence {
    pub fn validate(&self) -> Result<()> {
        if self.depth.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::NonPositiveDepth(self.depth[0].min(self.depth[1])));
        }
        if self.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("track confidence outside [0, 1]".into()));
        }
        Ok(())
    }

    /// `min(w₁, w₂)`.
    pub fn weight(&self) -> f64 {
        self.confidence[0].min(self.confidence[1])
    }
}

/// Observation of fixed scene landmark `landmark` by `view` at `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkObservation {
    pub view: usize,
    pub frame: usize,
    pub landmark: usize,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub track: f64,
    pub chamfer: f64,
    pub ba: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            track: 1.0,
            chamfer: 0.1,
            ba: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.track, self.chamfer, self.ba];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidInput(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

fn check_views(trajs: &[Trajectory], offsets: &[ViewOffset]) -> Result<()> {
    if trajs.len() != offsets.len() {
        return Err(Error::SizeMismatch {
            what: "offsets vs trajectories",
            left: offsets.len(),
            right: trajs.len(),
        });
    }
    Ok(())
}

fn aligned(trajs: &[Trajectory], offsets: &[ViewOffset]) -> Result<Vec<Trajectory>> {
    trajs
        .iter()
        .zip(offsets)
        .map(|(t, o)| apply_offset_to_trajectory(t, &o.transform()))
        .collect()
}

/// Weighted mean squared distance between the scene-frame back-projections
/// of each tracked point in view 0 and view 1.
pub fn track_loss(corrs: &[TrackedCorrespondence], offsets: &[ViewOffset], trajs: &[Trajectory]) -> Result<f64> {
    check_views(trajs, offsets)?;
    if trajs.len() < 2 {
        return Err(Error::InvalidInput("track loss needs two views".into()));
    }
    if corrs.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let ali = aligned(trajs, offsets)?;
    let mut sum = 0.0;
    for c in corrs {
        c.validate()?;
        let q: Vec<Vec3> = (0..2)
            .map(|v| backproject(&c.pixel[v], c.depth[v], ali[v].pose(c.frame)?, &ali[v].intrinsics))
            .collect::<Result<_>>()?;
        sum += c.weight() * (q[0] - q[1]).norm_squared();
    }
    Ok(sum / corrs.len() as f64)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// `a` to `b` plus from `b` to `a`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let ta = KdTree::new(&a.points);
    let tb = KdTree::new(&b.points);
    Ok(directed_chamfer(&a.points, &tb) + directed_chamfer(&b.points, &ta))
}

fn directed_chamfer(from: &[Vec3], to: &KdTree) -> f64 {
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| to.nearest(p).expect("non-empty tree").1)
        .collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Per-view mean squared reprojection error of fixed landmarks under the
/// offset-adjusted poses. Observations behind the camera are excluded and
/// counted.
#[derive(Debug, Clone, PartialEq)]
pub struct BaLoss {
    pub per_view: Vec<f64>,
    pub dropped: usize,
}

pub fn ba_loss(
    obs: &[LandmarkObservation],
    landmarks: &[Vec3],
    offsets: &[ViewOffset],
    trajs: &[Trajectory],
) -> Result<BaLoss> {
    check_views(trajs, offsets)?;
    let ali = aligned(trajs, offsets)?;
    let mut sums = vec![0.0; trajs.len()];
    let mut counts = vec![0usize; trajs.len()];
    let mut dropped = 0;
    for o in obs {
        let traj = ali.get(o.view).ok_or_else(|| Error::InvalidInput(format!("unknown view {}", o.view)))?;
        let x = landmarks
            .get(o.landmark)
            .ok_or_else(|| Error::InvalidInput(format!("unknown landmark {}", o.landmark)))?;
        match crate::geom::project(x, traj.pose(o.frame)?, &traj.intrinsics) {
            Ok(q) => {
                sums[o.view] += (o.pixel - q).norm_squared();
                counts[o.view] += 1;
            }
            Err(Error::BehindCamera { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if dropped > 0 {
        log::warn!("bundle-adjustment loss: {dropped} observations behind the camera were excluded");
    }
    Ok(BaLoss {
        per_view: sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
            .collect(),
        dropped,
    })
}

/// Weighted composite and its per-term breakdown (unweighted values kept
/// alongside the weighted contributions).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub track: f64,
    pub chamfer: Vec<f64>,
    pub ba: Vec<f64>,
    pub weighted_track: f64,
    pub weighted_chamfer: Vec<f64>,
    pub weighted_ba: Vec<f64>,
    pub total: f64,
    pub ba_dropped: usize,
}

pub fn composite_loss(w: &LossWeights, track: Option<f64>, chamfer: &[f64], ba: &[f64]) -> Result<LossBreakdown> {
    w.validate()?;
    let weighted_track = track.map_or(0.0, |t| w.track * t);
    let weighted_chamfer: Vec<f64> = chamfer.iter().map(|c| w.chamfer * c).collect();
    let weighted_ba: Vec<f64> = ba.iter().map(|b| w.ba * b).collect();
    let total = weighted_track + weighted_chamfer.iter().sum::<f64>() + weighted_ba.iter().sum::<f64>();
    Ok(LossBreakdown {
        track: track.unwrap_or(0.0),
        chamfer: chamfer.to_vec(),
        ba: ba.to_vec(),
        weighted_track,
        weighted_chamfer,
        weighted_ba,
        total,
        ba_dropped: 0,
    })
}

/// All inputs of the calibration objective. Trajectories, local clouds and
/// landmark observations are per view, in each view's own frame; landmarks
/// and the global cloud are in the scene frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationInputs {
    pub trajectories: Vec<Trajectory>,
    pub tracks: Vec<TrackedCorrespondence>,
    pub landmarks: Vec<Vec3>,
    pub observations: Vec<LandmarkObservation>,
    pub local_clouds: Vec<PointCloud>,
    pub global_cloud: PointCloud,
}

struct TrackTerm {
    points: [Vec3; 2],
    weight: f64,
}

struct BaTerm {
    landmark: Vec3,
    pose: Pose,
    k: Intrinsics,
    pixel: Vec2,
}

/// Precomputed calibration objective with analytic gradients w.r.t.
/// `[yaw, tx, ty, tz]` per view.
///
/// Chamfer nearest-neighbour assignments are recomputed at every
/// evaluation and treated as constant for the gradient.
pub struct CalibrationObjective {
    n_views: usize,
    tracks: Vec<TrackTerm>,
    ba: Vec<Vec<BaTerm>>,
    local_clouds: Vec<Vec<Vec3>>,
    global: Vec<Vec3>,
    global_tree: Option<KdTree>,
    weights: LossWeights,
    use_track: bool,
}

impl CalibrationObjective {
    /// `views` selects which input views take part, in order; the track
    /// term is active only when both views 0 and 1 are selected and its
    /// weight is positive.
    pub fn new(inputs: &CalibrationInputs, weights: LossWeights, views: &[usize]) -> Result<Self> {
        weights.validate()?;
        let nv = inputs.trajectories.len();
        if views.is_empty() || views.iter().any(|v| *v >= nv) {
            return Err(Error::InvalidInput(format!("view selection {views:?} out of range")));
        }
        if !inputs.local_clouds.is_empty() && inputs.local_clouds.len() != nv {
            return Err(Error::SizeMismatch {
                what: "local clouds vs views",
                left: inputs.local_clouds.len(),
                right: nv,
            });
        }
        let use_track = weights.track > 0.0 && views.len() >= 2 && views[0] == 0 && views[1] == 1;
        let mut tracks = Vec::new();
        if use_track {
            if inputs.tracks.is_empty() {
                return Err(Error::EmptyCorrespondences);
            }
            for c in &inputs.tracks {
                c.validate()?;
                let mut pts = [Vec3::zeros(); 2];
                for v in 0..2 {
                    let t = &inputs.trajectories[v];
                    pts[v] = backproject(&c.pixel[v], c.depth[v], t.pose(c.frame)?, &t.intrinsics)?;
                }
                tracks.push(TrackTerm {
                    points: pts,
                    weight: c.weight(),
                });
            }
        }
        let mut ba: Vec<Vec<BaTerm>> = views.iter().map(|_| Vec::new()).collect();
        if weights.ba > 0.0 {
            for o in &inputs.observations {
                let Some(slot) = views.iter().position(|v| *v == o.view) else {
                    continue;
                };
                let t = &inputs.trajectories[o.view];
                let landmark = *inputs
                    .landmarks
                    .get(o.landmark)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown landmark {}", o.landmark)))?;
                ba[slot].push(BaTerm {
                    landmark,
                    pose: *t.pose(o.frame)?,
                    k: t.intrinsics,
                    pixel: o.pixel,
                });
            }
        }
        let use_chamfer = weights.chamfer > 0.0;
        let local_clouds: Vec<Vec<Vec3>> = if use_chamfer {
            if inputs.global_cloud.is_empty() || inputs.local_clouds.is_empty() {
                return Err(Error::EmptyCloud);
            }
            views
                .iter()
                .map(|v| {
                    let c = &inputs.local_clouds[*v];
                    if c.is_empty() {
                        Err(Error::EmptyCloud)
                    } else {
                        Ok(c.points.clone())
                    }
                })
                .collect::<Result<_>>()?
        } else {
            views.iter().map(|_| Vec::new()).collect()
        };
        let global_tree = use_chamfer.then(|| KdTree::new(&inputs.global_cloud.points));
        Ok(Self {
            n_views: views.len(),
            tracks,
            ba,
            local_clouds,
            global: inputs.global_cloud.points.clone(),
            global_tree,
            weights,
            use_track,
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    /// Packs offsets as `[yaw, tx, ty, tz]` per view.
    pub fn pack(offsets: &[ViewOffset]) -> Vec<f64> {
        offsets
            .iter()
            .flat_map(|o| [o.yaw, o.translation.x, o.translation.y, o.translation.z])
            .collect()
    }

    pub fn unpack(x: &[f64]) -> Vec<ViewOffset> {
        x.chunks_exact(4)
            .map(|c| ViewOffset::new(c[0], Vec3::new(c[1], c[2], c[3])))
            .collect()
    }

    pub fn evaluate(&self, offsets: &[ViewOffset]) -> Result<LossBreakdown> {
        Ok(self.evaluate_impl(offsets, false)?.0)
    }

    pub fn evaluate_with_gradient(&self, offsets: &[ViewOffset]) -> Result<(LossBreakdown, Vec<f64>)> {
        let (b, g) = self.evaluate_impl(offsets, true)?;
        Ok((b, g.expect("gradient requested")))
    }

    fn evaluate_impl(&self, offsets: &[ViewOffset], want_grad: bool) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        if offsets.len() != self.n_views {
            return Err(Error::SizeMismatch {
                what: "offsets vs views",
                left: offsets.len(),
                right: self.n_views,
            });
        }
        let rot: Vec<Mat3> = offsets.iter().map(|o| yaw_rotation(o.yaw)).collect();
        let drot: Vec<Mat3> = offsets.iter().map(|o| yaw_rotation_derivative(o.yaw)).collect();
        let mut grad = vec![0.0; 4 * self.n_views];
        let add_point_grad = |grad: &mut [f64], v: usize, g: &Vec3, local: &Vec3| {
            grad[4 * v] += g.dot(&(drot[v] * local));
            grad[4 * v + 1] += g.x;
            grad[4 * v + 2] += g.y;
            grad[4 * v + 3] += g.z;
        };

        let track = if self.use_track {
            let n = self.tracks.len() as f64;
            let mut sum = 0.0;
            for t in &self.tracks {
                let q0 = rot[0] * t.points[0] + offsets[0].translation;
                let q1 = rot[1] * t.points[1] + offsets[1].translation;
                let r = q0 - q1;
                sum += t.weight * r.norm_squared();
                if want_grad {
                    let g = (2.0 * self.weights.track * t.weight / n) * r;
                    add_point_grad(&mut grad, 0, &g, &t.points[0]);
                    add_point_grad(&mut grad, 1, &(-g), &t.points[1]);
                }
            }
            Some(sum / n)
        } else {
            None
        };

        let mut chamfer_terms = Vec::new();
        if let Some(tree) = &self.global_tree {
            for v in 0..self.n_views {
                let local = &self.local_clouds[v];
                let moved: Vec<Vec3> = local.iter().map(|p| rot[v] * p + offsets[v].translation).collect();
                let moved_tree = KdTree::new(&moved);
                let fwd: Vec<(usize, f64)> = moved
                    .par_iter()
                    .map(|p| tree.nearest(p).expect("non-empty"))
                    .collect();
                let bwd: Vec<(usize, f64)> = self
                    .global
                    .par_iter()
                    .map(|g| moved_tree.nearest(g).expect("non-empty"))
                    .collect();
                let (nl, ng) = (moved.len() as f64, self.global.len() as f64);
                let value = fwd.iter().map(|(_, d)| d).sum::<f64>() / nl
                    + bwd.iter().map(|(_, d)| d).sum::<f64>() / ng;
                chamfer_terms.push(value);
                if want_grad {
                    let mut pg = vec![Vec3::zeros(); moved.len()];
                    for (i, (j, _)) in fwd.iter().enumerate() {
                        pg[i] += (2.0 / nl) * (moved[i] - self.global[*j]);
                    }
                    for (j, (i, _)) in bwd.iter().enumerate() {
                        pg[*i] += (2.0 / ng) * (moved[*i] - self.global[j]);
                    }
                    for (i, g) in pg.iter().enumerate() {
                        add_point_grad(&mut grad, v, &(self.weights.chamfer * g), &local[i]);
                    }
                }
            }
        } else {
            chamfer_terms = vec![0.0; self.n_views];
        }

        let mut ba_terms = Vec::with_capacity(self.n_views);
        let mut dropped = 0;
        for v in 0..self.n_views {
            let terms = &self.ba[v];
            let rt = rot[v].transpose();
            let drt = drot[v].transpose();
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut local_grads: Vec<(Vec3, Vec3)> = Vec::new();
            for b in terms {
                let rel = b.landmark - offsets[v].translation;
                let y = rt * rel;
                let pc = b.pose.rotation * y + b.pose.translation;
                if pc.z <= MIN_DEPTH {
                    dropped += 1;
                    continue;
                }
                let q = b.k.project_camera_point(&pc);
                let e = b.pixel - q;
                sum += e.norm_squared();
                count += 1;
                if want_grad {
                    let iz = 1.0 / pc.z;
                    // d(pixel)/d(pc), rows u and v
                    let du = Vec3::new(b.k.fx * iz, 0.0, -b.k.fx * pc.x * iz * iz);
                    let dv = Vec3::new(0.0, b.k.fy * iz, -b.k.fy * pc.y * iz * iz);
                    let dl_dpc = -2.0 * (e.x * du + e.y * dv);
                    let dl_dy = b.pose.rotation.transpose() * dl_dpc;
                    local_grads.push((dl_dy, drt * rel));
                }
            }
            let value = if count > 0 { sum / count as f64 } else { 0.0 };
            ba_terms.push(value);
            if want_grad && count > 0 {
                let s = self.weights.ba / count as f64;
                for (dl_dy, dy_dyaw) in local_grads {
                    grad[4 * v] += s * dl_dy.dot(&dy_dyaw);
                    let dt = -(rot[v] * dl_dy) * s;
                    grad[4 * v + 1] += dt.x;
                    grad[4 * v + 2] += dt.y;
                    grad[4 * v + 3] += dt.z;
                }
            }
        }
        if dropped > 0 {
            log::debug!("bundle-adjustment loss: {dropped} observations behind the camera excluded");
        }

        let mut breakdown = composite_loss(&self.weights, track, &chamfer_terms, &ba_terms)?;
        breakdown.ba_dropped = dropped;
        Ok((breakdown, want_grad.then_some(grad)))
    }
}
