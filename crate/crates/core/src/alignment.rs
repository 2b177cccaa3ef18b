//! Closed-form alignment of paired point sets: full similarity Procrustes,
//! the yaw-only variant that keeps a gravity-aligned frame, trajectory
//! offsets, chunk stitching and median-ratio metric scale.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::geom::{yaw_rotation, Mat3, PointCloud, SimilarityTransform, Trajectory, Vec3};

/// Paired points, `target[i] ≈ s R source[i] + t`, with optional weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub source: Vec<Vec3>,
    pub target: Vec<Vec3>,
    pub weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(source: Vec<Vec3>, target: Vec<Vec3>) -> Result<Self> {
        Self::build(source, target, None)
    }

    pub fn weighted(source: Vec<Vec3>, target: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        Self::build(source, target, Some(weights))
    }

    fn build(source: Vec<Vec3>, target: Vec<Vec3>, weights: Option<Vec<f64>>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::SizeMismatch {
                what: "source vs target",
                left: source.len(),
                right: target.len(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != source.len() {
                return Err(Error::SizeMismatch {
                    what: "weights vs points",
                    left: w.len(),
                    right: source.len(),
                });
            }
            if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput("weights must lie in [0, 1]".into()));
            }
            if !(w.iter().sum::<f64>() > 0.0) {
                return Err(Error::InvalidInput("weights sum to zero".into()));
            }
        }
        Ok(Self {
            source,
            target,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn centroids(&self) -> (Vec3, Vec3, f64) {
        let mut sx = Vec3::zeros();
        let mut sy = Vec3::zeros();
        let mut sw = 0.0;
        for i in 0..self.len() {
            let w = self.weight(i);
            sx += w * self.source[i];
            sy += w * self.target[i];
            sw += w;
        }
        (sx / sw, sy / sw, sw)
    }
}

/// `Σ wᵢ ‖yᵢ − (s R xᵢ + t)‖²`.
pub fn weighted_residual(c: &CorrespondenceSet, t: &SimilarityTransform) -> f64 {
    (0..c.len())
        .map(|i| c.weight(i) * (c.target[i] - t.apply(&c.source[i])).norm_squared())
        .sum()
}

/// Weighted Umeyama/Procrustes: minimizes `Σ wᵢ ‖yᵢ − (s R xᵢ + t)‖²`
/// with `det R = +1`. With `with_scale = false` the scale is pinned to 1.
pub fn procrustes_similarity(c: &CorrespondenceSet, with_scale: bool) -> Result<SimilarityTransform> {
    if c.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} correspondences, at least 3 required",
            c.len()
        )));
    }
    let (mx, my, sw) = c.centroids();
    let mut h = Mat3::zeros();
    let mut cov = Mat3::zeros();
    let mut var_x = 0.0;
    for i in 0..c.len() {
        let w = c.weight(i);
        let xc = c.source[i] - mx;
        let yc = c.target[i] - my;
        h += w * xc * yc.transpose();
        cov += w * xc * xc.transpose();
        var_x += w * xc.norm_squared();
    }
    let eig = SymmetricEigen::new(cov / sw);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 1e-24) || ev[1] <= 1e-14 * ev[0] {
        return Err(Error::DegenerateConfiguration(
            "source points are coincident or collinear".into(),
        ));
    }

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let (imin, _) = sv.argmin();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::DegenerateConfiguration(
            "cross-covariance has rank < 2".into(),
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut s_diag = Vec3::new(1.0, 1.0, 1.0);
    if d < 0.0 {
        s_diag[imin] = -1.0;
    }
    let rotation = v * Mat3::from_diagonal(&s_diag) * u.transpose();
    let scale = if with_scale {
        let tr: f64 = (0..3).map(|i| sv[i] * s_diag[i]).sum();
        tr / var_x
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration("non-positive scale".into()));
    }
    let translation = my - scale * (rotation * mx);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Procrustes restricted to rotations about z. The yaw has a closed form
/// from the xy cross-covariance; translation and scale follow from the
/// weighted centroids.
pub fn procrustes_yaw(c: &CorrespondenceSet, with_scale: bool) -> Result<SimilarityTransform> {
    if c.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} correspondences, at least 2 required",
            c.len()
        )));
    }
    let (mx, my, sw) = c.centroids();
    let (mut a, mut b, mut zz, mut var_x, mut var_xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..c.len() {
        let w = c.weight(i);
        let xc = c.source[i] - mx;
        let yc = c.target[i] - my;
        a += w * (xc.x * yc.x + xc.y * yc.y);
        b += w * (xc.x * yc.y - xc.y * yc.x);
        zz += w * xc.z * yc.z;
        var_x += w * xc.norm_squared();
        var_xy += w * (xc.x * xc.x + xc.y * xc.y);
    }
    if (var_xy / sw).sqrt() <= 1e-9 {
        return Err(Error::DegenerateConfiguration(
            "source has no spread in the xy plane".into(),
        ));
    }
    let yaw = b.atan2(a);
    let rotation = yaw_rotation(yaw);
    let scale = if with_scale {
        (a * yaw.cos() + b * yaw.sin() + zz) / var_x
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration("non-positive scale".into()));
    }
    let translation = my - scale * (rotation * mx);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Moves a trajectory into the frame reached by the rigid world remap
/// `offset`: each camera center `c` becomes `R_off c + T_off` and each
/// camera orientation is rotated by `R_off`.
pub fn apply_offset_to_trajectory(traj: &Trajectory, offset: &SimilarityTransform) -> Result<Trajectory> {
    if (offset.scale - 1.0).abs() > 1e-12 {
        return Err(Error::ScaleNotUnity(offset.scale));
    }
    Ok(traj.map_poses(|p| p.with_world_remap(&offset.rotation, &offset.translation)))
}

/// A chunk of a long monocular reconstruction: its own trajectory and
/// optionally its per-frame point maps stacked frame-major (every frame
/// contributes the same number of points, in pixel order).
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub trajectory: Trajectory,
    pub cloud: Option<PointCloud>,
}

impl Chunk {
    fn points_per_frame(&self) -> Option<usize> {
        let cloud = self.cloud.as_ref()?;
        let n = self.trajectory.len();
        (n > 0 && cloud.len() % n == 0 && !cloud.is_empty()).then(|| cloud.len() / n)
    }
}

/// Frames shared by chunk `k-1` (starting at `prev_start`) and chunk `k`
/// (starting at `next_start`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkOverlap {
    pub prev_start: usize,
    pub next_start: usize,
    pub len: usize,
}

/// Result of stitching: `per_chunk[k]` maps chunk `k` into chunk `k-1`,
/// `cumulative[k]` maps chunk `k` into chunk 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkAlignment {
    pub per_chunk: Vec<SimilarityTransform>,
    pub cumulative: Vec<SimilarityTransform>,
}

impl ChunkAlignment {
    /// Chunk `k`'s trajectory expressed in chunk 0's frame.
    pub fn align_trajectory(&self, k: usize, traj: &Trajectory) -> Trajectory {
        let sim = self.cumulative[k];
        traj.map_poses(|p| p.with_world_similarity(&sim))
    }
}

pub fn stitch_chunks(chunks: &[Chunk], overlaps: &[ChunkOverlap], with_scale: bool) -> Result<ChunkAlignment> {
    if chunks.is_empty() {
        return Err(Error::EmptyInput("no chunks"));
    }
    if overlaps.len() + 1 != chunks.len() {
        return Err(Error::SizeMismatch {
            what: "overlaps vs chunk pairs",
            left: overlaps.len(),
            right: chunks.len().saturating_sub(1),
        });
    }
    let mut per_chunk = vec![SimilarityTransform::identity()];
    for (k, ov) in overlaps.iter().enumerate() {
        let (prev, next) = (&chunks[k], &chunks[k + 1]);
        if ov.len < 3
            || ov.prev_start + ov.len > prev.trajectory.len()
            || ov.next_start + ov.len > next.trajectory.len()
        {
            return Err(Error::InsufficientOverlap {
                prev: k,
                next: k + 1,
                frames: ov.len,
            });
        }
        let mut source = Vec::new();
        let mut target = Vec::new();
        for i in 0..ov.len {
            source.push(next.trajectory.frames[ov.next_start + i].pose.center());
            target.push(prev.trajectory.frames[ov.prev_start + i].pose.center());
        }
        if let (Some(mp), Some(mn)) = (prev.points_per_frame(), next.points_per_frame()) {
            if mp == mn {
                let (pc, nc) = (prev.cloud.as_ref().unwrap(), next.cloud.as_ref().unwrap());
                for i in 0..ov.len {
                    let (pf, nf) = (ov.prev_start + i, ov.next_start + i);
                    source.extend_from_slice(&nc.points[nf * mn..(nf + 1) * mn]);
                    target.extend_from_slice(&pc.points[pf * mp..(pf + 1) * mp]);
                }
            }
        }
        let set = CorrespondenceSet::new(source, target)?;
        per_chunk.push(procrustes_similarity(&set, with_scale)?);
    }
    let mut cumulative = vec![SimilarityTransform::identity()];
    for k in 1..per_chunk.len() {
        let next = cumulative[k - 1].compose(&per_chunk[k]);
        cumulative.push(next);
    }
    Ok(ChunkAlignment {
        per_chunk,
        cumulative,
    })
}

/// Lower median of `numerator[i] / denominator[i]`.
pub fn median_ratio(numerator: &[f64], denominator: &[f64]) -> Result<f64> {
    if numerator.len() != denominator.len() {
        return Err(Error::SizeMismatch {
            what: "depth arrays",
            left: numerator.len(),
            right: denominator.len(),
        });
    }
    if numerator.is_empty() {
        return Err(Error::EmptyInput("depth arrays are empty"));
    }
    if let Some(bad) = numerator
        .iter()
        .chain(denominator)
        .find(|v| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::NonPositiveDepth(*bad));
    }
    let mut ratios: Vec<f64> = numerator
        .iter()
        .zip(denominator)
        .map(|(n, d)| n / d)
        .collect();
    let mid = (ratios.len() - 1) / 2;
    let (_, m, _) = ratios.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m)
}

/// Factor converting relative depths into meters: lower median of
/// `z_ref / z_rel`. The reciprocal direction (relative units per meter) is
/// `median_ratio(depth_relative, depth_reference)`.
pub fn metric_scale(depth_reference: &[f64], depth_relative: &[f64]) -> Result<f64> {
    median_ratio(depth_reference, depth_relative)
}
