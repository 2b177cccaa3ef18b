//! Truncated signed-distance fusion of depth frames and surface extraction.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Pose, Vec2, Vec3};
use crate::kdtree::KdTree;
use crate::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use crate::mesh::TriangleMesh;

/// Depth beyond this range is discarded when a frame is ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneClass {
    Indoor,
    Outdoor,
}

impl SceneClass {
    pub fn max_depth(&self) -> f64 {
        match self {
            SceneClass::Indoor => 3.5,
            SceneClass::Outdoor => 5.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SceneClass::Indoor => "indoor",
            SceneClass::Outdoor => "outdoor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(SceneClass::Indoor),
            "outdoor" => Ok(SceneClass::Outdoor),
            _ => Err(Error::InvalidInput(format!("unknown scene class {s:?}"))),
        }
    }
}

/// Row-major z-depth raster in meters; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::SizeMismatch {
                what: "depth pixels vs raster size",
                left: data.len(),
                right: width as usize * height as usize,
            });
        }
        if data.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidInput("depth must be finite and non-negative".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[(v * self.width + u) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    depth: DepthImage,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub scene: SceneClass,
}

impl DepthFrame {
    /// Depth past the scene class's range is zeroed here, so it never
    /// reaches the volume.
    pub fn new(mut depth: DepthImage, pose: Pose, intrinsics: Intrinsics, scene: SceneClass) -> Result<Self> {
        intrinsics.validate()?;
        if depth.width != intrinsics.width || depth.height != intrinsics.height {
            return Err(Error::InvalidInput(format!(
                "depth raster {}x{} does not match intrinsics {}x{}",
                depth.width, depth.height, intrinsics.width, intrinsics.height
            )));
        }
        let max = scene.max_depth() as f32;
        for d in &mut depth.data {
            if *d > max {
                *d = 0.0;
            }
        }
        Ok(Self {
            depth,
            pose,
            intrinsics,
            scene,
        })
    }

    pub fn depth(&self) -> &DepthImage {
        &self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    sdf: Vec<f32>,
    weight: Vec<f32>,
}

pub const DEFAULT_VOXEL_SIZE: f64 = 0.02;
pub const TRUNCATION_VOXELS: f64 = 4.0;

impl TsdfVolume {
    /// Volume whose voxel centers are `origin + voxel_size · (i, j, k)`.
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        Self::with_truncation(origin, voxel_size, dims, TRUNCATION_VOXELS * voxel_size)
    }

    pub fn with_truncation(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !(truncation > 0.0) || dims.iter().any(|d| *d < 2) {
            return Err(Error::InvalidInput(format!(
                "invalid volume: voxel {voxel_size}, truncation {truncation}, dims {dims:?}"
            )));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidInput("volume too large".into()))?;
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            sdf: vec![0.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Smallest volume covering the axis-aligned box `[lo, hi]`.
    pub fn covering(lo: Vec3, hi: Vec3, voxel_size: f64) -> Result<Self> {
        let ext = hi - lo;
        let dims = [0, 1, 2].map(|i| (ext[i] / voxel_size).ceil().max(1.0) as usize + 1);
        Self::new(lo, voxel_size, dims)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + self.voxel_size * Vec3::new(i as f64, j as f64, k as f64)
    }

    pub fn sdf(&self, i: usize, j: usize, k: usize) -> f32 {
        self.sdf[self.index(i, j, k)]
    }

    pub fn weight(&self, i: usize, j: usize, k: usize) -> f32 {
        self.weight[self.index(i, j, k)]
    }

    pub fn sdf_values(&self) -> &[f32] {
        &self.sdf
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    /// Overwrites one voxel (clamped to the truncation band).
    pub fn set(&mut self, i: usize, j: usize, k: usize, sdf: f64, weight: f32) {
        let idx = self.index(i, j, k);
        self.sdf[idx] = sdf.clamp(-self.truncation, self.truncation) as f32;
        self.weight[idx] = weight;
    }

    /// Weighted running-average update of the projective signed distance,
    /// clamped to the truncation margin in front of the observed surface.
    /// Voxels more than one margin behind it are left alone.
    pub fn integrate(&mut self, frame: &DepthFrame) {
        let [nx, ny, _] = self.dims;
        let slab = nx * ny;
        let origin = self.origin;
        let vs = self.voxel_size;
        let trunc = self.truncation;
        let k = frame.intrinsics;
        let pose = frame.pose;
        let depth = &frame.depth;
        self.sdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(kz, (sdf, weight))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + vs * Vec3::new(i as f64, j as f64, kz as f64);
                        let pc = pose.to_camera(&p);
                        if pc.z <= 1e-6 {
                            continue;
                        }
                        let q: Vec2 = k.project_camera_point(&pc);
                        let (u, v) = (q.x.round(), q.y.round());
                        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
                            continue;
                        }
                        let d = depth.get(u as u32, v as u32) as f64;
                        if d <= 0.0 {
                            continue;
                        }
                        let s = d - pc.z;
                        if s < -trunc {
                            continue;
                        }
                        let s = s.min(trunc);
                        let idx = i + nx * j;
                        let w = weight[idx] as f64;
                        sdf[idx] = ((w * sdf[idx] as f64 + s) / (w + 1.0)) as f32;
                        weight[idx] = (w + 1.0) as f32;
                    }
                }
            });
    }

    /// Marching cubes over every cell whose eight corners have been
    /// observed. Vertices on shared edges are welded.
    pub fn extract_mesh(&self) -> Result<TriangleMesh> {
        const CORNERS: [[usize; 3]; 8] = [
            [0, 0, 0],
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
            [0, 0, 1],
            [1, 0, 1],
            [1, 1, 1],
            [0, 1, 1],
        ];
        const EDGES: [[usize; 2]; 12] = [
            [0, 1],
            [1, 2],
            [2, 3],
            [3, 0],
            [4, 5],
            [5, 6],
            [6, 7],
            [7, 4],
            [0, 4],
            [1, 5],
            [2, 6],
            [3, 7],
        ];
        let [nx, ny, nz] = self.dims;
        let mut mesh = TriangleMesh::default();
        let mut welded: HashMap<(usize, usize), u32> = HashMap::new();
        for kz in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut vals = [0.0f64; 8];
                    let mut ids = [0usize; 8];
                    let mut observed = true;
                    let mut case = 0usize;
                    for (c, o) in CORNERS.iter().enumerate() {
                        let idx = self.index(i + o[0], j + o[1], kz + o[2]);
                        if self.weight[idx] <= 0.0 {
                            observed = false;
                            break;
                        }
                        ids[c] = idx;
                        vals[c] = self.sdf[idx] as f64;
                        if vals[c] < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if !observed || EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let mut edge_vertex = [u32::MAX; 12];
                    for (e, [a, b]) in EDGES.iter().enumerate() {
                        if EDGE_TABLE[case] & (1 << e) == 0 {
                            continue;
                        }
                        let key = (ids[*a].min(ids[*b]), ids[*a].max(ids[*b]));
                        edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                            let pa = self.voxel_center(i + CORNERS[*a][0], j + CORNERS[*a][1], kz + CORNERS[*a][2]);
                            let pb = self.voxel_center(i + CORNERS[*b][0], j + CORNERS[*b][1], kz + CORNERS[*b][2]);
                            let t = vals[*a] / (vals[*a] - vals[*b]);
                            mesh.vertices.push(pa + t * (pb - pa));
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    for tri in TRIANGLE_TABLE[case].chunks(3) {
                        if tri[0] < 0 {
                            break;
                        }
                        // Table winding is clockwise seen from the positive
                        // side; reverse it so normals point out of the surface.
                        mesh.faces.push([
                            edge_vertex[tri[0] as usize],
                            edge_vertex[tri[2] as usize],
                            edge_vertex[tri[1] as usize],
                        ]);
                    }
                }
            }
        }
        if mesh.faces.is_empty() {
            return Err(Error::EmptySurface);
        }
        Ok(mesh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanConfig {
    /// Components with fewer than this fraction of all faces are dropped.
    pub min_component_fraction: f64,
    /// Neighbours used for the mean nearest-neighbour distance.
    pub outlier_neighbors: usize,
    /// Vertices whose mean neighbour distance exceeds mean + k·σ are dropped.
    pub outlier_sigma: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            min_component_fraction: 0.05,
            outlier_neighbors: 8,
            outlier_sigma: 3.0,
        }
    }
}

/// Drops statistical outlier vertices (with their faces), then connected
/// components holding less than the configured share of faces.
pub fn clean_mesh(mesh: &TriangleMesh, cfg: &CleanConfig) -> TriangleMesh {
    if mesh.faces.is_empty() {
        return mesh.clone();
    }
    let mut out = mesh.filter_faces(|_, _| true);
    let n = out.vertices.len();
    if n > cfg.outlier_neighbors + 1 && cfg.outlier_neighbors > 0 {
        let tree = KdTree::new(&out.vertices);
        let mean_dist: Vec<f64> = out
            .vertices
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let nn = tree.k_nearest(p, cfg.outlier_neighbors + 1);
                let ds: Vec<f64> = nn.iter().filter(|(j, _)| *j != i).take(cfg.outlier_neighbors).map(|(_, d)| d.sqrt()).collect();
                ds.iter().sum::<f64>() / ds.len() as f64
            })
            .collect();
        let mu = mean_dist.iter().sum::<f64>() / n as f64;
        let sigma = (mean_dist.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        let limit = mu + cfg.outlier_sigma * sigma;
        let bad: Vec<bool> = mean_dist.iter().map(|d| *d > limit).collect();
        out = out.filter_faces(|_, f| f.iter().all(|v| !bad[*v as usize]));
    }
    let (labels, count) = out.face_components();
    let mut sizes = vec![0usize; count];
    for l in &labels {
        sizes[*l] += 1;
    }
    let total = out.faces.len() as f64;
    out.filter_faces(|i, _| sizes[labels[i]] as f64 >= cfg.min_component_fraction * total)
}
