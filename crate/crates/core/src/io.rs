//! On-disk formats. JSON documents are plain serde records that mirror the
//! files field for field, so reading and rewriting a file reproduces it byte
//! for byte; conversions to the library types live next to each record.
//! Clouds and meshes are ASCII PLY, depth rasters are 16-bit millimeter PNG
//! or raw little-endian f32.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{DepthFrame, DepthImage, SceneClass};
use crate::geom::{Intrinsics, PointCloud, Pose, TimedPose, Trajectory, Vec2, Vec3};
use crate::losses::{CalibrationInputs, LandmarkObservation, TrackedCorrespondence, ViewOffset};
use crate::mesh::TriangleMesh;
use crate::metrics::DepthSample;
use crate::motion_fit::{ContactAnnotation, ContactMarker};
use crate::skeleton::{FramePose, SkeletonParams, JOINT_NAMES};
use crate::triangulator::{Joint3D, JointStatus, Keypoint2DFrame, Keypoint3DFrame};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn a3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn finite3(v: &Vec3) -> Option<[f64; 3]> {
    v.iter().all(|x| x.is_finite()).then(|| a3(v))
}

// ---------------------------------------------------------------- poses

/// World-to-camera pose: `x_cam = R x_world + t`, R as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation_xyzw: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> Self {
        Self {
            rotation_xyzw: p.quaternion_xyzw(),
            translation: a3(&p.translation),
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        Pose::from_quaternion_xyzw(self.rotation_xyzw, v3(self.translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFrameRecord {
    /// Seconds.
    pub timestamp: f64,
    pub rotation_xyzw: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub view_id: String,
    pub intrinsics: Intrinsics,
    pub frames: Vec<TrajectoryFrameRecord>,
}

impl TrajectoryFile {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            view_id: t.view_id.clone(),
            intrinsics: t.intrinsics,
            frames: t
                .frames
                .iter()
                .map(|f| {
                    let p = PoseRecord::from_pose(&f.pose);
                    TrajectoryFrameRecord {
                        timestamp: f.timestamp,
                        rotation_xyzw: p.rotation_xyzw,
                        translation: p.translation,
                    }
                })
                .collect(),
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                Ok(TimedPose {
                    timestamp: f.timestamp,
                    pose: Pose::from_quaternion_xyzw(f.rotation_xyzw, v3(f.translation))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(self.view_id.clone(), frames, self.intrinsics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationRecord {
    pub frame: usize,
    pub rotation_xyzw: [f64; 4],
    pub translation: [f64; 3],
}

/// World poses of a view's registered keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationsFile {
    pub view_id: String,
    pub frames: Vec<RegistrationRecord>,
}

impl RegistrationsFile {
    pub fn from_registrations(view_id: &str, regs: &[(usize, Pose)]) -> Self {
        Self {
            view_id: view_id.to_string(),
            frames: regs
                .iter()
                .map(|(frame, p)| {
                    let r = PoseRecord::from_pose(p);
                    RegistrationRecord {
                        frame: *frame,
                        rotation_xyzw: r.rotation_xyzw,
                        translation: r.translation,
                    }
                })
                .collect(),
        }
    }

    pub fn to_registrations(&self) -> Result<Vec<(usize, Pose)>> {
        self.frames
            .iter()
            .map(|r| Ok((r.frame, Pose::from_quaternion_xyzw(r.rotation_xyzw, v3(r.translation))?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetRecord {
    /// Radians about +z.
    pub yaw: f64,
    pub translation: [f64; 3],
}

/// Per-view yaw + translation maps from each view's frame into the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetsFile {
    pub views: Vec<String>,
    pub offsets: Vec<OffsetRecord>,
}

impl OffsetsFile {
    pub fn new(views: Vec<String>, offsets: &[ViewOffset]) -> Self {
        Self {
            views,
            offsets: offsets
                .iter()
                .map(|o| OffsetRecord {
                    yaw: o.yaw,
                    translation: a3(&o.translation),
                })
                .collect(),
        }
    }

    pub fn to_offsets(&self) -> Result<Vec<ViewOffset>> {
        if self.views.len() != self.offsets.len() {
            return Err(Error::SizeMismatch {
                what: "offset view ids vs offsets",
                left: self.views.len(),
                right: self.offsets.len(),
            });
        }
        Ok(self.offsets.iter().map(|o| ViewOffset::new(o.yaw, v3(o.translation))).collect())
    }

    /// Offset of the view named `id`.
    pub fn get(&self, id: &str) -> Result<ViewOffset> {
        let offsets = self.to_offsets()?;
        self.views
            .iter()
            .position(|v| v == id)
            .map(|i| offsets[i])
            .ok_or_else(|| Error::InvalidInput(format!("no offset for view {id:?}")))
    }
}

// ---------------------------------------------------------------- keypoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoint2DRecord {
    pub frame: usize,
    /// `[u, v, confidence]` per joint.
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoints2DFile {
    pub view_id: String,
    pub frames: Vec<Keypoint2DRecord>,
}

impl Keypoints2DFile {
    pub fn from_frames(view_id: &str, frames: &[Keypoint2DFrame]) -> Self {
        Self {
            view_id: view_id.to_string(),
            frames: frames
                .iter()
                .map(|f| Keypoint2DRecord {
                    frame: f.frame,
                    joints: f.joints.iter().map(|(q, c)| [q.x, q.y, *c]).collect(),
                })
                .collect(),
        }
    }

    /// Frames tagged with view index `view`.
    pub fn to_frames(&self, view: usize) -> Vec<Keypoint2DFrame> {
        self.frames
            .iter()
            .map(|f| Keypoint2DFrame {
                view,
                frame: f.frame,
                joints: f.joints.iter().map(|j| (Vec2::new(j[0], j[1]), j[2])).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint3DRecord {
    /// Null when the joint could not be triangulated.
    pub position: Option<[f64; 3]>,
    pub status: String,
    pub residual_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoint3DRecord {
    pub frame: usize,
    pub joints: Vec<Joint3DRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoints3DFile {
    pub frames: Vec<Keypoint3DRecord>,
}

impl Keypoints3DFile {
    pub fn from_frames(frames: &[Keypoint3DFrame]) -> Self {
        Self {
            frames: frames
                .iter()
                .map(|f| Keypoint3DRecord {
                    frame: f.frame,
                    joints: f
                        .joints
                        .iter()
                        .map(|j| Joint3DRecord {
                            position: finite3(&j.position),
                            status: j.status.as_str().to_string(),
                            residual_px: j.residual_px.is_finite().then_some(j.residual_px),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_frames(&self) -> Result<Vec<Keypoint3DFrame>> {
        self.frames
            .iter()
            .map(|f| {
                let joints = f
                    .joints
                    .iter()
                    .map(|j| {
                        let status = JointStatus::parse(&j.status)
                            .ok_or_else(|| Error::InvalidInput(format!("unknown joint status {:?}", j.status)))?;
                        let position = j.position.map_or(Vec3::repeat(f64::NAN), v3);
                        if status == JointStatus::Valid && j.position.is_none() {
                            return Err(Error::InvalidInput(format!("frame {}: valid joint without position", f.frame)));
                        }
                        Ok(Joint3D {
                            position,
                            status,
                            residual_px: j.residual_px.unwrap_or(f64::NAN),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Keypoint3DFrame { frame: f.frame, joints })
            })
            .collect()
    }
}

// ---------------------------------------------------------------- calibration inputs

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    /// Synchronized frame index.
    pub frame: usize,
    pub pixels: [[f64; 2]; 2],
    /// Meters, per view.
    pub depths: [f64; 2],
    pub confidences: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracksFile {
    pub tracks: Vec<TrackRecord>,
}

impl TracksFile {
    pub fn from_tracks(tracks: &[TrackedCorrespondence]) -> Self {
        Self {
            tracks: tracks
                .iter()
                .map(|t| TrackRecord {
                    frame: t.frame,
                    pixels: t.pixel.map(|q| [q.x, q.y]),
                    depths: t.depth,
                    confidences: t.confidence,
                })
                .collect(),
        }
    }

    pub fn to_tracks(&self) -> Result<Vec<TrackedCorrespondence>> {
        self.tracks
            .iter()
            .map(|t| {
                let c = TrackedCorrespondence {
                    frame: t.frame,
                    pixel: t.pixels.map(|q| Vec2::new(q[0], q[1])),
                    depth: t.depths,
                    confidence: t.confidences,
                };
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    /// Index of the view in the manifest.
    pub view: usize,
    pub frame: usize,
    pub landmark: usize,
    pub pixel: [f64; 2],
}

/// Fixed world landmarks and their per-view pixel observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarksFile {
    pub points: Vec<[f64; 3]>,
    pub observations: Vec<ObservationRecord>,
}

impl LandmarksFile {
    pub fn new(points: &[Vec3], observations: &[LandmarkObservation]) -> Self {
        Self {
            points: points.iter().map(a3).collect(),
            observations: observations
                .iter()
                .map(|o| ObservationRecord {
                    view: o.view,
                    frame: o.frame,
                    landmark: o.landmark,
                    pixel: [o.pixel.x, o.pixel.y],
                })
                .collect(),
        }
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| v3(*p)).collect()
    }

    pub fn observations(&self) -> Vec<LandmarkObservation> {
        self.observations
            .iter()
            .map(|o| LandmarkObservation {
                view: o.view,
                frame: o.frame,
                landmark: o.landmark,
                pixel: Vec2::new(o.pixel[0], o.pixel[1]),
            })
            .collect()
    }
}

// ---------------------------------------------------------------- skeleton, joints, contacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFrameRecord {
    /// Axis-angle per joint, entry 0 the global orientation.
    pub pose: Vec<[f64; 3]>,
    /// Pelvis position, meters.
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    /// Log bone-group scales.
    pub shape: Vec<f64>,
    pub frames: Vec<SkeletonFrameRecord>,
}

impl SkeletonFile {
    pub fn from_params(p: &SkeletonParams) -> Self {
        Self {
            shape: p.shape.clone(),
            frames: p
                .frames
                .iter()
                .map(|f| SkeletonFrameRecord {
                    pose: f.pose.iter().map(a3).collect(),
                    translation: a3(&f.translation),
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> SkeletonParams {
        SkeletonParams {
            shape: self.shape.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| FramePose {
                    pose: f.pose.iter().map(|w| v3(*w)).collect(),
                    translation: v3(f.translation),
                })
                .collect(),
        }
    }
}

/// World joint positions per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointsFile {
    pub joint_names: Vec<String>,
    /// Null marks a missing joint.
    pub frames: Vec<Vec<Option<[f64; 3]>>>,
}

impl JointsFile {
    pub fn from_joints(joints: &[Vec<Vec3>]) -> Self {
        let n = joints.first().map_or(0, Vec::len);
        let names = if n == JOINT_NAMES.len() {
            JOINT_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..n).map(|j| format!("joint_{j}")).collect()
        };
        Self {
            joint_names: names,
            frames: joints.iter().map(|f| f.iter().map(finite3).collect()).collect(),
        }
    }

    /// Missing joints come back as NaN.
    pub fn to_joints(&self) -> Vec<Vec<Vec3>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|p| p.map_or(Vec3::repeat(f64::NAN), v3)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactRecord {
    pub frame: usize,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactsFile {
    pub contacts: Vec<ContactRecord>,
}

impl ContactsFile {
    pub fn from_annotation(a: &ContactAnnotation) -> Self {
        Self {
            contacts: a
                .contacts
                .iter()
                .map(|c| ContactRecord {
                    frame: c.frame,
                    position: a3(&c.position),
                })
                .collect(),
        }
    }

    pub fn to_annotation(&self) -> ContactAnnotation {
        ContactAnnotation {
            contacts: self
                .contacts
                .iter()
                .map(|c| ContactMarker {
                    frame: c.frame,
                    position: v3(c.position),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSampleRecord {
    pub view: usize,
    pub frame: usize,
    /// Index into the joint sequence.
    pub index: usize,
    pub joint: usize,
    /// Meters.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSamplesFile {
    pub samples: Vec<DepthSampleRecord>,
}

impl DepthSamplesFile {
    pub fn from_samples(s: &[DepthSample]) -> Self {
        Self {
            samples: s
                .iter()
                .map(|s| DepthSampleRecord {
                    view: s.view,
                    frame: s.frame,
                    index: s.index,
                    joint: s.joint,
                    depth: s.depth,
                })
                .collect(),
        }
    }

    pub fn to_samples(&self) -> Vec<DepthSample> {
        self.samples
            .iter()
            .map(|s| DepthSample {
                view: s.view,
                frame: s.frame,
                index: s.index,
                joint: s.joint,
                depth: s.depth,
            })
            .collect()
    }
}

// ---------------------------------------------------------------- depth rasters

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthEncoding {
    /// 16-bit grayscale PNG, millimeters, 0 = invalid.
    Png16Mm,
    /// Row-major little-endian f32 meters, no header.
    F32Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthFrameRecord {
    pub frame: usize,
    /// Relative to the index file.
    pub file: String,
}

/// Lists one view's depth rasters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthIndexFile {
    pub encoding: DepthEncoding,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<DepthFrameRecord>,
}

pub fn write_depth(path: &Path, img: &DepthImage, encoding: DepthEncoding) -> Result<()> {
    match encoding {
        DepthEncoding::Png16Mm => write_depth_png(path, img),
        DepthEncoding::F32Le => {
            let bytes: Vec<u8> = img.data.iter().flat_map(|d| d.to_le_bytes()).collect();
            write_file(path, &bytes)
        }
    }
}

pub fn read_depth(path: &Path, encoding: DepthEncoding, width: u32, height: u32) -> Result<DepthImage> {
    let img = match encoding {
        DepthEncoding::Png16Mm => read_depth_png(path)?,
        DepthEncoding::F32Le => {
            let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
            if bytes.len() != 4 * width as usize * height as usize {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("{} bytes, expected {width}x{height} f32", bytes.len()),
                ));
            }
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            DepthImage::new(width, height, data)?
        }
    };
    if img.width != width || img.height != height {
        return Err(Error::format(
            path.display().to_string(),
            format!("raster is {}x{}, index says {width}x{height}", img.width, img.height),
        ));
    }
    Ok(img)
}

/// Millimeters, rounded; depths past 65.535 m are stored as invalid.
pub fn write_depth_png(path: &Path, img: &DepthImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len() * 2);
    for d in &img.data {
        let mm = (*d as f64 * 1000.0).round();
        let v = if mm.is_finite() && mm > 0.0 && mm <= u16::MAX as f64 { mm as u16 } else { 0 };
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        w.write_image_data(&bytes).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    }
    write_file(path, &out)
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    let bad = |m: String| Error::format(path.display().to_string(), m);
    let dec = png::Decoder::new(BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?));
    let mut reader = dec.read_info().map_err(|e| bad(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(bad(format!("expected 16-bit grayscale, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    let (w, h) = (info.width, info.height);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| bad("raster too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let data = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 1000.0)
        .collect();
    DepthImage::new(w, h, data)
}

// ---------------------------------------------------------------- PLY

/// ASCII PLY with double coordinates and, when present, a confidence
/// property.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = BufWriter::new(Vec::new());
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if cloud.confidence.is_some() {
        writeln!(out, "property double confidence")?;
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        match &cloud.confidence {
            Some(c) => writeln!(out, "{} {} {} {}", p.x, p.y, p.z, c[i])?,
            None => writeln!(out, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    write_file(path, &out.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = BufWriter::new(Vec::new());
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    writeln!(out, "element face {}\nproperty list uchar uint vertex_indices\nend_header", mesh.faces.len())?;
    for p in &mesh.vertices {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    write_file(path, &out.into_inner().map_err(|e| e.into_error())?)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    list: bool,
}

struct Ply {
    elements: Vec<PlyElement>,
    /// Data lines, split into tokens, per element.
    rows: Vec<Vec<Vec<String>>>,
}

fn parse_ply(path: &Path) -> Result<Ply> {
    let bad = |m: String| Error::format(path.display().to_string(), m);
    let mut lines = BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?).lines();
    let mut next = || -> Result<Option<String>> { Ok(lines.next().transpose()?) };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = next()?.ok_or_else(|| bad("header ends without end_header".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", ..] => return Err(bad(format!("unsupported format line {line:?}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
                list: false,
            }),
            ["property", "list", _, _, name] => {
                let e = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                e.properties.push(name.to_string());
                e.list = true;
            }
            ["property", _, name] => {
                let e = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                e.properties.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    let mut rows = Vec::new();
    for e in &elements {
        let mut r = Vec::with_capacity(e.count);
        for i in 0..e.count {
            let line = next()?.ok_or_else(|| bad(format!("{} {i} missing", e.name)))?;
            r.push(line.split_whitespace().map(str::to_string).collect());
        }
        rows.push(r);
    }
    Ok(Ply { elements, rows })
}

fn parse_num<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(path.display().to_string(), format!("bad number {s:?}")))
}

fn ply_vertices(path: &Path, ply: &Ply) -> Result<(Vec<Vec3>, Option<Vec<f64>>)> {
    let bad = |m: String| Error::format(path.display().to_string(), m);
    let k = ply
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no vertex element".into()))?;
    let props = &ply.elements[k].properties;
    let col = |n: &str| props.iter().position(|p| p == n);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex lacks x, y or z".into())),
    };
    let conf = col("confidence");
    let mut points = Vec::with_capacity(ply.rows[k].len());
    let mut confidence = conf.map(|_| Vec::with_capacity(ply.rows[k].len()));
    for (i, row) in ply.rows[k].iter().enumerate() {
        if row.len() != props.len() {
            return Err(bad(format!("vertex {i} has {} values, expected {}", row.len(), props.len())));
        }
        points.push(Vec3::new(parse_num(path, &row[x])?, parse_num(path, &row[y])?, parse_num(path, &row[z])?));
        if let (Some(c), Some(out)) = (conf, confidence.as_mut()) {
            out.push(parse_num(path, &row[c])?);
        }
    }
    Ok((points, confidence))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let ply = parse_ply(path)?;
    let (points, confidence) = ply_vertices(path, &ply)?;
    let cloud = PointCloud { points, confidence };
    cloud.validate()?;
    Ok(cloud)
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let bad = |m: String| Error::format(path.display().to_string(), m);
    let ply = parse_ply(path)?;
    let (vertices, _) = ply_vertices(path, &ply)?;
    let mut faces = Vec::new();
    if let Some(k) = ply.elements.iter().position(|e| e.name == "face" && e.list) {
        for (i, row) in ply.rows[k].iter().enumerate() {
            if row.len() != 4 || row[0] != "3" {
                return Err(bad(format!("face {i} is not a triangle")));
            }
            let mut f = [0u32; 3];
            for (j, t) in row[1..].iter().enumerate() {
                f[j] = parse_num(path, t)?;
                if f[j] as usize >= vertices.len() {
                    return Err(bad(format!("face {i} references vertex {}", f[j])));
                }
            }
            faces.push(f);
        }
    }
    Ok(TriangleMesh { vertices, faces })
}

// ---------------------------------------------------------------- chunk stitching

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkEntry {
    pub trajectory: String,
    /// Per-frame point maps stacked frame-major, same count per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapRecord {
    pub prev_start: usize,
    pub next_start: usize,
    pub len: usize,
}

/// Input of chunk stitching; paths relative to this file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StitchFile {
    #[serde(default)]
    pub with_scale: bool,
    pub chunks: Vec<ChunkEntry>,
    /// `overlaps[k]` pairs chunk `k` with chunk `k + 1`.
    pub overlaps: Vec<OverlapRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityRecord {
    pub scale: f64,
    pub rotation_xyzw: [f64; 4],
    pub translation: [f64; 3],
}

impl SimilarityRecord {
    pub fn from_transform(t: &crate::geom::SimilarityTransform) -> Self {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(t.rotation));
        Self {
            scale: t.scale,
            rotation_xyzw: [q.i, q.j, q.k, q.w],
            translation: a3(&t.translation),
        }
    }
}

/// Stitching result: `per_chunk[k]` maps chunk `k` into chunk `k - 1`,
/// `cumulative[k]` into chunk 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkTransformsFile {
    pub per_chunk: Vec<SimilarityRecord>,
    pub cumulative: Vec<SimilarityRecord>,
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: String,
    pub trajectory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<String>,
    /// Scene cloud in the view's own frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registrations: Option<String>,
    /// Depth index file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamfer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ba: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangulationOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ray_angle_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp3d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_component_fraction: Option<f64>,
}

/// Per-stage settings that override the built-in defaults; command-line
/// flags override these in turn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default)]
    pub calibration: CalibrationOverrides,
    #[serde(default)]
    pub triangulation: TriangulationOverrides,
    #[serde(default)]
    pub fit: FitOverrides,
    #[serde(default)]
    pub fusion: FusionOverrides,
}

/// A capture session. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scene_class: SceneClass,
    /// View 2's frame `frame_offset` is the same instant as view 1's frame
    /// 0; view 2 is re-indexed accordingly on load.
    #[serde(default)]
    pub frame_offset: usize,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_cloud: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contacts: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_samples: Option<String>,
    #[serde(default)]
    pub config: ConfigOverrides,
}

/// A manifest with every referenced file loaded and view 2 re-indexed so
/// that frame `i` of every view is the same instant.
#[derive(Debug, Clone)]
pub struct Session {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
    /// Synchronized streams of equal length, when every view has them.
    pub keypoints: Option<Vec<Vec<Keypoint2DFrame>>>,
    pub local_clouds: Option<Vec<PointCloud>>,
    pub registrations: Option<Vec<Vec<(usize, Pose)>>>,
    pub global_cloud: Option<PointCloud>,
    pub tracks: Option<Vec<TrackedCorrespondence>>,
    pub landmarks: Option<(Vec<Vec3>, Vec<LandmarkObservation>)>,
    pub contacts: Option<ContactAnnotation>,
    pub depth_samples: Option<Vec<DepthSample>>,
}

fn all_or_none<T>(items: Vec<Option<T>>, what: &str) -> Result<Option<Vec<T>>> {
    let n = items.iter().filter(|i| i.is_some()).count();
    if n == 0 {
        return Ok(None);
    }
    if n != items.len() {
        return Err(Error::InvalidInput(format!("{what} given for some views only")));
    }
    Ok(Some(items.into_iter().flatten().collect()))
}

impl Session {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_manifest(manifest, dir)
    }

    pub fn from_manifest(manifest: Manifest, dir: PathBuf) -> Result<Self> {
        if manifest.views.len() != 2 {
            return Err(Error::InvalidInput(format!("{} views in manifest, expected 2", manifest.views.len())));
        }
        let path = |p: &str| dir.join(p);
        let shift = |view: usize| if view == 1 { manifest.frame_offset } else { 0 };
        // maps a raw frame index of `view` to the synchronized index
        let sync = |view: usize, f: usize| f.checked_sub(shift(view));

        let mut trajectories = Vec::new();
        let mut keypoints = Vec::new();
        let mut clouds = Vec::new();
        let mut registrations = Vec::new();
        for (v, e) in manifest.views.iter().enumerate() {
            let file: TrajectoryFile = read_json(&path(&e.trajectory))?;
            if file.view_id != e.id {
                return Err(Error::format(e.trajectory.clone(), format!("view id {:?}, manifest says {:?}", file.view_id, e.id)));
            }
            let mut t = file.to_trajectory()?;
            if shift(v) >= t.len() {
                return Err(Error::FrameMisalignment(format!(
                    "frame offset {} leaves view {} without frames",
                    shift(v),
                    e.id
                )));
            }
            t.frames.drain(..shift(v));
            trajectories.push(t);

            keypoints.push(match &e.keypoints {
                Some(p) => {
                    let file: Keypoints2DFile = read_json(&path(p))?;
                    let frames = file
                        .to_frames(v)
                        .into_iter()
                        .filter_map(|mut f| {
                            f.frame = sync(v, f.frame)?;
                            Some(f)
                        })
                        .collect::<Vec<_>>();
                    Some(frames)
                }
                None => None,
            });
            clouds.push(e.cloud.as_ref().map(|p| read_cloud(&path(p))).transpose()?);
            registrations.push(match &e.registrations {
                Some(p) => {
                    let file: RegistrationsFile = read_json(&path(p))?;
                    Some(file.to_registrations()?.into_iter().filter_map(|(f, pose)| Some((sync(v, f)?, pose))).collect())
                }
                None => None,
            });
        }
        let mut keypoints = all_or_none(keypoints, "keypoints")?;
        if let Some(k) = keypoints.as_mut() {
            let n = k.iter().map(Vec::len).min().unwrap_or(0);
            for s in k.iter_mut() {
                s.truncate(n);
            }
        }

        let landmarks = match &manifest.landmarks {
            Some(p) => {
                let file: LandmarksFile = read_json(&path(p))?;
                let obs = file
                    .observations()
                    .into_iter()
                    .filter_map(|mut o| {
                        o.frame = sync(o.view, o.frame)?;
                        Some(o)
                    })
                    .collect();
                Some((file.points(), obs))
            }
            None => None,
        };
        let depth_samples = match &manifest.depth_samples {
            Some(p) => {
                let file: DepthSamplesFile = read_json(&path(p))?;
                Some(
                    file.to_samples()
                        .into_iter()
                        .filter_map(|mut s| {
                            s.frame = sync(s.view, s.frame)?;
                            Some(s)
                        })
                        .collect(),
                )
            }
            None => None,
        };
        Ok(Self {
            trajectories,
            keypoints,
            local_clouds: all_or_none(clouds, "clouds")?,
            registrations: all_or_none(registrations, "registrations")?,
            global_cloud: manifest.scene_cloud.as_ref().map(|p| read_cloud(&path(p))).transpose()?,
            tracks: match &manifest.tracks {
                Some(p) => Some(read_json::<TracksFile>(&path(p))?.to_tracks()?),
                None => None,
            },
            landmarks,
            contacts: match &manifest.contacts {
                Some(p) => Some(read_json::<ContactsFile>(&path(p))?.to_annotation()),
                None => None,
            },
            depth_samples,
            dir,
            manifest,
        })
    }

    pub fn view_ids(&self) -> Vec<String> {
        self.manifest.views.iter().map(|v| v.id.clone()).collect()
    }

    pub fn view_index(&self, id: &str) -> Option<usize> {
        self.manifest.views.iter().position(|v| v.id == id)
    }

    pub fn calibration_inputs(&self) -> Result<CalibrationInputs> {
        let missing = |what: &str| Error::InvalidInput(format!("manifest has no {what}"));
        let (landmarks, observations) = self.landmarks.clone().unwrap_or_default();
        Ok(CalibrationInputs {
            trajectories: self.trajectories.clone(),
            tracks: self.tracks.clone().unwrap_or_default(),
            landmarks,
            observations,
            local_clouds: self.local_clouds.clone().ok_or_else(|| missing("per-view clouds"))?,
            global_cloud: self.global_cloud.clone().ok_or_else(|| missing("scene cloud"))?,
        })
    }

    pub fn keypoints(&self) -> Result<&[Vec<Keypoint2DFrame>]> {
        self.keypoints
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("manifest has no keypoints".into()))
    }

    /// Depth frames of every view posed by its registered world pose;
    /// frames without a registration are skipped.
    pub fn depth_frames(&self) -> Result<Vec<DepthFrame>> {
        let regs = self
            .registrations
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("depth fusion needs registrations".into()))?;
        let mut out = Vec::new();
        for (v, e) in self.manifest.views.iter().enumerate() {
            let Some(index_path) = &e.depth else { continue };
            let index_path = self.dir.join(index_path);
            let index: DepthIndexFile = read_json(&index_path)?;
            let base = index_path.parent().unwrap_or(Path::new(""));
            for rec in &index.frames {
                let Some(f) = rec.frame.checked_sub(if v == 1 { self.manifest.frame_offset } else { 0 }) else {
                    continue;
                };
                let Some((_, pose)) = regs[v].iter().find(|(rf, _)| *rf == f) else { continue };
                let img = read_depth(&base.join(&rec.file), index.encoding, index.width, index.height)?;
                out.push(DepthFrame::new(img, *pose, self.trajectories[v].intrinsics, self.manifest.scene_class)?);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("no registered depth frames".into()));
        }
        Ok(out)
    }
}

/// How [`write_bundle`] lays out a synthetic session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleLayout {
    /// View 2 is written with this many extra leading frames, as if its
    /// recording had started earlier; the manifest records the offset.
    pub frame_offset: usize,
    /// Depth rasters at keyframes, or none.
    pub depth: Option<DepthEncoding>,
}

impl Default for BundleLayout {
    fn default() -> Self {
        Self {
            frame_offset: 0,
            depth: Some(DepthEncoding::Png16Mm),
        }
    }
}

/// Writes a synthetic session (inputs plus a `truth/` directory) and its
/// manifest under `dir`.
pub fn write_bundle(b: &crate::synth::Bundle, dir: &Path, layout: &BundleLayout) -> Result<Manifest> {
    let pad = |v: usize| if v == 1 { layout.frame_offset } else { 0 };
    let mut views = Vec::new();
    for (v, traj) in b.trajectories.iter().enumerate() {
        let id = traj.view_id.clone();
        let k = pad(v);
        let mut t = traj.clone();
        if k > 0 {
            let (t0, p0) = (t.frames[0].timestamp, t.frames[0].pose);
            let dt = if t.len() > 1 { t.frames[1].timestamp - t0 } else { 1.0 / 30.0 };
            let lead = (0..k).map(|i| TimedPose { timestamp: t0 - (k - i) as f64 * dt, pose: p0 });
            t.frames = lead.chain(t.frames).collect();
        }
        write_json(&dir.join(&id).join("trajectory.json"), &TrajectoryFile::from_trajectory(&t))?;

        let n_joints = b.keypoints[v].first().map_or(0, |f| f.joints.len());
        let lead = (0..k).map(|i| Keypoint2DFrame { view: v, frame: i, joints: vec![(Vec2::zeros(), 0.0); n_joints] });
        let kps: Vec<Keypoint2DFrame> = lead
            .chain(b.keypoints[v].iter().map(|f| Keypoint2DFrame { frame: f.frame + k, ..f.clone() }))
            .collect();
        write_json(&dir.join(&id).join("keypoints2d.json"), &Keypoints2DFile::from_frames(&id, &kps))?;
        write_cloud(&dir.join(&id).join("cloud.ply"), &b.local_clouds[v])?;
        let regs: Vec<(usize, Pose)> = b.registrations[v].iter().map(|(f, p)| (f + k, *p)).collect();
        write_json(&dir.join(&id).join("registrations.json"), &RegistrationsFile::from_registrations(&id, &regs))?;

        let depth = match layout.depth {
            Some(encoding) => {
                let ext = match encoding {
                    DepthEncoding::Png16Mm => "png",
                    DepthEncoding::F32Le => "f32",
                };
                let world = &b.world_trajectories[v];
                let mut frames = Vec::new();
                for f in b.keyframes(v) {
                    let img = b.scene.render_depth(world.pose(f)?, &world.intrinsics);
                    let file = format!("depth/{:06}.{ext}", f + k);
                    write_depth(&dir.join(&id).join(&file), &img, encoding)?;
                    frames.push(DepthFrameRecord { frame: f + k, file });
                }
                let index = DepthIndexFile {
                    encoding,
                    width: traj.intrinsics.width,
                    height: traj.intrinsics.height,
                    frames,
                };
                write_json(&dir.join(&id).join("depth.json"), &index)?;
                Some(format!("{id}/depth.json"))
            }
            None => None,
        };
        views.push(ViewEntry {
            id: id.clone(),
            trajectory: format!("{id}/trajectory.json"),
            keypoints: Some(format!("{id}/keypoints2d.json")),
            cloud: Some(format!("{id}/cloud.ply")),
            registrations: Some(format!("{id}/registrations.json")),
            depth,
        });
    }
    write_cloud(&dir.join("scene_cloud.ply"), &b.global_cloud)?;
    write_json(&dir.join("tracks.json"), &TracksFile::from_tracks(&b.tracks))?;
    let obs: Vec<LandmarkObservation> = b
        .observations
        .iter()
        .map(|o| LandmarkObservation { frame: o.frame + pad(o.view), ..*o })
        .collect();
    write_json(&dir.join("landmarks.json"), &LandmarksFile::new(&b.landmarks, &obs))?;
    write_json(&dir.join("contacts.json"), &ContactsFile::from_annotation(&b.contacts))?;
    let samples: Vec<DepthSample> = b
        .depth_samples
        .iter()
        .map(|s| DepthSample { frame: s.frame + pad(s.view), ..*s })
        .collect();
    write_json(&dir.join("depth_samples.json"), &DepthSamplesFile::from_samples(&samples))?;

    let ids: Vec<String> = b.trajectories.iter().map(|t| t.view_id.clone()).collect();
    write_json(&dir.join("truth/offsets.json"), &OffsetsFile::new(ids.clone(), &b.offsets))?;
    write_json(&dir.join("truth/skeleton.json"), &SkeletonFile::from_params(&b.skeleton))?;
    write_json(&dir.join("truth/joints.json"), &JointsFile::from_joints(&b.joints))?;
    for (id, t) in ids.iter().zip(&b.world_trajectories) {
        write_json(&dir.join(format!("truth/{id}_world_trajectory.json")), &TrajectoryFile::from_trajectory(t))?;
    }
    write_json(&dir.join("truth/spec.json"), &(b.seed, &b.spec))?;

    let manifest = Manifest {
        scene_class: b.scene.class,
        frame_offset: layout.frame_offset,
        views,
        scene_cloud: Some("scene_cloud.ply".into()),
        tracks: Some("tracks.json".into()),
        landmarks: Some("landmarks.json".into()),
        contacts: Some("contacts.json".into()),
        depth_samples: Some("depth_samples.json".into()),
        config: ConfigOverrides::default(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a whole file; used by byte-identity checks.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path).map_err(|e| Error::file(path, e))?.read_to_end(&mut buf)?;
    Ok(buf)
}
