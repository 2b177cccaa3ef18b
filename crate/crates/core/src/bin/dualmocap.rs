//! Batch driver for the dual-view capture pipeline. Every stage reads and
//! writes files; see the README for the formats.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dualmocap::alignment::{stitch_chunks, Chunk, ChunkOverlap};
use dualmocap::calibrator::{calibrate_views, initialize_offsets, OffsetParams, OptimizerConfig};
use dualmocap::fusion::{clean_mesh, CleanConfig, TsdfVolume, DEFAULT_VOXEL_SIZE, TRUNCATION_VOXELS};
use dualmocap::geom::{Trajectory, Vec2, Vec3};
use dualmocap::io::{
    self, BundleLayout, ChunkTransformsFile, DepthEncoding, JointsFile, Keypoints3DFile, OffsetsFile, Session,
    SimilarityRecord, SkeletonFile, StitchFile, TrajectoryFile,
};
use dualmocap::losses::ViewOffset;
use dualmocap::metrics;
use dualmocap::motion_fit::{contact_align, fit_motion, initial_params, ContactConfig, FitConfig};
use dualmocap::optim::{AdamConfig, Termination};
use dualmocap::skeleton::SkeletonModel;
use dualmocap::synth::{generate, perturb, GenerateSpec, NoiseSpec};
use dualmocap::triangulator::{triangulate_sequence, JointStatus, TriangulationConfig};
use dualmocap::{Error, ErrorFamily};

const THREADS_VAR: &str = "DUALMOCAP_THREADS";

#[derive(Parser)]
#[command(name = "dualmocap", version, about = "Dual moving-camera motion capture pipeline")]
#[command(after_help = "Environment: DUALMOCAP_THREADS sets the worker thread count.\n\
Exit codes: 0 success, 2 usage error, 3 input error, 4 numerical failure.")]
struct Cli {
    /// Log progress (-v) or details (-vv) to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session with ground truth.
    Synth(SynthArgs),
    /// Fuse registered depth frames into a cleaned scene mesh.
    Fuse(FuseArgs),
    /// Initial per-view offsets from registered keyframes.
    AlignInit(AlignInitArgs),
    /// Refine the per-view offsets.
    Calibrate(CalibrateArgs),
    /// Triangulate 2D keypoints in the calibrated world frame.
    Triangulate(TriangulateArgs),
    /// Fit the skeleton to triangulated and 2D keypoints.
    Fit(FitArgs),
    /// Rigidly align motion and cameras to contact markers.
    ContactAlign(ContactAlignArgs),
    /// Align overlapping reconstruction chunks into one frame.
    Stitch(StitchArgs),
    /// World-space joint metrics against ground truth.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct Output {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneArg {
    Room,
    Ambiguity,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthArg {
    Png16,
    F32,
    None,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    output: Output,
    /// Random seed; output is fully determined by it and the flags.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene layout.
    #[arg(long, value_enum, default_value = "room")]
    scene: SceneArg,
    /// Frames per view.
    #[arg(long)]
    frames: Option<usize>,
    /// Extra leading frames written for view 2.
    #[arg(long, default_value_t = 0)]
    frame_offset: usize,
    /// Depth raster encoding.
    #[arg(long, value_enum, default_value = "png16")]
    depth: DepthArg,
    /// 2D joint noise σ, px.
    #[arg(long, default_value_t = 0.0)]
    keypoint_px: f64,
    /// Track and landmark noise σ, px.
    #[arg(long, default_value_t = 0.0)]
    feature_px: f64,
    /// Relative depth noise σ.
    #[arg(long, default_value_t = 0.0)]
    depth_rel: f64,
    /// Local cloud noise σ, m.
    #[arg(long, default_value_t = 0.0)]
    cloud_m: f64,
    /// Registered keyframe position noise σ, m.
    #[arg(long, default_value_t = 0.0)]
    registration_m: f64,
    /// Registered keyframe rotation noise σ, rad.
    #[arg(long, default_value_t = 0.0)]
    registration_rad: f64,
    /// Probability of dropping a 2D joint.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
}

#[derive(Args)]
struct FuseArgs {
    /// Session manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    output: Output,
    /// Voxel edge, m.
    #[arg(long)]
    voxel: Option<f64>,
    /// Components below this fraction of the faces are dropped.
    #[arg(long)]
    min_component_fraction: Option<f64>,
    /// Write the raw marching-cubes surface without cleanup.
    #[arg(long)]
    no_clean: bool,
}

#[derive(Args)]
struct AlignInitArgs {
    /// Session manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Session manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Initial offsets (from align-init).
    #[arg(long)]
    init: PathBuf,
    #[command(flatten)]
    output: Output,
    /// Calibrate only this view, without the track loss.
    #[arg(long)]
    single_view: Option<String>,
    /// Adam step size.
    #[arg(long)]
    lr: Option<f64>,
    /// Iteration cap.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Weight of the cross-view track loss.
    #[arg(long)]
    w_track: Option<f64>,
    /// Weight of the point-cloud Chamfer loss.
    #[arg(long)]
    w_chamfer: Option<f64>,
    /// Weight of the landmark reprojection loss.
    #[arg(long)]
    w_ba: Option<f64>,
    /// Compare analytic and finite-difference gradients at the start.
    #[arg(long)]
    check_gradient: bool,
}

#[derive(Args)]
struct TriangulateArgs {
    /// Session manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Calibrated offsets (from calibrate).
    #[arg(long)]
    offsets: PathBuf,
    #[command(flatten)]
    output: Output,
    /// Views with lower 2D confidence are ignored.
    #[arg(long)]
    confidence_gate: Option<f64>,
    /// Minimum angle between viewing rays, degrees.
    #[arg(long)]
    min_ray_angle: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Session manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Calibrated offsets (from calibrate).
    #[arg(long)]
    offsets: PathBuf,
    /// Triangulated joints (from triangulate).
    #[arg(long)]
    keypoints3d: PathBuf,
    #[command(flatten)]
    output: Output,
    /// Starting parameters; default: rest pose at the triangulated pelvis.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Weight of the 3D keypoint term.
    #[arg(long)]
    w_kp3d: Option<f64>,
    /// Weight of the smoothness term.
    #[arg(long)]
    w_smooth: Option<f64>,
    /// Weight of the pose prior.
    #[arg(long)]
    w_prior: Option<f64>,
    /// Weight of the 2D reprojection term.
    #[arg(long)]
    w_reproj: Option<f64>,
    /// Iterations of the shape and translation stage.
    #[arg(long)]
    shape_iterations: Option<usize>,
    /// Iterations of the full-parameter stage.
    #[arg(long)]
    full_iterations: Option<usize>,
}

#[derive(Args)]
struct ContactAlignArgs {
    /// Session manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Calibrated offsets (from calibrate).
    #[arg(long)]
    offsets: PathBuf,
    /// Fitted skeleton (from fit).
    #[arg(long)]
    skeleton: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct StitchArgs {
    /// Chunk list with overlaps.
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct MetricsArgs {
    /// Predicted joints.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth joints.
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    output: Output,
    /// Chunk lengths for the aligned joint errors.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    chunk: Vec<usize>,
    /// Foot height below which a foot counts as grounded, m.
    #[arg(long, default_value_t = 0.05)]
    contact_height: f64,
    /// With --offsets, also report reprojection and depth errors.
    #[arg(long, requires = "offsets")]
    manifest: Option<PathBuf>,
    /// Calibrated offsets used with --manifest.
    #[arg(long, requires = "manifest")]
    offsets: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Written next to each command's outputs. Wall-clock time goes to a
/// separate file so that repeated runs produce identical logs.
#[derive(Default)]
struct RunLog {
    out: PathBuf,
    config: Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    curves: BTreeMap<String, Vec<f64>>,
    summary: Value,
}

impl RunLog {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    /// Outputs are listed relative to the output directory.
    fn output(&mut self, p: &Path) {
        self.outputs.push(p.strip_prefix(&self.out).unwrap_or(p).display().to_string());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.family() {
                ErrorFamily::Input => 3,
                ErrorFamily::Numerical => 4,
            })
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {s:?}"))),
        },
        Err(_) => 0,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let start = Instant::now();
    let (name, out) = match &cli.command {
        Command::Synth(a) => ("synth", a.output.out.clone()),
        Command::Fuse(a) => ("fuse", a.output.out.clone()),
        Command::AlignInit(a) => ("align-init", a.output.out.clone()),
        Command::Calibrate(a) => ("calibrate", a.output.out.clone()),
        Command::Triangulate(a) => ("triangulate", a.output.out.clone()),
        Command::Fit(a) => ("fit", a.output.out.clone()),
        Command::ContactAlign(a) => ("contact-align", a.output.out.clone()),
        Command::Stitch(a) => ("stitch", a.output.out.clone()),
        Command::Metrics(a) => ("metrics", a.output.out.clone()),
    };
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let mut log = RunLog { out: out.clone(), ..Default::default() };
    match &cli.command {
        Command::Synth(a) => synth(a, &mut log)?,
        Command::Fuse(a) => fuse(a, &mut log)?,
        Command::AlignInit(a) => align_init(a, &mut log)?,
        Command::Calibrate(a) => calibrate(a, &mut log)?,
        Command::Triangulate(a) => triangulate(a, &mut log)?,
        Command::Fit(a) => fit(a, &mut log)?,
        Command::ContactAlign(a) => contact(a, &mut log)?,
        Command::Stitch(a) => stitch(a, &mut log)?,
        Command::Metrics(a) => metrics_cmd(a, &mut log)?,
    }
    let record = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config": log.config,
        "inputs": log.inputs,
        "outputs": log.outputs,
        "loss_curves": log.curves,
        "summary": log.summary,
    });
    io::write_json(&out.join(format!("{name}.log.json")), &record)?;
    let timing = json!({ "seconds": start.elapsed().as_secs_f64(), "threads": rayon::current_num_threads() });
    io::write_json(&out.join(format!("{name}.timing.json")), &timing)?;
    Ok(())
}

fn save<T: serde::Serialize>(log: &mut RunLog, path: PathBuf, value: &T) -> CliResult<()> {
    io::write_json(&path, value)?;
    log.output(&path);
    Ok(())
}

fn adam_json(a: &AdamConfig) -> Value {
    json!({
        "learning_rate": a.learning_rate,
        "beta1": a.beta1,
        "beta2": a.beta2,
        "epsilon": a.epsilon,
        "clip_norm": a.clip_norm,
        "max_iterations": a.max_iterations,
        "tolerance": a.tolerance,
        "window": a.window,
        "final_lr_fraction": a.final_lr_fraction,
    })
}

fn termination_str(t: &Termination) -> String {
    match t {
        Termination::MaxIterations => "max_iterations".into(),
        Termination::Converged => "converged".into(),
        Termination::NonFinite { iteration } => format!("non_finite_at_{iteration}"),
    }
}

fn load_session(path: &Path, log: &mut RunLog) -> CliResult<Session> {
    log.input(path);
    Ok(Session::load(path)?)
}

/// World trajectories of the views named in the offsets file, in manifest
/// order.
fn world_trajectories(session: &Session, offsets: &Path, log: &mut RunLog) -> CliResult<Vec<Trajectory>> {
    log.input(offsets);
    let file: OffsetsFile = io::read_json(offsets)?;
    session
        .trajectories
        .iter()
        .map(|t| {
            let o = file.get(&t.view_id)?;
            Ok(t.map_poses(|p| p.with_world_similarity(&o.transform())))
        })
        .collect()
}

// ---------------------------------------------------------------- stages

fn synth(a: &SynthArgs, log: &mut RunLog) -> CliResult<()> {
    let mut spec = match a.scene {
        SceneArg::Room => GenerateSpec::default(),
        SceneArg::Ambiguity => GenerateSpec::ambiguity(),
    };
    if let Some(n) = a.frames {
        spec.motion.frames = n;
    }
    let noise = NoiseSpec {
        keypoint_px: a.keypoint_px,
        feature_px: a.feature_px,
        depth_rel: a.depth_rel,
        cloud_m: a.cloud_m,
        registration_m: a.registration_m,
        registration_rad: a.registration_rad,
        dropout: a.dropout,
        ..Default::default()
    };
    let bundle = perturb(&generate(a.seed, &spec)?, &noise, a.seed)?;
    let layout = BundleLayout {
        frame_offset: a.frame_offset,
        depth: match a.depth {
            DepthArg::Png16 => Some(DepthEncoding::Png16Mm),
            DepthArg::F32 => Some(DepthEncoding::F32Le),
            DepthArg::None => None,
        },
    };
    io::write_bundle(&bundle, &a.output.out, &layout)?;
    log.output(&a.output.out.join("manifest.json"));
    log.config = json!({
        "seed": a.seed,
        "spec": serde_json::to_value(spec).map_err(Error::from)?,
        "noise": serde_json::to_value(noise).map_err(Error::from)?,
        "frame_offset": a.frame_offset,
    });
    log.summary = json!({
        "frames": spec.motion.frames,
        "tracks": bundle.tracks.len(),
        "landmark_observations": bundle.observations.len(),
        "contacts": bundle.contacts.contacts.len(),
    });
    Ok(())
}

fn fuse(a: &FuseArgs, log: &mut RunLog) -> CliResult<()> {
    let session = load_session(&a.manifest, log)?;
    let over = session.manifest.config.fusion;
    let voxel = a.voxel.or(over.voxel_size).unwrap_or(DEFAULT_VOXEL_SIZE);
    let clean = CleanConfig {
        min_component_fraction: a
            .min_component_fraction
            .or(over.min_component_fraction)
            .unwrap_or(CleanConfig::default().min_component_fraction),
        ..Default::default()
    };
    if !(voxel > 0.0) {
        return Err(Failure::Usage(format!("voxel size must be positive, got {voxel}")));
    }
    let frames = session.depth_frames()?;

    // bounds of every valid depth pixel, sampled on a coarse pixel grid
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for f in &frames {
        let d = f.depth();
        for v in (0..d.height).step_by(4) {
            for u in (0..d.width).step_by(4) {
                let z = d.get(u, v) as f64;
                if z > 0.0 {
                    let ray = f.intrinsics.unproject_ray(&Vec2::new(u as f64 + 0.5, v as f64 + 0.5));
                    let p = f.pose.to_world(&(ray * z));
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
    }
    if !lo.iter().all(|x| x.is_finite()) {
        return Err(Error::EmptySurface.into());
    }
    let pad = Vec3::repeat((TRUNCATION_VOXELS + 2.0) * voxel);
    let (lo, hi) = (lo - pad, hi + pad);
    let cells = ((hi - lo) / voxel).map(|x| x.ceil());
    const MAX_VOXELS: f64 = 6.4e7;
    if cells.x * cells.y * cells.z > MAX_VOXELS {
        return Err(Error::InvalidInput(format!(
            "scene needs {:.0} voxels at {voxel} m, limit {MAX_VOXELS:.0}; use a larger --voxel",
            cells.x * cells.y * cells.z
        ))
        .into());
    }
    let mut volume = TsdfVolume::covering(lo, hi, voxel)?;
    for f in &frames {
        volume.integrate(f);
    }
    let raw = volume.extract_mesh()?;
    let mesh = if a.no_clean { raw.clone() } else { clean_mesh(&raw, &clean) };
    let path = a.output.out.join("mesh.ply");
    io::write_mesh(&path, &mesh)?;
    log.output(&path);
    log.config = json!({
        "voxel_size": voxel,
        "truncation": volume.truncation,
        "clean": !a.no_clean,
        "min_component_fraction": clean.min_component_fraction,
        "outlier_neighbors": clean.outlier_neighbors,
        "outlier_sigma": clean.outlier_sigma,
        "scene_class": session.manifest.scene_class.as_str(),
    });
    log.summary = json!({
        "depth_frames": frames.len(),
        "volume_dims": volume.dims,
        "raw_faces": raw.faces.len(),
        "faces": mesh.faces.len(),
        "vertices": mesh.vertices.len(),
        "components": mesh.component_count(),
    });
    Ok(())
}

fn align_init(a: &AlignInitArgs, log: &mut RunLog) -> CliResult<()> {
    let session = load_session(&a.manifest, log)?;
    let regs = session
        .registrations
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("manifest has no registrations".into()))?;
    let mut offsets = Vec::new();
    let mut residuals = Vec::new();
    for (t, r) in session.trajectories.iter().zip(regs) {
        let sim = initialize_offsets(t, r, false)?;
        let o = ViewOffset::new(sim.yaw(), sim.translation);
        let rms = (r
            .iter()
            .map(|(f, p)| Ok((o.transform().apply(&t.pose(*f)?.center()) - p.center()).norm_squared()))
            .sum::<dualmocap::Result<f64>>()?
            / r.len() as f64)
            .sqrt();
        residuals.push(rms);
        offsets.push(o);
    }
    save(log, a.output.out.join("offsets_init.json"), &OffsetsFile::new(session.view_ids(), &offsets))?;
    log.config = json!({ "with_scale": false });
    log.summary = json!({ "center_rms_m": residuals });
    Ok(())
}

fn calibrate(a: &CalibrateArgs, log: &mut RunLog) -> CliResult<()> {
    let session = load_session(&a.manifest, log)?;
    log.input(&a.init);
    let init_file: OffsetsFile = io::read_json(&a.init)?;
    let over = session.manifest.config.calibration;
    let mut cfg = OptimizerConfig::default();
    cfg.adam.learning_rate = a.lr.or(over.learning_rate).unwrap_or(cfg.adam.learning_rate);
    cfg.adam.max_iterations = a.max_iterations.or(over.max_iterations).unwrap_or(cfg.adam.max_iterations);
    cfg.weights.track = a.w_track.or(over.track).unwrap_or(cfg.weights.track);
    cfg.weights.chamfer = a.w_chamfer.or(over.chamfer).unwrap_or(cfg.weights.chamfer);
    cfg.weights.ba = a.w_ba.or(over.ba).unwrap_or(cfg.weights.ba);
    cfg.check_gradient = a.check_gradient;

    let views: Vec<usize> = match &a.single_view {
        Some(id) => {
            let v = session
                .view_index(id)
                .ok_or_else(|| Failure::Usage(format!("--single-view {id:?} is not a view of the manifest")))?;
            cfg.weights.track = 0.0;
            vec![v]
        }
        None => (0..session.trajectories.len()).collect(),
    };
    let ids: Vec<String> = views.iter().map(|v| session.trajectories[*v].view_id.clone()).collect();
    let init = ids.iter().map(|id| init_file.get(id)).collect::<dualmocap::Result<Vec<_>>>()?;
    let inputs = session.calibration_inputs()?;
    let result = calibrate_views(&inputs, &OffsetParams::new(init)?, &cfg, &views)?;

    save(log, a.output.out.join("offsets.json"), &OffsetsFile::new(ids.clone(), &result.params.offsets))?;
    for ((v, id), o) in views.iter().zip(&ids).zip(&result.params.offsets) {
        let world = session.trajectories[*v].map_poses(|p| p.with_world_similarity(&o.transform()));
        save(log, a.output.out.join(format!("world/{id}_trajectory.json")), &TrajectoryFile::from_trajectory(&world))?;
    }
    for (k, h) in result.histories.iter().enumerate() {
        let name = if result.histories.len() == 1 && views.len() > 1 { "joint".to_string() } else { ids[k.min(ids.len() - 1)].clone() };
        log.curves.insert(name, h.clone());
    }
    let b = &result.breakdown;
    log.config = json!({
        "views": ids,
        "single_view": a.single_view,
        "weights": { "track": cfg.weights.track, "chamfer": cfg.weights.chamfer, "ba": cfg.weights.ba },
        "adam": adam_json(&cfg.adam),
        "check_gradient": cfg.check_gradient,
    });
    log.summary = json!({
        "iterations": result.iterations(),
        "terminations": result.terminations.iter().map(termination_str).collect::<Vec<_>>(),
        "loss": { "total": b.total, "track": b.track, "chamfer": b.chamfer, "ba": b.ba, "ba_dropped": b.ba_dropped },
        "gradient_check": result.gradient_check,
    });
    Ok(())
}

fn triangulate(a: &TriangulateArgs, log: &mut RunLog) -> CliResult<()> {
    let session = load_session(&a.manifest, log)?;
    let world = world_trajectories(&session, &a.offsets, log)?;
    let over = session.manifest.config.triangulation;
    let mut cfg = TriangulationConfig::default();
    cfg.confidence_gate = a.confidence_gate.or(over.confidence_gate).unwrap_or(cfg.confidence_gate);
    cfg.min_ray_angle_deg = a.min_ray_angle.or(over.min_ray_angle_deg).unwrap_or(cfg.min_ray_angle_deg);
    let k3d = triangulate_sequence(session.keypoints()?, &world, &cfg)?;
    save(log, a.output.out.join("keypoints3d.json"), &Keypoints3DFile::from_frames(&k3d))?;

    let mut status: BTreeMap<&str, usize> = BTreeMap::new();
    let mut residuals = Vec::new();
    for j in k3d.iter().flat_map(|f| &f.joints) {
        *status.entry(j.status.as_str()).or_default() += 1;
        if j.status == JointStatus::Valid {
            residuals.push(j.residual_px);
        }
    }
    log.config = json!({
        "confidence_gate": cfg.confidence_gate,
        "min_ray_angle_deg": cfg.min_ray_angle_deg,
        "reweight_iterations": cfg.reweight_iterations,
    });
    log.summary = json!({
        "frames": k3d.len(),
        "status": status,
        "mean_residual_px": if residuals.is_empty() { None } else { Some(residuals.iter().sum::<f64>() / residuals.len() as f64) },
    });
    Ok(())
}

fn fit(a: &FitArgs, log: &mut RunLog) -> CliResult<()> {
    let session = load_session(&a.manifest, log)?;
    let world = world_trajectories(&session, &a.offsets, log)?;
    log.input(&a.keypoints3d);
    let k3d = io::read_json::<Keypoints3DFile>(&a.keypoints3d)?.to_frames()?;
    let model = SkeletonModel::default();
    let init = match &a.init {
        Some(p) => {
            log.input(p);
            io::read_json::<SkeletonFile>(p)?.to_params()
        }
        None => initial_params(&model, &k3d)?,
    };
    let over = session.manifest.config.fit;
    let mut cfg = FitConfig::default();
    let w = &mut cfg.weights;
    w.kp3d = a.w_kp3d.or(over.kp3d).unwrap_or(w.kp3d);
    w.smooth = a.w_smooth.or(over.smooth).unwrap_or(w.smooth);
    w.prior = a.w_prior.or(over.prior).unwrap_or(w.prior);
    w.reproj = a.w_reproj.or(over.reproj).unwrap_or(w.reproj);
    cfg.shape_stage.max_iterations = a.shape_iterations.or(over.shape_iterations).unwrap_or(cfg.shape_stage.max_iterations);
    cfg.full_stage.max_iterations = a.full_iterations.or(over.full_iterations).unwrap_or(cfg.full_stage.max_iterations);

    let result = fit_motion(&model, &k3d, session.keypoints()?, &world, &init, &cfg)?;
    save(log, a.output.out.join("skeleton.json"), &SkeletonFile::from_params(&result.params))?;
    save(log, a.output.out.join("joints.json"), &JointsFile::from_joints(&result.params.joints(&model)))?;
    log.curves.insert("shape_stage".into(), result.histories[0].clone());
    log.curves.insert("full_stage".into(), result.histories[1].clone());
    let bd = |b: &dualmocap::motion_fit::FitBreakdown| {
        json!({ "kp3d": b.kp3d, "smooth": b.smooth, "prior": b.prior, "reproj": b.reproj, "total": b.total })
    };
    log.config = json!({
        "weights": { "kp3d": cfg.weights.kp3d, "smooth": cfg.weights.smooth, "prior": cfg.weights.prior, "reproj": cfg.weights.reproj },
        "shape_stage": adam_json(&cfg.shape_stage),
        "full_stage": adam_json(&cfg.full_stage),
        "confidence_gate": cfg.confidence_gate,
        "init": a.init.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "triangulated".into()),
    });
    log.summary = json!({
        "initial": bd(&result.initial),
        "final": bd(&result.last),
        "terminations": result.terminations.iter().map(termination_str).collect::<Vec<_>>(),
    });
    Ok(())
}

fn contact(a: &ContactAlignArgs, log: &mut RunLog) -> CliResult<()> {
    let session = load_session(&a.manifest, log)?;
    let world = world_trajectories(&session, &a.offsets, log)?;
    log.input(&a.skeleton);
    let params = io::read_json::<SkeletonFile>(&a.skeleton)?.to_params();
    let ann = session
        .contacts
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("manifest has no contacts".into()))?;
    let model = SkeletonModel::default();
    let cfg = ContactConfig::default();
    let r = contact_align(&model, &params, &world, ann, &cfg)?;
    save(log, a.output.out.join("skeleton_aligned.json"), &SkeletonFile::from_params(&r.params))?;
    save(log, a.output.out.join("joints_aligned.json"), &JointsFile::from_joints(&r.params.joints(&model)))?;
    for t in &r.trajectories {
        save(log, a.output.out.join(format!("world_aligned/{}_trajectory.json", t.view_id)), &TrajectoryFile::from_trajectory(t))?;
    }
    log.config = json!({ "max_iterations": cfg.max_iterations, "gradient_tolerance": cfg.gradient_tolerance });
    log.summary = json!({
        "contacts": ann.contacts.len(),
        "yaw": r.yaw,
        "translation": [r.translation.x, r.translation.y, r.translation.z],
        "loss_before": r.loss_before,
        "loss_after": r.loss_after,
    });
    Ok(())
}

fn stitch(a: &StitchArgs, log: &mut RunLog) -> CliResult<()> {
    log.input(&a.spec);
    let spec: StitchFile = io::read_json(&a.spec)?;
    let base = a.spec.parent().unwrap_or(Path::new(""));
    let chunks = spec
        .chunks
        .iter()
        .map(|c| {
            Ok(Chunk {
                trajectory: io::read_json::<TrajectoryFile>(&base.join(&c.trajectory))?.to_trajectory()?,
                cloud: c.cloud.as_ref().map(|p| io::read_cloud(&base.join(p))).transpose()?,
            })
        })
        .collect::<dualmocap::Result<Vec<_>>>()?;
    let overlaps: Vec<ChunkOverlap> = spec
        .overlaps
        .iter()
        .map(|o| ChunkOverlap { prev_start: o.prev_start, next_start: o.next_start, len: o.len })
        .collect();
    let r = stitch_chunks(&chunks, &overlaps, spec.with_scale)?;
    let file = ChunkTransformsFile {
        per_chunk: r.per_chunk.iter().map(SimilarityRecord::from_transform).collect(),
        cumulative: r.cumulative.iter().map(SimilarityRecord::from_transform).collect(),
    };
    save(log, a.output.out.join("chunk_transforms.json"), &file)?;
    for (k, c) in chunks.iter().enumerate() {
        let t = r.align_trajectory(k, &c.trajectory);
        save(log, a.output.out.join(format!("chunks/{k:03}_trajectory.json")), &TrajectoryFile::from_trajectory(&t))?;
    }
    log.config = json!({ "with_scale": spec.with_scale, "chunks": chunks.len() });
    log.summary = json!({ "scales": r.cumulative.iter().map(|s| s.scale).collect::<Vec<_>>() });
    Ok(())
}

fn metrics_cmd(a: &MetricsArgs, log: &mut RunLog) -> CliResult<()> {
    log.input(&a.pred);
    log.input(&a.gt);
    let pred = io::read_json::<JointsFile>(&a.pred)?.to_joints();
    let gt = io::read_json::<JointsFile>(&a.gt)?.to_joints();
    if pred.iter().chain(&gt).flatten().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::InvalidInput("joint files must not contain missing joints".into()).into());
    }
    let model = SkeletonModel::default();
    let mut chunks = Vec::new();
    for &c in &a.chunk {
        chunks.push(json!({
            "chunk": c,
            "w_mpjpe_mm": metrics::w_mpjpe(&pred, &gt, c)?,
            "wa_mpjpe_mm": metrics::wa_mpjpe(&pred, &gt, c)?,
        }));
    }
    let root = |s: &[Vec<Vec3>]| s.iter().map(|f| f[0]).collect::<Vec<_>>();
    let jit = metrics::jitter(&pred, &model.foot_joints, a.contact_height)?;
    let mut report = json!({
        "frames": pred.len(),
        "chunks": chunks,
        "rte_percent": metrics::rte(&root(&pred), &root(&gt))?,
        "jitter_m_per_frame": jit.value,
        "jitter_samples": jit.samples,
    });
    if let (Some(m), Some(o)) = (&a.manifest, &a.offsets) {
        let session = load_session(m, log)?;
        let world = world_trajectories(&session, o, log)?;
        let gate = session.manifest.config.triangulation.confidence_gate.unwrap_or(TriangulationConfig::default().confidence_gate);
        report["reproj_px"] = json!(metrics::reproj_error(&pred, session.keypoints()?, &world, gate)?);
        if let Some(s) = &session.depth_samples {
            report["depth_mse_m2"] = json!(metrics::depth_mse_proxy(&pred, s, &world)?);
        }
    }
    save(log, a.output.out.join("metrics.json"), &report)?;
    log.config = json!({ "chunks": a.chunk, "contact_height": a.contact_height, "foot_joints": model.foot_joints });
    log.summary = report;
    Ok(())
}
