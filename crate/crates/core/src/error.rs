use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("size mismatch: {what} ({left} vs {right})")]
    SizeMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("offset must be rigid (scale = 1), got scale {0}")]
    ScaleNotUnity(f64),
    #[error("insufficient overlap between chunks {prev} and {next}: {frames} frames")]
    InsufficientOverlap {
        prev: usize,
        next: usize,
        frames: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no track correspondences")]
    EmptyCorrespondences,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("view {view}: {found} registered frames, at least {needed} required")]
    TooFewRegistrations {
        view: String,
        found: usize,
        needed: usize,
    },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("{found} views above the confidence gate, at least 2 required")]
    TooFewConfidentViews { found: usize },
    #[error("rays are near-parallel (max angle {angle_deg:.3} deg)")]
    DegenerateRays { angle_deg: f64 },
    #[error("frame misalignment: {0}")]
    FrameMisalignment(String),
    #[error("no valid 3D joints in frame {frame}")]
    NoValidJoints { frame: usize },
    #[error("no contact frames annotated")]
    NoContactFrames,
    #[error("volume has no zero crossing")]
    EmptySurface,
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground-truth trajectory has zero displacement")]
    ZeroDisplacement,
    #[error("no observations to evaluate")]
    EmptyObservations,
    #[error("invalid generator spec: {0}")]
    SpecInvalid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    /// Malformed, missing or inconsistent inputs.
    Input,
    /// Well-formed inputs on which the mathematics failed.
    Numerical,
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            BehindCamera { .. }
            | DegenerateConfiguration(_)
            | NonFiniteLoss { .. }
            | TooFewConfidentViews { .. }
            | DegenerateRays { .. }
            | EmptySurface
            | ZeroDisplacement => ErrorFamily::Numerical,
            _ => ErrorFamily::Input,
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
