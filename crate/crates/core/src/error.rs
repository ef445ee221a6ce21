use thiserror::Error;

/// Errors raised by the geometry kernel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid ground plane: {0}")]
    InvalidPlane(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate baseline: |T_z| = {t_z:e} is below {threshold:e}")]
    DegenerateBaseline { t_z: f64, threshold: f64 },

    #[error("epipole at infinity; residual flow needs a non-zero forward baseline")]
    EpipoleAtInfinity,

    #[error("singular homography (|det| = {0:e})")]
    SingularHomography(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty source list")]
    EmptySourceList,

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("degenerate plane fit: {0}")]
    DegenerateFit(String),

    #[error("unknown training stage `{0}` (expected early, homo or distill)")]
    UnknownStage(String),

    #[error("camera is not above the ground plane (height {0} m)")]
    CameraBelowPlane(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        })
    }
}
