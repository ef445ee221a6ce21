//! Planar-parallax geometry kernel: plane homographies, residual parallax
//! flow, structure/depth conversions, view synthesis, photometric losses
//! and masks, road-surface analysis, metric scale recovery, a synthetic
//! scene renderer for ground truth, and depth evaluation metrics.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod parallax;
pub mod photometric;
pub mod pipeline;
pub mod sampling;
pub mod scale;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{evaluate, DepthMetrics};
pub use geometry::{
    backproject, compose_pose, epipole, invert_pose, plane_homography, project, CameraIntrinsics, Epipole,
    GroundPlane, Homography, RigidPose,
};
pub use grid::{
    DepthField, FlowScaleField, Grid, Mask, MaskedField, NormalField, ResidualFlowField, ScalarField,
    StructureField, VectorField,
};
pub use sampling::{ImageBuffer, SampleGrid, SampledImage};
