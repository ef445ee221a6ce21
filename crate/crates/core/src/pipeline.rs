//! One target/source pair through warp, residual flow, view synthesis,
//! masks and losses.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::geometry::{epipole, plane_homography, CameraIntrinsics, Epipole, GroundPlane, Homography, RigidPose};
use crate::grid::{DepthField, FlowScaleField, Grid, Mask, NormalField, ResidualFlowField, StructureField};
use crate::parallax::{flowscale_from_gamma, gamma_from_depth, residual_flow_from_flowscale, certainty_mask};
use crate::photometric::{
    auto_mask, loss_consist, loss_homo, loss_mono, loss_pp, loss_res, schedule_total, smoothness_loss, static_mask,
    ComponentLosses, LossReport, PhotometricParams, Stage, DEFAULT_STATIC_DELTA,
};
use crate::sampling::{synthesize_from_depth, synthesize_from_residual_flow, warp_by_homography, ImageBuffer, SampledImage};
use crate::surface::{
    default_tau, road_flat_mask, surface_normals, TrapezoidPrior, DEFAULT_GAMMA_TOL, DEFAULT_NEIGHBOR_OFFSET,
};

/// Default certainty threshold ε, pixels.
pub const DEFAULT_EPSILON: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub photometric: PhotometricParams,
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub neighbor_offset: usize,
    pub gamma_tol: f64,
    pub prior: TrapezoidPrior,
    pub stage: Stage,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            photometric: PhotometricParams::default(),
            epsilon: DEFAULT_EPSILON,
            delta: DEFAULT_STATIC_DELTA,
            tau: default_tau(),
            neighbor_offset: DEFAULT_NEIGHBOR_OFFSET,
            gamma_tol: DEFAULT_GAMMA_TOL,
            prior: TrapezoidPrior::default(),
            stage: Stage::Homo,
        }
    }
}

/// Inputs for one pair. `depth_pp` plays the parallax-branch depth (it drives
/// γ, the flow and the certainty mask); `depth_mono` the monocular branch.
#[derive(Clone, Debug)]
pub struct PairInputs<'a> {
    pub target: &'a ImageBuffer,
    pub source: &'a ImageBuffer,
    pub k: &'a CameraIntrinsics,
    pub pose_t_to_s: &'a RigidPose,
    /// Ground plane in the target frame.
    pub plane: &'a GroundPlane,
    pub depth_pp: &'a DepthField,
    pub depth_mono: &'a DepthField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairMasks {
    pub flat: Mask,
    /// Flat pixels whose photometric window lies inside the valid warp.
    pub homo_support: Mask,
    pub auto: Mask,
    pub cert: Mask,
    pub static_: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairLosses {
    pub homo: LossReport,
    pub mono: LossReport,
    pub mono_static: LossReport,
    pub pp: LossReport,
    pub res: LossReport,
    pub consist: LossReport,
    pub smooth: LossReport,
    pub total: LossReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairOutputs {
    pub h_t_to_s: Homography,
    pub epipole: Epipole,
    pub warped: SampledImage,
    pub gamma: StructureField,
    pub flowscale: FlowScaleField,
    pub flow: ResidualFlowField,
    pub synth_res: SampledImage,
    pub synth_mono: SampledImage,
    pub synth_pp: SampledImage,
    pub normals: NormalField,
    pub masks: PairMasks,
    pub losses: PairLosses,
}

/// Mean-normalizable disparity 1/D with invalid pixels set to the mean of
/// the valid ones.
fn disparity(depth: &DepthField) -> Result<Grid<f64>> {
    let (w, h) = depth.dims();
    let inv = Grid::from_fn(w, h, |x, y| depth.at(x, y).filter(|d| *d > 0.0).map(|d| 1.0 / d));
    let valid = inv.map(|v| v.is_some());
    let values = inv.map(|v| v.unwrap_or(0.0));
    let mean = values
        .masked_mean(&valid)?
        .ok_or(Error::EmptyMask("mono depth"))?;
    Ok(Grid::from_fn(w, h, |x, y| inv.get(x, y).unwrap_or(mean)))
}

pub fn run_pair(inputs: &PairInputs<'_>, params: &PipelineParams) -> Result<PairOutputs> {
    let PairInputs {
        target,
        source,
        k,
        pose_t_to_s,
        plane,
        depth_pp,
        depth_mono,
    } = *inputs;
    params.photometric.validate()?;
    check_dims(target.dims(), k.dims())?;
    check_dims(target.dims(), source.dims())?;
    check_dims(target.dims(), depth_pp.dims())?;
    check_dims(target.dims(), depth_mono.dims())?;
    let pp = &params.photometric;

    let h_t_to_s = plane_homography(k, pose_t_to_s, plane)?;
    let warped = warp_by_homography(source, &h_t_to_s.inverse()?)?;

    let pose_s_to_t = pose_t_to_s.inverse();
    let t_z = pose_s_to_t.translation.z;
    let e = epipole(k, &pose_s_to_t);
    let gamma = gamma_from_depth(depth_pp, k, plane)?;
    let flowscale = flowscale_from_gamma(&gamma, t_z, plane)?;
    let flow = residual_flow_from_flowscale(&flowscale, &e)?;
    let synth_res = synthesize_from_residual_flow(&warped.image, Some(&warped.valid), &flow)?;
    let synth_mono = synthesize_from_depth(source, depth_mono, k, pose_t_to_s)?;
    let synth_pp = synthesize_from_depth(source, depth_pp, k, pose_t_to_s)?;

    let normals = surface_normals(depth_pp, k, params.neighbor_offset)?;
    let flat = road_flat_mask(&normals, &plane.normal, params.tau, Some(&gamma), params.gamma_tol, &params.prior)?;
    let auto = auto_mask(target, &[&synth_mono.image], &[source], pp)?;
    let cert = certainty_mask(&flow, depth_pp, k, pose_t_to_s, plane, params.epsilon)?;
    let static_ = static_mask(depth_mono, depth_pp, params.delta)?;

    let homo_support = flat.and(&warped.valid.eroded(pp.ssim_window / 2))?;
    let homo = loss_homo(&warped.image, target, &homo_support, pp)?;
    let mono = loss_mono(&[&synth_mono.image], target, &auto, pp)?;
    let mono_static = loss_mono(&[&synth_mono.image], target, &auto.and(&static_)?, pp)?;
    let pp_loss = loss_pp(&[&synth_pp.image], target, &auto, &cert, pp)?;
    let res = loss_res(&synth_res.image, target, pp)?;
    let consist = loss_consist(depth_mono, depth_pp, &static_)?;
    let smooth = smoothness_loss(&disparity(depth_mono)?, target)?;
    let components = ComponentLosses {
        mono: mono.value,
        mono_static: Some(mono_static.value),
        res: res.value,
        pp: pp_loss.value,
        homo: homo.value,
        consist: consist.value,
        smooth: smooth.value,
    };
    let total = schedule_total(params.stage, &components);

    Ok(PairOutputs {
        h_t_to_s,
        epipole: e,
        warped,
        gamma,
        flowscale,
        flow,
        synth_res,
        synth_mono,
        synth_pp,
        normals,
        masks: PairMasks {
            flat,
            homo_support,
            auto,
            cert,
            static_,
        },
        losses: PairLosses {
            homo,
            mono,
            mono_static,
            pp: pp_loss,
            res,
            consist,
            smooth,
            total,
        },
    })
}
