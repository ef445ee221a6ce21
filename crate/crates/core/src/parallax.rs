//! Conversions between structure γ, flowscale S, residual flow and depth.
//!
//! With `a = T_z / h_c`, where `T_z` is the z component of the source camera
//! center in target coordinates (`T_{s→t}.z`):
//!
//! ```text
//!   S     = γa / (1 − γa)
//!   γ     = S / (S + 1) · h_c / T_z
//!   u_res = S · (p − e_t)          (warped source is sampled at p + u_res)
//!   D     = h_c / (γ + Nᵀ K⁻¹ p̃)
//! ```
//!
//! The sign of S is positive here; the leading minus that appears in the
//! classical parallax formula is absorbed by sampling the warped source at
//! `p + u_res` rather than splatting it. Pixels with `γa ≥ 1` (equivalently
//! `S ≤ −1`) have no finite warped correspondence and are marked invalid in
//! both directions, so the two conversions are exact inverses on their
//! valid domains.

use crate::error::{check_dims, Error, Result};
use crate::geometry::{plane_homography, CameraIntrinsics, Epipole, GroundPlane, RigidPose, BASELINE_EPS};
use crate::grid::{DepthField, FlowScaleField, Grid, Mask, ResidualFlowField, ScalarField, StructureField};
use crate::sampling::{depth_reprojection_grid, SampleGrid};

/// Denominators closer to zero than this invalidate the pixel.
pub const DENOM_EPS: f64 = 1e-9;

/// Default exclusion radius around the epipole, pixels.
pub const DEFAULT_EPIPOLE_RADIUS: f64 = 2.0;

fn check_baseline(t_z: f64) -> Result<()> {
    if !(t_z.abs() >= BASELINE_EPS) {
        return Err(Error::DegenerateBaseline {
            t_z,
            threshold: BASELINE_EPS,
        });
    }
    Ok(())
}

/// Per-pixel S from γ; `None` when `1 − γa ≤ 1e-9`.
#[inline]
pub fn flowscale_of(gamma: f64, t_z: f64, h_c: f64) -> Option<f64> {
    let g = gamma * t_z / h_c;
    let denom = 1.0 - g;
    (denom > DENOM_EPS).then(|| g / denom)
}

/// Per-pixel γ from S; `None` when `S + 1 ≤ 1e-9`.
#[inline]
pub fn gamma_of(flowscale: f64, t_z: f64, h_c: f64) -> Option<f64> {
    let denom = flowscale + 1.0;
    (denom > DENOM_EPS).then(|| flowscale / denom * (h_c / t_z))
}

pub fn flowscale_from_gamma(gamma: &StructureField, t_z: f64, plane: &GroundPlane) -> Result<FlowScaleField> {
    check_baseline(t_z)?;
    plane.validate()?;
    let (w, h) = gamma.dims();
    Ok(FlowScaleField::from_fn(w, h, |x, y| {
        flowscale_of(gamma.at(x, y)?, t_z, plane.height)
    }))
}

pub fn gamma_from_flowscale(flowscale: &FlowScaleField, t_z: f64, plane: &GroundPlane) -> Result<StructureField> {
    check_baseline(t_z)?;
    plane.validate()?;
    let (w, h) = flowscale.dims();
    Ok(StructureField::from_fn(w, h, |x, y| {
        gamma_of(flowscale.at(x, y)?, t_z, plane.height)
    }))
}

/// `u_res(p) = S(p) · (p − e_t)`.
pub fn residual_flow_from_flowscale(flowscale: &FlowScaleField, epipole: &Epipole) -> Result<ResidualFlowField> {
    let [eu, ev] = epipole.point().ok_or(Error::EpipoleAtInfinity)?;
    let (w, h) = flowscale.dims();
    Ok(ResidualFlowField::from_fn(w, h, |x, y| {
        let s = flowscale.at(x, y)?;
        Some([s * (x as f64 - eu), s * (y as f64 - ev)])
    }))
}

/// Result of projecting a flow field onto the epipolar directions.
#[derive(Clone, Debug, PartialEq)]
pub struct EpipolarProjection {
    pub flowscale: FlowScaleField,
    /// Magnitude of the flow component perpendicular to `p − e_t`, pixels.
    pub off_line: ScalarField,
}

impl EpipolarProjection {
    /// Valid pixels whose flow leaves the epipolar line by more than `tol` px.
    pub fn off_epipolar_mask(&self, tol: f64) -> Mask {
        let (w, h) = self.off_line.dims();
        Grid::from_fn(w, h, |x, y| self.flowscale.is_valid(x, y) && *self.off_line.get(x, y) > tol)
    }
}

/// Least-squares S with `S (p − e_t) ≈ u`, i.e. `S = u·d / |d|²`.
///
/// Pixels within `exclusion_radius` of the epipole are invalid.
pub fn flowscale_from_residual_flow(
    flow: &ResidualFlowField,
    epipole: &Epipole,
    exclusion_radius: f64,
) -> Result<EpipolarProjection> {
    let [eu, ev] = epipole.point().ok_or(Error::EpipoleAtInfinity)?;
    if !(exclusion_radius >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "exclusion_radius",
            reason: format!("must be non-negative, got {exclusion_radius}"),
        });
    }
    let (w, h) = flow.dims();
    let both = Grid::from_fn(w, h, |x, y| {
        let [du, dv] = flow.at(x, y)?;
        let (dx, dy) = (x as f64 - eu, y as f64 - ev);
        let n2 = dx * dx + dy * dy;
        if !(n2.sqrt() > exclusion_radius) || n2 == 0.0 {
            return None;
        }
        let s = (du * dx + dv * dy) / n2;
        let perp = (du * dy - dv * dx).abs() / n2.sqrt();
        Some((s, perp))
    });
    let flowscale = FlowScaleField::from_fn(w, h, |x, y| (*both.get(x, y)).map(|(s, _)| s));
    let off_line = both.map(|v| (*v).map_or(0.0, |(_, p)| p));
    Ok(EpipolarProjection { flowscale, off_line })
}

/// `D = h_c / (γ + Nᵀ K⁻¹ p̃)`; non-positive denominators are invalid.
pub fn depth_from_gamma(gamma: &StructureField, k: &CameraIntrinsics, plane: &GroundPlane) -> Result<DepthField> {
    k.validate()?;
    plane.validate()?;
    let (w, h) = gamma.dims();
    Ok(DepthField::from_fn(w, h, |x, y| {
        let g = gamma.at(x, y)?;
        let denom = g + plane.normal.dot(&k.ray(x as f64, y as f64));
        let d = plane.height / denom;
        (denom > 0.0 && d.is_finite()).then_some(d)
    }))
}

/// `γ = h_c / D − Nᵀ K⁻¹ p̃`, the inverse of [`depth_from_gamma`].
pub fn gamma_from_depth(depth: &DepthField, k: &CameraIntrinsics, plane: &GroundPlane) -> Result<StructureField> {
    k.validate()?;
    plane.validate()?;
    let (w, h) = depth.dims();
    Ok(StructureField::from_fn(w, h, |x, y| {
        let d = depth.at(x, y)?;
        (d > 0.0).then(|| plane.height / d - plane.normal.dot(&k.ray(x as f64, y as f64)))
    }))
}

fn check_bins(f_min: f64, f_max: f64) -> Result<()> {
    if !(f_min < f_max && f_min.is_finite() && f_max.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "f_min/f_max",
            reason: format!("need finite f_min < f_max, got [{f_min}, {f_max}]"),
        });
    }
    Ok(())
}

/// Maps raw decoder output in [0, 1] to `S = f_min + raw · (f_max − f_min)`.
///
/// Out-of-range values are clamped; the second return value counts them.
/// Non-finite inputs become invalid pixels.
pub fn bin_flowscale(raw: &ScalarField, f_min: f64, f_max: f64) -> Result<(FlowScaleField, usize)> {
    check_bins(f_min, f_max)?;
    let clamped = raw.data().iter().filter(|v| v.is_finite() && !(0.0..=1.0).contains(*v)).count();
    let (w, h) = raw.dims();
    let field = FlowScaleField::from_fn(w, h, |x, y| {
        let r = *raw.get(x, y);
        r.is_finite().then(|| f_min + r.clamp(0.0, 1.0) * (f_max - f_min))
    });
    Ok((field.with_bounds(f_min, f_max), clamped))
}

/// Inverse of [`bin_flowscale`]: `raw = (S − f_min) / (f_max − f_min)`.
pub fn unbin_flowscale(flowscale: &FlowScaleField, f_min: f64, f_max: f64) -> Result<ScalarField> {
    check_bins(f_min, f_max)?;
    Ok(flowscale.values().map(|s| (s - f_min) / (f_max - f_min)))
}

/// M_cert: 1 where the flow-implied and depth-implied correspondences agree.
///
/// The flow coordinate `p + u_res(p)` lives in the homography-warped source
/// frame; it is carried into the source image with `H_{t→s}` and compared
/// against `proj(D_pp, R_{t→s}, T_{t→s})`. Pixels where either coordinate is
/// undefined are 0.
pub fn certainty_mask(
    flow: &ResidualFlowField,
    depth_pp: &DepthField,
    k: &CameraIntrinsics,
    pose_t_to_s: &RigidPose,
    plane: &GroundPlane,
    epsilon: f64,
) -> Result<Mask> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("must be positive, got {epsilon}"),
        });
    }
    check_dims(flow.dims(), depth_pp.dims())?;
    let h_t_to_s = plane_homography(k, pose_t_to_s, plane)?;
    let by_depth: SampleGrid = depth_reprojection_grid(depth_pp, k, pose_t_to_s)?;
    let (w, h) = flow.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        let Some([du, dv]) = flow.at(x, y) else { return false };
        if !*by_depth.valid.get(x, y) {
            return false;
        }
        let Some(q_flow) = h_t_to_s.apply([x as f64 + du, y as f64 + dv]) else {
            return false;
        };
        let q_depth = by_depth.coords.get(x, y);
        let dist = (q_flow[0] - q_depth[0]).hypot(q_flow[1] - q_depth[1]);
        dist <= epsilon
    }))
}
