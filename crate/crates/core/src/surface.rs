//! Surface normals from depth, the cosine flat-area test and the
//! trapezoidal road prior.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::grid::{DepthField, Grid, Mask, NormalField, StructureField};

/// Default neighbor offset for [`surface_normals`], pixels.
pub const DEFAULT_NEIGHBOR_OFFSET: usize = 2;
/// Structure tolerance used by the road prior.
pub const DEFAULT_GAMMA_TOL: f64 = 0.05;

/// cos(3°), the default flatness threshold τ.
pub fn default_tau() -> f64 {
    3.0f64.to_radians().cos()
}

/// Neighbor pairs as (row, column) offsets in units of the neighbor offset.
const PAIRS: [[(isize, isize); 2]; 4] = [
    [(0, -1), (-1, 0)],
    [(0, 1), (1, 0)],
    [(-1, -1), (1, -1)],
    [(-1, 1), (1, 1)],
];

/// Per-pixel normals from back-projected depth.
///
/// Each of the four neighbor-vector pairs contributes its normalized cross
/// product, flipped to face the camera (negative dot with the viewing ray)
/// before averaging. The mean is
/// renormalized. Pixels within `offset` of the border, or with any invalid
/// neighbor, are invalid.
pub fn surface_normals(depth: &DepthField, k: &CameraIntrinsics, offset: usize) -> Result<NormalField> {
    k.validate()?;
    let (w, h) = depth.dims();
    if offset == 0 {
        return Err(Error::InvalidParameter {
            name: "offset",
            reason: "neighbor offset must be at least 1".into(),
        });
    }
    if w <= 2 * offset || h <= 2 * offset {
        return Err(Error::InvalidParameter {
            name: "offset",
            reason: format!("image {w}x{h} too small for neighbor offset {offset}"),
        });
    }
    let point = |x: usize, y: usize| -> Option<Vector3<f64>> {
        let d = depth.at(x, y)?;
        (d > 0.0).then(|| k.ray(x as f64, y as f64) * d)
    };
    let n = offset as isize;
    Ok(NormalField::from_fn(w, h, |x, y| {
        if x < offset || y < offset || x + offset >= w || y + offset >= h {
            return None;
        }
        let center = point(x, y)?;
        let at = |(dr, dc): (isize, isize)| {
            point((x as isize + dc * n) as usize, (y as isize + dr * n) as usize)
        };
        let mut sum = Vector3::zeros();
        for [a, b] in PAIRS {
            let v1 = at(a)? - center;
            let v2 = at(b)? - center;
            let c = v1.cross(&v2);
            let norm = c.norm();
            if !(norm > 0.0) {
                return None;
            }
            let mut unit = c / norm;
            if unit.dot(&center) > 0.0 {
                unit = -unit;
            }
            sum += unit;
        }
        let norm = sum.norm();
        (norm > 0.0).then(|| sum / norm)
    }))
}

/// Cosine flat test: `|cos(n(p), N)| > τ` on valid normals.
pub fn flat_mask(normals: &NormalField, plane_normal: &Vector3<f64>, tau: f64) -> Result<Mask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must lie in (0, 1), got {tau}"),
        });
    }
    let pn = plane_normal.norm();
    if !(pn > 0.0) {
        return Err(Error::InvalidParameter {
            name: "plane_normal",
            reason: "must be non-zero".into(),
        });
    }
    let reference = plane_normal / pn;
    let (w, h) = normals.dims();
    Ok(Grid::from_fn(w, h, |x, y| match normals.at(x, y) {
        Some(n) => n.dot(&reference).abs() / n.norm() > tau,
        None => false,
    }))
}

/// Trapezoid centered in the image, given as fractions of width/height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidPrior {
    pub bottom_left: f64,
    pub bottom_right: f64,
    pub top_left: f64,
    pub top_right: f64,
    /// Row of the top edge as a fraction of the height.
    pub top_row: f64,
}

impl Default for TrapezoidPrior {
    fn default() -> Self {
        Self {
            bottom_left: 0.05,
            bottom_right: 0.95,
            top_left: 0.35,
            top_right: 0.65,
            top_row: 0.55,
        }
    }
}

impl TrapezoidPrior {
    /// Whether pixel center `(x, y)` lies inside the trapezoid. The bottom
    /// edge sits on the last row.
    pub fn contains(&self, x: usize, y: usize, width: usize, height: usize) -> bool {
        let (wf, yf) = (width as f64, y as f64);
        let top = self.top_row * height as f64;
        let bottom = (height - 1) as f64;
        if yf < top || yf > bottom {
            return false;
        }
        let t = if bottom > top { (yf - top) / (bottom - top) } else { 1.0 };
        let left = (self.top_left + t * (self.bottom_left - self.top_left)) * wf;
        let right = (self.top_right + t * (self.bottom_right - self.top_right)) * wf;
        let xf = x as f64;
        xf >= left && xf <= right
    }

    pub fn mask(&self, width: usize, height: usize) -> Mask {
        Grid::from_fn(width, height, |x, y| self.contains(x, y, width, height))
    }
}

/// Trapezoid ∩ {|γ| ≤ γ_tol}.
///
/// With `gamma = None` only the trapezoid is applied (for scale-ambiguous
/// depth maps).
pub fn trapezoid_road_mask(
    width: usize,
    height: usize,
    gamma: Option<&StructureField>,
    gamma_tol: f64,
    prior: &TrapezoidPrior,
) -> Result<Mask> {
    if !(gamma_tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma_tol",
            reason: format!("must be positive, got {gamma_tol}"),
        });
    }
    if let Some(g) = gamma {
        check_dims((width, height), g.dims())?;
    }
    Ok(Grid::from_fn(width, height, |x, y| {
        prior.contains(x, y, width, height)
            && gamma.map_or(true, |g| g.at(x, y).is_some_and(|v| v.abs() <= gamma_tol))
    }))
}

/// Full flat-road detector: cosine test ∩ trapezoid ∩ γ threshold.
pub fn road_flat_mask(
    normals: &NormalField,
    plane_normal: &Vector3<f64>,
    tau: f64,
    gamma: Option<&StructureField>,
    gamma_tol: f64,
    prior: &TrapezoidPrior,
) -> Result<Mask> {
    let (w, h) = normals.dims();
    flat_mask(normals, plane_normal, tau)?.and(&trapezoid_road_mask(w, h, gamma, gamma_tol, prior)?)
}
