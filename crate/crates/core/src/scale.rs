//! Metric scale recovery from the known camera mounting height.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::geometry::{CameraIntrinsics, GroundPlane};
use crate::grid::{DepthField, Mask};

/// Default RANSAC iteration count.
pub const DEFAULT_RANSAC_ITERS: usize = 200;
/// Default inlier tolerance as a fraction of the camera height.
pub const DEFAULT_RELATIVE_TOL: f64 = 0.02;
/// Default RANSAC seed.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMethod {
    Ransac,
    Median,
}

impl fmt::Display for ScaleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleMethod::Ransac => "ransac",
            ScaleMethod::Median => "median",
        })
    }
}

impl FromStr for ScaleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ransac" => Ok(ScaleMethod::Ransac),
            "median" => Ok(ScaleMethod::Median),
            other => Err(Error::InvalidParameter {
                name: "method",
                reason: format!("expected ransac or median, got {other:?}"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub plane: GroundPlane,
    /// Fraction of the supplied points within tolerance of the refit plane.
    pub inlier_ratio: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier tolerance, meters.
    pub inlier_tol: f64,
    pub seed: u64,
}

fn plane_through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    let scale = (b - a).norm().max((c - a).norm());
    if !(len > 1e-12 * scale * scale) {
        return None;
    }
    let n = n / len;
    Some((n, n.dot(a)))
}

/// Orients `(n, d)` so that `d ≥ 0`, i.e. the normal points away from the
/// origin toward the plane.
fn oriented(n: Vector3<f64>, d: f64) -> (Vector3<f64>, f64) {
    if d < 0.0 {
        (-n, -d)
    } else {
        (n, d)
    }
}

fn count_inliers(points: &[Vector3<f64>], n: &Vector3<f64>, d: f64, tol: f64) -> usize {
    points.par_iter().filter(|p| (n.dot(p) - d).abs() <= tol).count()
}

fn centroid(points: &[&Vector3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + *p) / points.len() as f64
}

/// Total least-squares plane: normal is the smallest-eigenvalue eigenvector
/// of the scatter matrix. Returns the eigenvalues (ascending) as well.
fn least_squares_plane(points: &[&Vector3<f64>]) -> (Vector3<f64>, f64, [f64; 3]) {
    let c = centroid(points);
    let mut scatter = Matrix3::zeros();
    for p in points {
        let q = *p - c;
        scatter += q * q.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let values = order.map(|i| eig.eigenvalues[i]);
    (n, n.dot(&c), values)
}

/// RANSAC plane fit with a least-squares refit on the best inlier set.
///
/// Deterministic for a given seed; ties in inlier count keep the earliest
/// hypothesis. The returned plane is oriented so its offset is positive.
pub fn fit_plane_ransac(points: &[Vector3<f64>], params: &RansacParams) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if params.iterations == 0 {
        return Err(Error::InvalidParameter {
            name: "iterations",
            reason: "must be at least 1".into(),
        });
    }
    if !(params.inlier_tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "inlier_tol",
            reason: format!("must be positive, got {}", params.inlier_tol),
        });
    }
    let all: Vec<&Vector3<f64>> = points.iter().collect();
    let (_, _, spread) = least_squares_plane(&all);
    if !(spread[1] > 1e-18 * spread[2].max(1e-300)) {
        return Err(Error::DegenerateFit("points are collinear".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_pts = points.len();
    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    for _ in 0..params.iterations {
        let i = rng.gen_range(0..n_pts);
        let j = rng.gen_range(0..n_pts);
        let k = rng.gen_range(0..n_pts);
        if i == j || j == k || i == k {
            continue;
        }
        let Some((n, d)) = plane_through(&points[i], &points[j], &points[k]) else {
            continue;
        };
        let count = count_inliers(points, &n, d, params.inlier_tol);
        if best.map_or(true, |(_, _, c)| count > c) {
            best = Some((n, d, count));
        }
    }
    let (n, d) = match best {
        Some((n, d, _)) => (n, d),
        None => {
            let (n, d, _) = least_squares_plane(&all);
            (n, d)
        }
    };
    let inliers: Vec<&Vector3<f64>> =
        points.iter().filter(|p| (n.dot(p) - d).abs() <= params.inlier_tol).collect();
    let (n, d) = if inliers.len() >= 3 {
        let (rn, rd, vals) = least_squares_plane(&inliers);
        if vals[1] > 0.0 {
            (rn, rd)
        } else {
            (n, d)
        }
    } else {
        (n, d)
    };
    let (n, d) = oriented(n, d);
    if !(d > 0.0) {
        return Err(Error::DegenerateFit("fitted plane passes through the camera center".into()));
    }
    let refit_inliers = count_inliers(points, &n, d, params.inlier_tol);
    Ok(PlaneFit {
        plane: GroundPlane::from_direction(n, d)?,
        inlier_ratio: refit_inliers as f64 / n_pts as f64,
        iterations: params.iterations,
    })
}

/// Back-projected camera-frame points of valid, positive-depth pixels in `mask`,
/// in row-major order.
pub fn masked_points(depth: &DepthField, k: &CameraIntrinsics, mask: &Mask) -> Result<Vec<Vector3<f64>>> {
    k.validate()?;
    check_dims(depth.dims(), mask.dims())?;
    let (w, h) = depth.dims();
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            if let Some(d) = depth.at(x, y).filter(|d| *d > 0.0) {
                points.push(k.ray(x as f64, y as f64) * d);
            }
        }
    }
    Ok(points)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Options for [`camera_height_from_depth`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightOptions {
    /// Reference ground normal (camera → plane direction) for the median method.
    pub normal: Vector3<f64>,
    pub iterations: usize,
    /// RANSAC tolerance relative to the median height of the same points.
    pub relative_tol: f64,
    pub seed: u64,
}

impl Default for HeightOptions {
    fn default() -> Self {
        Self {
            normal: Vector3::new(0.0, 1.0, 0.0),
            iterations: DEFAULT_RANSAC_ITERS,
            relative_tol: DEFAULT_RELATIVE_TOL,
            seed: DEFAULT_SEED,
        }
    }
}

/// Camera height implied by a depth map over flat pixels.
///
/// `Median`: median over flat pixels of `Nᵀ P` with the reference normal.
/// `Ransac`: offset of the plane fitted to the flat pixels' points, using an
/// inlier tolerance of `relative_tol` times the median height so the fit is
/// equivariant under depth rescaling. Returns the height and, for RANSAC,
/// the inlier ratio.
pub fn camera_height_from_depth(
    depth: &DepthField,
    k: &CameraIntrinsics,
    flat: &Mask,
    method: ScaleMethod,
    options: &HeightOptions,
) -> Result<(f64, Option<f64>)> {
    let points = masked_points(depth, k, flat)?;
    if points.is_empty() {
        return Err(Error::EmptyMask("flat"));
    }
    let nn = options.normal.norm();
    if !(nn > 0.0) {
        return Err(Error::InvalidParameter {
            name: "normal",
            reason: "reference normal must be non-zero".into(),
        });
    }
    let normal = options.normal / nn;
    let mut heights: Vec<f64> = points.iter().map(|p| normal.dot(p)).collect();
    let h_median = median(&mut heights);
    match method {
        ScaleMethod::Median => {
            if !(h_median > 0.0) {
                return Err(Error::DegenerateFit(format!("median camera height {h_median} is not positive")));
            }
            Ok((h_median, None))
        }
        ScaleMethod::Ransac => {
            if !(options.relative_tol > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "relative_tol",
                    reason: format!("must be positive, got {}", options.relative_tol),
                });
            }
            let fit = fit_plane_ransac(
                &points,
                &RansacParams {
                    iterations: options.iterations,
                    inlier_tol: options.relative_tol * h_median.abs().max(f64::MIN_POSITIVE),
                    seed: options.seed,
                },
            )?;
            Ok((fit.plane.height, Some(fit.inlier_ratio)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub method: ScaleMethod,
    pub h_pred: f64,
    pub h_true: f64,
    pub scale: f64,
    pub inlier_ratio: Option<f64>,
}

impl ScaleEstimate {
    pub fn new(method: ScaleMethod, h_pred: f64, h_true: f64, inlier_ratio: Option<f64>) -> Result<Self> {
        check_heights(h_pred, h_true)?;
        Ok(Self {
            method,
            h_pred,
            h_true,
            scale: h_pred / h_true,
            inlier_ratio,
        })
    }
}

fn check_heights(h_pred: f64, h_true: f64) -> Result<()> {
    for (name, v) in [("h_pred", h_pred), ("h_true", h_true)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be positive, got {v}"),
            });
        }
    }
    Ok(())
}

/// Estimates the scale of `depth` against the known camera height.
pub fn estimate_scale(
    depth: &DepthField,
    k: &CameraIntrinsics,
    flat: &Mask,
    h_true: f64,
    method: ScaleMethod,
    options: &HeightOptions,
) -> Result<ScaleEstimate> {
    let (h_pred, ratio) = camera_height_from_depth(depth, k, flat, method, options)?;
    ScaleEstimate::new(method, h_pred, h_true, ratio)
}

/// Divides depth by `h_pred / h_true` so the corrected map implies `h_true`.
pub fn recover_and_apply_scale(depth: &DepthField, h_pred: f64, h_true: f64) -> Result<DepthField> {
    check_heights(h_pred, h_true)?;
    Ok(depth.scaled(h_true / h_pred))
}
