//! Photometric error (SSIM + L1), masks built from it, and the
//! self-supervision losses evaluated over image and depth fields.
//!
//! Every masked loss is `Σ_masked map / count`; an empty mask yields 0 with
//! [`LossReport::empty_mask`] set, never NaN. The consistency loss is a plain
//! sum over the static mask (see [`loss_consist`]); [`loss_consist_normalized`]
//! divides by the mask count instead.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::{DepthField, Grid, Mask, ScalarField};
use crate::sampling::{same_shape, ImageBuffer};

/// SSIM/L1 mixing weight α.
pub const DEFAULT_ALPHA: f64 = 0.85;
/// Relative depth disagreement threshold δ for the static mask.
pub const DEFAULT_STATIC_DELTA: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    pub alpha: f64,
    /// Odd SSIM window side, at least 3.
    pub ssim_window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            ssim_window: 3,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl PhotometricParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must lie in [0, 1], got {}", self.alpha),
            });
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::InvalidParameter {
                name: "ssim_window",
                reason: format!("must be odd and >= 3, got {}", self.ssim_window),
            });
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "c1/c2",
                reason: "SSIM stabilizers must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Per-channel SSIM at one pixel.
#[inline]
fn ssim_at(a: &ImageBuffer, b: &ImageBuffer, x: usize, y: usize, params: &PhotometricParams, out: &mut [f64]) {
    let r = (params.ssim_window / 2) as isize;
    let (w, h) = a.dims();
    let ch = a.channels();
    let mut acc = [[0.0f64; 5]; 3];
    for dy in -r..=r {
        let yy = reflect(y as isize + dy, h);
        for dx in -r..=r {
            let xx = reflect(x as isize + dx, w);
            let pa = a.pixel(xx, yy);
            let pb = b.pixel(xx, yy);
            for c in 0..ch {
                let (u, v) = (pa[c], pb[c]);
                let s = &mut acc[c];
                s[0] += u;
                s[1] += v;
                s[2] += u * u;
                s[3] += v * v;
                s[4] += u * v;
            }
        }
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    for c in 0..ch {
        let s = acc[c];
        let (mu_a, mu_b) = (s[0] / n, s[1] / n);
        let var_a = s[2] / n - mu_a * mu_a;
        let var_b = s[3] / n - mu_b * mu_b;
        let cov = s[4] / n - mu_a * mu_b;
        let num = (2.0 * mu_a * mu_b + params.c1) * (2.0 * cov + params.c2);
        let den = (mu_a * mu_a + mu_b * mu_b + params.c1) * (var_a + var_b + params.c2);
        out[c] = num / den;
    }
}

/// Channel-averaged SSIM over a reflection-padded window.
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer, params: &PhotometricParams) -> Result<ScalarField> {
    same_shape(a, b)?;
    params.validate()?;
    let ch = a.channels() as f64;
    Ok(Grid::from_fn(a.width(), a.height(), |x, y| {
        let mut s = [0.0; 3];
        ssim_at(a, b, x, y, params, &mut s);
        s[..a.channels()].iter().sum::<f64>() / ch
    }))
}

/// `pe = α/2 (1 − SSIM) + (1 − α) |a − b|`, channel-averaged.
///
/// `(1 − SSIM)/2` is clamped to [0, 1] per channel so rounding can never
/// push the error negative.
pub fn photometric_error(a: &ImageBuffer, b: &ImageBuffer, params: &PhotometricParams) -> Result<ScalarField> {
    same_shape(a, b)?;
    params.validate()?;
    let ch = a.channels();
    let alpha = params.alpha;
    Ok(Grid::from_fn(a.width(), a.height(), |x, y| {
        let mut s = [0.0; 3];
        ssim_at(a, b, x, y, params, &mut s);
        let (pa, pb) = (a.pixel(x, y), b.pixel(x, y));
        let mut total = 0.0;
        for c in 0..ch {
            let dssim = ((1.0 - s[c]) / 2.0).clamp(0.0, 1.0);
            total += alpha * dssim + (1.0 - alpha) * (pa[c] - pb[c]).abs();
        }
        total / ch as f64
    }))
}

/// Pixelwise minimum over several error maps.
pub fn min_error(errors: &[ScalarField]) -> Result<ScalarField> {
    let first = errors.first().ok_or(Error::EmptySourceList)?;
    for e in &errors[1..] {
        check_dims(first.dims(), e.dims())?;
    }
    Ok(Grid::from_fn(first.width(), first.height(), |x, y| {
        errors.iter().map(|e| *e.get(x, y)).fold(f64::INFINITY, f64::min)
    }))
}

/// M_auto from precomputed error maps: `min reprojection < min identity`.
pub fn auto_mask_from_errors(reprojection: &[ScalarField], identity: &[ScalarField]) -> Result<Mask> {
    let warped = min_error(reprojection)?;
    let raw = min_error(identity)?;
    check_dims(warped.dims(), raw.dims())?;
    Ok(Grid::from_fn(warped.width(), warped.height(), |x, y| {
        *warped.get(x, y) < *raw.get(x, y)
    }))
}

/// M_auto(p) = [min_s pe(I_t, Î_s) < min_s pe(I_t, I_s)].
pub fn auto_mask(
    target: &ImageBuffer,
    warped_sources: &[&ImageBuffer],
    raw_sources: &[&ImageBuffer],
    params: &PhotometricParams,
) -> Result<Mask> {
    if warped_sources.is_empty() || raw_sources.is_empty() {
        return Err(Error::EmptySourceList);
    }
    let reproj = warped_sources
        .iter()
        .map(|s| photometric_error(target, s, params))
        .collect::<Result<Vec<_>>>()?;
    let ident = raw_sources
        .iter()
        .map(|s| photometric_error(target, s, params))
        .collect::<Result<Vec<_>>>()?;
    auto_mask_from_errors(&reproj, &ident)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    /// Contributing pixels.
    pub count: usize,
    pub empty_mask: bool,
    pub reduction: Reduction,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakdown: Vec<LossTerm>,
    /// Per-pixel contributions (zero outside the mask).
    #[serde(skip)]
    pub map: Option<ScalarField>,
}

impl LossReport {
    fn reduce(map: ScalarField, mask: &Mask, reduction: Reduction) -> Result<Self> {
        let contributions = Grid::from_fn(map.width(), map.height(), |x, y| {
            if *mask.get(x, y) {
                *map.get(x, y)
            } else {
                0.0
            }
        });
        let (sum, count) = contributions.masked_sum(mask)?;
        let value = match (reduction, count) {
            (_, 0) => 0.0,
            (Reduction::Mean, n) => sum / n as f64,
            (Reduction::Sum, _) => sum,
        };
        Ok(Self {
            value,
            count,
            empty_mask: count == 0,
            reduction,
            breakdown: Vec::new(),
            map: Some(contributions),
        })
    }

    fn scalar(value: f64, breakdown: Vec<LossTerm>) -> Self {
        Self {
            value,
            count: 0,
            empty_mask: false,
            reduction: Reduction::Sum,
            breakdown,
            map: None,
        }
    }
}

/// Mean of `map` over `mask`.
pub fn masked_mean_loss(map: ScalarField, mask: &Mask) -> Result<LossReport> {
    check_dims(map.dims(), mask.dims())?;
    LossReport::reduce(map, mask, Reduction::Mean)
}

/// L_homo: mean pe(I_s^w, I_t) over the flat mask.
pub fn loss_homo(
    warped_source: &ImageBuffer,
    target: &ImageBuffer,
    flat: &Mask,
    params: &PhotometricParams,
) -> Result<LossReport> {
    masked_mean_loss(photometric_error(warped_source, target, params)?, flat)
}

fn min_pe(synthesized: &[&ImageBuffer], target: &ImageBuffer, params: &PhotometricParams) -> Result<ScalarField> {
    if synthesized.is_empty() {
        return Err(Error::EmptySourceList);
    }
    let errors = synthesized
        .iter()
        .map(|s| photometric_error(s, target, params))
        .collect::<Result<Vec<_>>>()?;
    min_error(&errors)
}

/// L_mono: mean over M_auto of pe(Î_t^d, I_t). With several synthesized
/// views the per-pixel minimum error is used.
pub fn loss_mono(
    synthesized: &[&ImageBuffer],
    target: &ImageBuffer,
    auto: &Mask,
    params: &PhotometricParams,
) -> Result<LossReport> {
    masked_mean_loss(min_pe(synthesized, target, params)?, auto)
}

/// L_pp: like [`loss_mono`] but over M_auto · M_cert.
pub fn loss_pp(
    synthesized: &[&ImageBuffer],
    target: &ImageBuffer,
    auto: &Mask,
    cert: &Mask,
    params: &PhotometricParams,
) -> Result<LossReport> {
    let mask = auto.and(cert)?;
    masked_mean_loss(min_pe(synthesized, target, params)?, &mask)
}

/// L_res: unmasked mean of pe(Î_t^res, I_t) over all pixels.
pub fn loss_res(synthesized: &ImageBuffer, target: &ImageBuffer, params: &PhotometricParams) -> Result<LossReport> {
    let map = photometric_error(synthesized, target, params)?;
    let all = Grid::filled(map.width(), map.height(), true);
    LossReport::reduce(map, &all, Reduction::Mean)
}

/// M_static = [max((D_mono − D_pp)/D_pp, (D_pp − D_mono)/D_mono) < δ].
///
/// Pixels where either depth is invalid or non-positive are 0.
pub fn static_mask(depth_mono: &DepthField, depth_pp: &DepthField, delta: f64) -> Result<Mask> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("must be positive, got {delta}"),
        });
    }
    check_dims(depth_mono.dims(), depth_pp.dims())?;
    let (w, h) = depth_mono.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        match (depth_mono.at(x, y), depth_pp.at(x, y)) {
            (Some(m), Some(p)) if m > 0.0 && p > 0.0 => ((m - p) / p).max((p - m) / m) < delta,
            _ => false,
        }
    }))
}

fn mean_normalized(depth: &DepthField) -> Result<ScalarField> {
    let mean = depth
        .valid_mean()
        .filter(|m| *m > 0.0)
        .ok_or(Error::EmptyMask("depth field has no valid positive pixels"))?;
    Ok(depth.values().map(|v| v / mean))
}

fn consist_map(depth_mono: &DepthField, depth_pp: &DepthField, static_mask: &Mask) -> Result<(ScalarField, Mask)> {
    check_dims(depth_mono.dims(), depth_pp.dims())?;
    check_dims(depth_mono.dims(), static_mask.dims())?;
    let mask = static_mask.and(depth_mono.valid())?.and(depth_pp.valid())?;
    if mask.count() == 0 {
        let (w, h) = mask.dims();
        return Ok((Grid::filled(w, h, 0.0), mask));
    }
    let m = mean_normalized(depth_mono)?;
    let p = mean_normalized(depth_pp)?;
    let (w, h) = mask.dims();
    let map = Grid::from_fn(w, h, |x, y| (m.get(x, y) - p.get(x, y)).abs());
    Ok((map, mask))
}

/// L_consist = Σ M_static |D̄_mono − D̄_pp|, each field divided by its own
/// valid-pixel mean. This is a sum, not a mean.
pub fn loss_consist(depth_mono: &DepthField, depth_pp: &DepthField, static_mask: &Mask) -> Result<LossReport> {
    let (map, mask) = consist_map(depth_mono, depth_pp, static_mask)?;
    LossReport::reduce(map, &mask, Reduction::Sum)
}

/// [`loss_consist`] divided by the number of masked pixels.
pub fn loss_consist_normalized(
    depth_mono: &DepthField,
    depth_pp: &DepthField,
    static_mask: &Mask,
) -> Result<LossReport> {
    let (map, mask) = consist_map(depth_mono, depth_pp, static_mask)?;
    LossReport::reduce(map, &mask, Reduction::Mean)
}

/// Edge-aware smoothness of the mean-normalized disparity.
///
/// Forward differences; the last row and column have no forward neighbor
/// and are dropped, so the mean runs over `(W−1)(H−1)` pixels.
pub fn smoothness_loss(disparity: &ScalarField, image: &ImageBuffer) -> Result<LossReport> {
    check_dims(disparity.dims(), image.dims())?;
    let (w, h) = disparity.dims();
    if w < 2 || h < 2 {
        return Err(Error::InvalidParameter {
            name: "disparity",
            reason: format!("needs at least 2x2 pixels, got {w}x{h}"),
        });
    }
    let mean = disparity.sum() / (w * h) as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Domain(format!("disparity mean must be positive, got {mean}")));
    }
    let ch = image.channels() as f64;
    let grad_i = |x0: usize, y0: usize, x1: usize, y1: usize| {
        let (p, q) = (image.pixel(x0, y0), image.pixel(x1, y1));
        p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / ch
    };
    let map = Grid::from_fn(w, h, |x, y| {
        if x + 1 >= w || y + 1 >= h {
            return 0.0;
        }
        let d = disparity.get(x, y) / mean;
        let dx = (disparity.get(x + 1, y) / mean - d).abs();
        let dy = (disparity.get(x, y + 1) / mean - d).abs();
        dx * (-grad_i(x, y, x + 1, y)).exp() + dy * (-grad_i(x, y, x, y + 1)).exp()
    });
    let interior = Grid::from_fn(w, h, |x, y| x + 1 < w && y + 1 < h);
    LossReport::reduce(map, &interior, Reduction::Mean)
}

/// Training stage selecting which losses enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// L_mono + L_res + L_pp.
    Early,
    /// Early terms plus L_homo.
    Homo,
    /// Parallax branch frozen: L_mono (static-masked) + L_homo + L_consist.
    Distill,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Ok(Stage::Early),
            "homo" => Ok(Stage::Homo),
            "distill" => Ok(Stage::Distill),
            other => Err(Error::UnknownStage(other.to_string())),
        }
    }
}

/// Scalar component losses. `smooth` is added as given, so callers apply
/// their own smoothness weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentLosses {
    pub mono: f64,
    /// L_mono additionally masked by M_static; the distill stage falls back
    /// to `mono` when absent.
    pub mono_static: Option<f64>,
    pub res: f64,
    pub pp: f64,
    pub homo: f64,
    pub consist: f64,
    pub smooth: f64,
}

pub fn schedule_total(stage: Stage, c: &ComponentLosses) -> LossReport {
    let terms: Vec<(&str, f64)> = match stage {
        Stage::Early => vec![("mono", c.mono), ("res", c.res), ("pp", c.pp)],
        Stage::Homo => vec![("mono", c.mono), ("res", c.res), ("pp", c.pp), ("homo", c.homo)],
        Stage::Distill => vec![
            ("mono_static", c.mono_static.unwrap_or(c.mono)),
            ("homo", c.homo),
            ("consist", c.consist),
        ],
    };
    let breakdown: Vec<LossTerm> = terms
        .into_iter()
        .chain(std::iter::once(("smooth", c.smooth)))
        .map(|(name, value)| LossTerm {
            name: name.to_string(),
            value,
        })
        .collect();
    let total = breakdown.iter().map(|t| t.value).sum();
    LossReport::scalar(total, breakdown)
}

/// Parses the stage tag and composes the total.
pub fn schedule_total_tagged(stage: &str, c: &ComponentLosses) -> Result<LossReport> {
    Ok(schedule_total(stage.parse()?, c))
}
