//! Bilinear sampling and the three view-synthesis warps.
//!
//! All warps are backward: each output pixel looks up a coordinate in the
//! input image. Coordinates outside `[0, W−1] × [0, H−1]` (with a 1e-9
//! tolerance at the border) produce zero and clear the validity flag.

use nalgebra::Vector3;

use crate::error::{check_dims, Error, Result};
use crate::geometry::{CameraIntrinsics, Homography, RigidPose};
use crate::grid::{DepthField, Grid, Mask, ResidualFlowField};

const BORDER_EPS: f64 = 1e-9;

/// Row-major float image, values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter {
                name: "channels",
                reason: format!("must be 1 or 3, got {channels}"),
            });
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({width}x{height}x{channels})", width * height * channels),
                found: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("image contains non-finite value {bad}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from a per-pixel closure writing `channels` values.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Sync,
    {
        let pixels = Grid::from_fn(width, height, |x, y| {
            let mut px = [0.0; 3];
            f(x, y, &mut px[..channels]);
            px
        });
        let mut data = Vec::with_capacity(width * height * channels);
        for px in pixels.data() {
            data.extend_from_slice(&px[..channels]);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel-averaged intensity.
    #[inline]
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        self.pixel(x, y).iter().sum::<f64>() / self.channels as f64
    }

    /// `a·self + b·other`, elementwise.
    pub fn lin_comb(&self, a: f64, other: &ImageBuffer, b: f64) -> Result<ImageBuffer> {
        same_shape(self, other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(p, q)| a * p + b * q).collect(),
            ..*self
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        Self {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..*self
        }
    }
}

pub(crate) fn same_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    check_dims(a.dims(), b.dims())?;
    if a.channels != b.channels {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", a.channels),
            found: format!("{} channels", b.channels),
        });
    }
    Ok(())
}

/// Per-output-pixel lookup coordinates in the input image.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub coords: Grid<[f64; 2]>,
    pub valid: Mask,
}

impl SampleGrid {
    /// `f` returns `None` where no lookup coordinate exists.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> Option<[f64; 2]> + Sync,
    {
        let both = Grid::from_fn(width, height, |x, y| match f(x, y) {
            Some(c) if c[0].is_finite() && c[1].is_finite() => (c, true),
            _ => ([0.0, 0.0], false),
        });
        let coords = both.map(|(c, _)| *c);
        let valid = both.map(|(_, v)| *v);
        Self { coords, valid }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| Some([x as f64, y as f64]))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.coords.dims()
    }
}

/// An image produced by sampling, with per-pixel validity.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledImage {
    pub image: ImageBuffer,
    pub valid: Mask,
}

/// Bilinear weights for one lookup: four (x, y, weight) taps.
#[inline]
fn bilinear_taps(width: usize, height: usize, u: f64, v: f64) -> Option<[(usize, usize, f64); 4]> {
    let max_u = (width - 1) as f64;
    let max_v = (height - 1) as f64;
    if !(u >= -BORDER_EPS && u <= max_u + BORDER_EPS && v >= -BORDER_EPS && v <= max_v + BORDER_EPS) {
        return None;
    }
    let u = u.clamp(0.0, max_u);
    let v = v.clamp(0.0, max_v);
    let x0 = (u.floor() as usize).min(width.saturating_sub(2));
    let y0 = (v.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = u - x0 as f64;
    let ay = v - y0 as f64;
    Some([
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x1, y0, ax * (1.0 - ay)),
        (x0, y1, (1.0 - ax) * ay),
        (x1, y1, ax * ay),
    ])
}

/// Bilinear lookup of `image` at every grid coordinate.
pub fn bilinear_sample(image: &ImageBuffer, grid: &SampleGrid) -> SampledImage {
    sample_impl(image, None, grid)
}

/// Like [`bilinear_sample`], additionally invalidating outputs that draw any
/// non-zero weight from an invalid input pixel.
pub fn bilinear_sample_masked(
    image: &ImageBuffer,
    image_valid: &Mask,
    grid: &SampleGrid,
) -> Result<SampledImage> {
    check_dims(image.dims(), image_valid.dims())?;
    Ok(sample_impl(image, Some(image_valid), grid))
}

fn sample_impl(image: &ImageBuffer, image_valid: Option<&Mask>, grid: &SampleGrid) -> SampledImage {
    let (w, h) = grid.dims();
    let ch = image.channels;
    let out = Grid::from_fn(w, h, |x, y| {
        let mut px = [0.0; 3];
        if !*grid.valid.get(x, y) {
            return (px, false);
        }
        let [u, v] = *grid.coords.get(x, y);
        let Some(taps) = bilinear_taps(image.width, image.height, u, v) else {
            return (px, false);
        };
        if let Some(mask) = image_valid {
            if taps.iter().any(|&(tx, ty, wgt)| wgt > 0.0 && !*mask.get(tx, ty)) {
                return (px, false);
            }
        }
        for &(tx, ty, wgt) in &taps {
            let src = image.pixel(tx, ty);
            for c in 0..ch {
                px[c] += wgt * src[c];
            }
        }
        (px, true)
    });
    let mut data = Vec::with_capacity(w * h * ch);
    let mut valid = Vec::with_capacity(w * h);
    for (px, ok) in out.data() {
        data.extend_from_slice(&px[..ch]);
        valid.push(*ok);
    }
    SampledImage {
        image: ImageBuffer {
            width: w,
            height: h,
            channels: ch,
            data,
        },
        valid: Grid::from_vec(w, h, valid).expect("sized by construction"),
    }
}

/// Warps `source` into the target view with `h_s_to_t` (source pixels →
/// target pixels): output `p_t` samples the source at `H⁻¹ p_t`.
pub fn warp_by_homography(source: &ImageBuffer, h_s_to_t: &Homography) -> Result<SampledImage> {
    let inv = h_s_to_t.inverse()?;
    let grid = SampleGrid::from_fn(source.width, source.height, |x, y| {
        inv.apply([x as f64, y as f64])
    });
    Ok(bilinear_sample(source, &grid))
}

/// Source-image coordinates of each target pixel reprojected with its depth:
/// `proj(D_t, R_{t→s}, T_{t→s})`. Points behind the source camera are invalid.
pub fn depth_reprojection_grid(
    depth_t: &DepthField,
    k: &CameraIntrinsics,
    pose_t_to_s: &RigidPose,
) -> Result<SampleGrid> {
    k.validate()?;
    let (w, h) = depth_t.dims();
    Ok(SampleGrid::from_fn(w, h, |x, y| {
        let d = depth_t.at(x, y)?;
        if !(d > 0.0) {
            return None;
        }
        let p_t: Vector3<f64> = k.ray(x as f64, y as f64) * d;
        let p_s = pose_t_to_s.transform_point(&p_t);
        (p_s.z > 0.0).then(|| k.project_unchecked(&p_s))
    }))
}

/// Î_t^d = I_s⟨proj(D_t, R_{t→s}, T_{t→s})⟩.
pub fn synthesize_from_depth(
    source: &ImageBuffer,
    depth_t: &DepthField,
    k: &CameraIntrinsics,
    pose_t_to_s: &RigidPose,
) -> Result<SampledImage> {
    let grid = depth_reprojection_grid(depth_t, k, pose_t_to_s)?;
    Ok(bilinear_sample(source, &grid))
}

/// Lookup coordinates `p + u_res(p)`.
pub fn residual_flow_grid(flow: &ResidualFlowField) -> SampleGrid {
    let (w, h) = flow.dims();
    SampleGrid::from_fn(w, h, |x, y| {
        let [du, dv] = flow.at(x, y)?;
        Some([x as f64 + du, y as f64 + dv])
    })
}

/// Î_t^res = I_s^w⟨u_res⟩: output `p` samples the warped source at `p + u_res(p)`.
///
/// Pass the warp's validity mask as `warped_valid` to also invalidate outputs
/// that would read zero-filled warp pixels.
pub fn synthesize_from_residual_flow(
    warped_source: &ImageBuffer,
    warped_valid: Option<&Mask>,
    flow: &ResidualFlowField,
) -> Result<SampledImage> {
    check_dims(warped_source.dims(), flow.dims())?;
    let grid = residual_flow_grid(flow);
    match warped_valid {
        Some(mask) => bilinear_sample_masked(warped_source, mask, &grid),
        None => Ok(bilinear_sample(warped_source, &grid)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MaskedField;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, px| {
            px[0] = 0.5 + 0.3 * (x as f64 * 0.21).sin() * (y as f64 * 0.17).cos();
        })
    }

    fn noise_image(w: usize, h: usize, ch: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * ch).map(|_| rng.gen::<f64>()).collect();
        ImageBuffer::new(w, h, ch, data).unwrap()
    }

    fn translation(dx: f64, dy: f64) -> Homography {
        Homography::new(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn lattice_coordinates_copy_pixels() {
        let img = noise_image(9, 7, 3, 1);
        let out = bilinear_sample(&img, &SampleGrid::identity(9, 7));
        assert_eq!(out.image, img);
        assert!(out.valid.all());
    }

    #[test]
    fn midpoint_averages() {
        let img = ImageBuffer::new(2, 1, 1, vec![0.2, 0.8]).unwrap();
        let grid = SampleGrid::from_fn(1, 1, |_, _| Some([0.5, 0.0]));
        let out = bilinear_sample(&img, &grid);
        assert!((out.image.get(0, 0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageBuffer::filled(10, 8, 3, 0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<[f64; 2]> = (0..80).map(|_| [rng.gen_range(0.0..9.0), rng.gen_range(0.0..7.0)]).collect();
        let grid = SampleGrid::from_fn(10, 8, |x, y| Some(coords[y * 10 + x]));
        let out = bilinear_sample(&img, &grid);
        assert!(out.image.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn out_of_bounds_is_zero_and_invalid() {
        let img = ImageBuffer::filled(4, 4, 1, 1.0);
        let grid = SampleGrid::from_fn(3, 1, |x, _| Some([[-0.5, 3.0 + 5e-10, 3.01][x], 1.0]));
        let out = bilinear_sample(&img, &grid);
        assert_eq!(out.valid.data(), &[false, true, false]);
        assert_eq!(out.image.get(0, 0, 0), 0.0);
        assert_eq!(out.image.get(1, 0, 0), 1.0);
    }

    #[test]
    fn sampling_is_linear_and_convex() {
        let a = noise_image(12, 9, 3, 3);
        let b = noise_image(12, 9, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coords: Vec<[f64; 2]> = (0..108).map(|_| [rng.gen_range(0.0..11.0), rng.gen_range(0.0..8.0)]).collect();
        let grid = SampleGrid::from_fn(12, 9, |x, y| Some(coords[y * 12 + x]));
        let lhs = bilinear_sample(&a.lin_comb(0.3, &b, -1.7).unwrap(), &grid).image;
        let rhs = bilinear_sample(&a, &grid).image.lin_comb(0.3, &bilinear_sample(&b, &grid).image, -1.7).unwrap();
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            assert!((p - q).abs() < 1e-9);
        }
        let out = bilinear_sample(&a, &grid).image;
        for (i, [u, v]) in coords.iter().enumerate() {
            let (x0, y0) = (u.floor() as usize, v.floor() as usize);
            for c in 0..3 {
                let n = [a.get(x0, y0, c), a.get(x0 + 1, y0, c), a.get(x0, y0 + 1, c), a.get(x0 + 1, y0 + 1, c)];
                let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s = out.data()[i * 3 + c];
                assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn identity_homography_is_identity_warp() {
        let img = noise_image(16, 12, 3, 6);
        let out = warp_by_homography(&img, &Homography::identity()).unwrap();
        assert_eq!(out.image, img);
        assert!(out.valid.all());
    }

    #[test]
    fn translation_homography_shifts_image() {
        let img = noise_image(16, 12, 1, 7);
        let out = warp_by_homography(&img, &translation(2.0, 0.0)).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                if x < 2 {
                    assert!(!*out.valid.get(x, y));
                    assert_eq!(out.image.get(x, y, 0), 0.0);
                } else {
                    assert!(*out.valid.get(x, y));
                    assert!((out.image.get(x, y, 0) - img.get(x - 2, y, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_homography_is_rejected() {
        let h = Homography { matrix: Matrix3::zeros() };
        assert!(matches!(warp_by_homography(&ImageBuffer::filled(2, 2, 1, 0.0), &h), Err(Error::SingularHomography(_))));
    }

    #[test]
    fn homography_round_trip_on_smooth_image() {
        let img = smooth_image(80, 60);
        let h = Homography::new(Matrix3::new(1.02, 0.01, 1.5, -0.01, 0.99, -0.7, 1e-4, 0.0, 1.0)).unwrap();
        let fwd = warp_by_homography(&img, &h).unwrap();
        let back = warp_by_homography(&fwd.image, &h.inverse().unwrap()).unwrap();
        let mut err = 0.0;
        let mut n = 0;
        for y in 10..50 {
            for x in 10..70 {
                err += (back.image.get(x, y, 0) - img.get(x, y, 0)).abs();
                n += 1;
            }
        }
        assert!(err / (n as f64) < 0.02);
    }

    #[test]
    fn depth_synthesis_identity_pose() {
        let img = noise_image(20, 10, 3, 8);
        let k = CameraIntrinsics::new(30.0, 30.0, 10.0, 5.0, 20, 10).unwrap();
        let depth = DepthField::all_valid(Grid::filled(20, 10, 4.0));
        let out = synthesize_from_depth(&img, &depth, &k, &RigidPose::identity()).unwrap();
        assert!(out.valid.all());
        for (p, q) in out.image.data().iter().zip(img.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_synthesis_fronto_parallel_disparity() {
        // Plane at depth d, target→source translation Tx: source x = x + fx·Tx/d.
        let k = CameraIntrinsics::new(50.0, 50.0, 20.0, 10.0, 40, 20).unwrap();
        let (d, tx) = (5.0, 0.2);
        let depth = DepthField::all_valid(Grid::filled(40, 20, d));
        let pose = RigidPose::from_translation(Vector3::new(tx, 0.0, 0.0));
        let grid = depth_reprojection_grid(&depth, &k, &pose).unwrap();
        let shift = k.fx * tx / d;
        for y in 0..20 {
            for x in 0..40 {
                let [u, v] = *grid.coords.get(x, y);
                assert!((u - (x as f64 + shift)).abs() < 1e-12 && (v - y as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn behind_camera_is_invalid() {
        let k = CameraIntrinsics::new(50.0, 50.0, 20.0, 10.0, 40, 20).unwrap();
        let depth = DepthField::all_valid(Grid::filled(40, 20, 1.0));
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let out = synthesize_from_depth(&ImageBuffer::filled(40, 20, 1, 0.5), &depth, &k, &pose).unwrap();
        assert!(out.valid.none());
    }

    #[test]
    fn residual_flow_synthesis() {
        let img = noise_image(16, 8, 3, 9);
        let zero = ResidualFlowField::all_valid(Grid::filled(16, 8, [0.0, 0.0]));
        let out = synthesize_from_residual_flow(&img, None, &zero).unwrap();
        assert_eq!(out.image, img);

        let shift = ResidualFlowField::all_valid(Grid::filled(16, 8, [3.0, 0.0]));
        let out = synthesize_from_residual_flow(&img, None, &shift).unwrap();
        for y in 0..8 {
            for x in 0..16 {
                assert_eq!(*out.valid.get(x, y), x + 3 < 16);
                if x + 3 < 16 {
                    assert_eq!(out.image.pixel(x, y), img.pixel(x + 3, y));
                }
            }
        }
    }

    #[test]
    fn masked_sampling_respects_input_validity() {
        let img = noise_image(6, 1, 1, 10);
        let valid = Grid::from_vec(6, 1, vec![true, true, false, true, true, true]).unwrap();
        let flow = ResidualFlowField::from(MaskedField::all_valid(Grid::filled(6, 1, [0.5, 0.0])));
        let out = synthesize_from_residual_flow(&img, Some(&valid), &flow).unwrap();
        assert_eq!(out.valid.data(), &[true, false, false, true, true, false]);
    }
}
