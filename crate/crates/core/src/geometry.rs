//! Pinhole camera, rigid poses, the reference ground plane and the
//! plane-induced homography.
//!
//! Conventions:
//! - Camera frame is x right, y down, z forward. Pixel `(u, v)` is the
//!   center of column `u`, row `v`.
//! - A [`RigidPose`] maps coordinates from a frame A into a frame B:
//!   `X_B = R X_A + T`. "pose t→s" therefore takes target-camera points into
//!   the source camera, and its inverse "pose s→t" carries the source camera
//!   center to `T_{s→t}` in target coordinates.
//! - [`GroundPlane::normal`] points from the camera toward the plane, so
//!   plane points satisfy `Nᵀ X = h_c`. For a level camera N = (0, 1, 0).
//!   Under this orientation both `K (R + T Nᵀ / h_c) K⁻¹` and
//!   `D = h_c / (γ + Nᵀ K⁻¹ p)` hold without sign changes.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this |T_z| the forward baseline is treated as zero.
pub const BASELINE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// KITTI-style intrinsics scaled to `width`×`height`.
    pub fn kitti(width: usize, height: usize) -> Self {
        Self {
            fx: 0.58 * width as f64,
            fy: 1.92 * height as f64,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// K⁻¹ p̃: the viewing ray through a pixel, scaled to unit depth.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projection without the positive-depth check.
    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Projects a camera-frame point to pixel coordinates.
pub fn project(k: &CameraIntrinsics, point: &Vector3<f64>) -> Result<[f64; 2]> {
    if !(point.z > 0.0) {
        return Err(Error::Domain(format!(
            "cannot project point with z = {} (must be in front of the camera)",
            point.z
        )));
    }
    Ok(k.project_unchecked(point))
}

/// Lifts a pixel to the camera-frame point at the given depth: `D · K⁻¹ p̃`.
pub fn backproject(k: &CameraIntrinsics, pixel: [f64; 2], depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {depth}")));
    }
    Ok(k.ray(pixel[0], pixel[1]) * depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    const ORTHO_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about `axis` by `angle` radians, no translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: *r.matrix(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(ortho <= Self::ORTHO_TOL) || !((det - 1.0).abs() <= Self::ORTHO_TOL) {
            return Err(Error::InvalidPose(format!(
                "rotation is not proper orthonormal (|RᵀR−I|max = {ortho:e}, det = {det})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("translation must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidPose) -> RigidPose {
        compose_pose(self, inner)
    }

    pub fn inverse(&self) -> RigidPose {
        invert_pose(self)
    }

    /// Largest absolute deviation of any matrix/vector entry from `other`.
    pub fn max_abs_diff(&self, other: &RigidPose) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }

    /// 3×4 row-major `[R | T]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::new(rotation, translation)
    }
}

/// `a ∘ b`: `X ↦ R_a (R_b X + T_b) + T_a`.
pub fn compose_pose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    RigidPose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// `(R, T)⁻¹ = (Rᵀ, −Rᵀ T)`.
pub fn invert_pose(a: &RigidPose) -> RigidPose {
    let rt = a.rotation.transpose();
    RigidPose {
        rotation: rt,
        translation: -(rt * a.translation),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    /// Unit normal pointing from the camera toward the plane.
    pub normal: Vector3<f64>,
    /// Camera-to-plane distance h_c, meters.
    pub height: f64,
}

impl GroundPlane {
    const UNIT_TOL: f64 = 1e-12;

    pub fn new(normal: Vector3<f64>, height: f64) -> Result<Self> {
        let plane = Self { normal, height };
        plane.validate()?;
        Ok(plane)
    }

    /// Normalizes `normal` before constructing.
    pub fn from_direction(normal: Vector3<f64>, height: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidPlane("normal must be non-zero".into()));
        }
        Self::new(normal / n, height)
    }

    /// Ground below a level camera mounted `height` meters above it.
    pub fn level(height: f64) -> Result<Self> {
        Self::new(Vector3::new(0.0, 1.0, 0.0), height)
    }

    pub fn validate(&self) -> Result<()> {
        if !((self.normal.norm() - 1.0).abs() <= Self::UNIT_TOL) {
            return Err(Error::InvalidPlane(format!(
                "normal must be unit length (norm = {})",
                self.normal.norm()
            )));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::InvalidPlane(format!(
                "camera height must be positive, got {}",
                self.height
            )));
        }
        Ok(())
    }

    /// Signed height of a camera-frame point above the plane.
    #[inline]
    pub fn height_above(&self, p: &Vector3<f64>) -> f64 {
        self.height - self.normal.dot(p)
    }

    /// The same plane expressed in frame B, for `pose` mapping A → B.
    pub fn transformed(&self, pose: &RigidPose) -> Result<GroundPlane> {
        let normal = pose.rotation * self.normal;
        let height = self.height + normal.dot(&pose.translation);
        GroundPlane::from_direction(normal, height)
    }

    /// Tilts the plane normal about the camera x axis by `angle` radians.
    pub fn pitched(&self, angle: f64) -> Result<GroundPlane> {
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), angle);
        GroundPlane::from_direction(r * self.normal, self.height)
    }
}

/// 3×3 projective map on homogeneous pixel coordinates. Stored unnormalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
}

impl Homography {
    pub const SINGULAR_EPS: f64 = 1e-12;

    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let det = matrix.determinant();
        if !(det.abs() > Self::SINGULAR_EPS) {
            return Err(Error::SingularHomography(det.abs()));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .matrix
            .try_inverse()
            .ok_or_else(|| Error::SingularHomography(self.matrix.determinant().abs()))?;
        Homography::new(inv)
    }

    /// Maps a pixel; `None` when the point lands at infinity.
    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let q = self.matrix * Vector3::new(p[0], p[1], 1.0);
        if q.z.abs() < 1e-15 {
            return None;
        }
        Some([q.x / q.z, q.y / q.z])
    }

    /// Scaled so the bottom-right entry is 1.
    pub fn normalized(&self) -> Matrix3<f64> {
        self.matrix / self.matrix[(2, 2)]
    }
}

/// `K (R + T Nᵀ / h_c) K⁻¹`.
///
/// For `pose` mapping frame A → B and `plane` expressed in frame A, the
/// result maps A-image pixels of plane points to their B-image positions.
/// With the plane given in the target frame, pass the target→source pose:
/// the result then sends target pixels to source pixels, which is the
/// sampling map a backward warp needs; its inverse is H_{s→t}.
pub fn plane_homography(
    k: &CameraIntrinsics,
    pose: &RigidPose,
    plane: &GroundPlane,
) -> Result<Homography> {
    k.validate()?;
    plane.validate()?;
    let m = pose.rotation + pose.translation * plane.normal.transpose() / plane.height;
    Homography::new(k.matrix() * m * k.inverse_matrix())
}

/// Image of the other camera's center (focus of expansion).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epipole {
    /// Pixel coordinates when finite; the unit image-plane direction of
    /// the translation when `at_infinity` is set.
    pub u: f64,
    pub v: f64,
    pub at_infinity: bool,
}

impl Epipole {
    pub fn point(&self) -> Option<[f64; 2]> {
        (!self.at_infinity).then_some([self.u, self.v])
    }
}

/// Dehomogenized `K T` for `pose` mapping source → target, i.e. the source
/// camera center seen from the target camera.
pub fn epipole(k: &CameraIntrinsics, pose_s_to_t: &RigidPose) -> Epipole {
    let t = pose_s_to_t.translation;
    if t.z.abs() < BASELINE_EPS {
        let dir = nalgebra::Vector2::new(k.fx * t.x, k.fy * t.y);
        let n = dir.norm();
        let (u, v) = if n > 0.0 { (dir.x / n, dir.y / n) } else { (0.0, 0.0) };
        return Epipole {
            u,
            v,
            at_infinity: true,
        };
    }
    let [u, v] = k.project_unchecked(&t);
    Epipole {
        u,
        v,
        at_infinity: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    pub(crate) fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut p = RigidPose::from_axis_angle(&axis, rng.gen_range(-0.5..0.5));
        p.translation = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        p
    }

    #[test]
    fn identity_pose_gives_identity_homography() {
        let h = plane_homography(&k100(), &RigidPose::identity(), &GroundPlane::level(1.65).unwrap()).unwrap();
        assert_relative_eq!(h.matrix, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn homography_matches_plane_point_projection() {
        // Plane y = 1.65 in frame A, camera B one meter further along z.
        let k = CameraIntrinsics::kitti(640, 192);
        let plane = GroundPlane::new(Vector3::new(0.0, 1.0, 0.0), 1.65).unwrap();
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let h = plane_homography(&k, &pose, &plane).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p_a = Vector3::new(rng.gen_range(-5.0..5.0), 1.65, rng.gen_range(3.0..40.0));
            let p_b = pose.transform_point(&p_a);
            let src = project(&k, &p_a).unwrap();
            let dst = project(&k, &p_b).unwrap();
            let mapped = h.apply(src).unwrap();
            assert!((mapped[0] - dst[0]).abs() < 1e-9 && (mapped[1] - dst[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn homography_is_exact_for_general_pose_and_plane() {
        let k = CameraIntrinsics::kitti(640, 192);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let plane = GroundPlane::from_direction(
                Vector3::new(rng.gen_range(-0.2..0.2), 1.0, rng.gen_range(-0.2..0.2)),
                rng.gen_range(1.0..2.0),
            )
            .unwrap();
            let h = plane_homography(&k, &pose, &plane).unwrap();
            for _ in 0..10 {
                // Random pixel on the plane in frame A.
                let ray = k.ray(rng.gen_range(0.0..640.0), rng.gen_range(120.0..192.0));
                let d = plane.height / plane.normal.dot(&ray);
                if d <= 0.0 {
                    continue;
                }
                let p_a = ray * d;
                let p_b = pose.transform_point(&p_a);
                if p_b.z <= 0.1 {
                    continue;
                }
                let expect = k.project_unchecked(&p_b);
                let got = h.apply(k.project_unchecked(&p_a)).unwrap();
                assert!((got[0] - expect[0]).abs() < 1e-6 && (got[1] - expect[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inverse_pose_homography_inverts() {
        let k = CameraIntrinsics::kitti(640, 192);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let plane = GroundPlane::level(rng.gen_range(1.0..3.0)).unwrap();
            let Ok(plane_b) = plane.transformed(&pose) else { continue };
            let h_ab = plane_homography(&k, &pose, &plane).unwrap();
            let h_ba = plane_homography(&k, &pose.inverse(), &plane_b).unwrap();
            let prod = Homography::new(h_ab.matrix * h_ba.matrix).unwrap().normalized();
            assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-9);
            let inv = h_ab.inverse().unwrap().normalized();
            assert_relative_eq!(inv, h_ba.normalized(), epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn singular_intrinsics_rejected() {
        let mut k = k100();
        k.fx = 0.0;
        let err = plane_homography(&k, &RigidPose::identity(), &GroundPlane::level(1.0).unwrap());
        assert!(matches!(err, Err(Error::InvalidIntrinsics(_))));
    }

    #[test]
    fn epipole_examples() {
        let k = k100();
        let fwd = epipole(&k, &RigidPose::from_translation(Vector3::new(0.0, 0.0, 2.0)));
        assert_eq!(fwd.point(), Some([50.0, 50.0]));
        let e = epipole(&k, &RigidPose::from_translation(Vector3::new(0.1, 0.0, 1.0)));
        assert_relative_eq!(e.u, 60.0, epsilon = 1e-12);
        assert_relative_eq!(e.v, 50.0, epsilon = 1e-12);
        let side = epipole(&k, &RigidPose::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        assert!(side.at_infinity);
        assert_eq!(side.point(), None);
    }

    #[test]
    fn projection_examples() {
        let k = k100();
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, 5.0)).unwrap(), [50.0, 50.0]);
        let p = backproject(&k, [150.0, 50.0], 2.0).unwrap();
        assert_relative_eq!(p, Vector3::new(2.0, 0.0, 2.0), epsilon = 1e-15);
        assert!(backproject(&k, [1.0, 1.0], 0.0).is_err());
        assert!(project(&k, &Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn projection_round_trip() {
        let k = CameraIntrinsics::kitti(640, 192);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.5..80.0));
            let back = backproject(&k, project(&k, &p).unwrap(), p.z).unwrap();
            assert!((back - p).abs().max() < 1e-9);
        }
    }

    #[test]
    fn pose_group_laws() {
        assert!(RigidPose::identity().inverse().max_abs_diff(&RigidPose::identity()) == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            assert!(a.compose(&a.inverse()).max_abs_diff(&RigidPose::identity()) < 1e-9);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!(left.max_abs_diff(&right) < 1e-9);
            // Independent oracle: (Rᵀ, −RᵀT) through nalgebra's general inverse.
            let r_inv = a.rotation.try_inverse().unwrap();
            let inv = a.inverse();
            assert_relative_eq!(inv.rotation, r_inv, epsilon = 1e-9);
            assert_relative_eq!(inv.translation, -(r_inv * a.translation), epsilon = 1e-9);
        }
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(RigidPose::new(m, Vector3::zeros()).is_err());
        let pose = RigidPose::from_axis_angle(&Vector3::new(0.3, 1.0, 0.2), 0.4);
        let back = RigidPose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn plane_validation_and_transform() {
        assert!(GroundPlane::new(Vector3::new(0.0, 2.0, 0.0), 1.0).is_err());
        assert!(GroundPlane::level(0.0).is_err());
        let plane = GroundPlane::level(1.65).unwrap();
        let moved = plane.transformed(&RigidPose::from_translation(Vector3::new(0.0, 0.5, 0.0))).unwrap();
        assert_relative_eq!(moved.height, 2.15, epsilon = 1e-12);
    }
}
