//! Ray-cast renderer for textured planar-road scenes with boxes, producing
//! images together with exact depth, structure and surface labels.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, GroundPlane, RigidPose};
use crate::grid::{DepthField, Grid, Mask, NormalField, StructureField};
use crate::sampling::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    /// Seeded multi-octave value noise, band-limited with distance.
    Noise,
    Checker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub kind: TextureKind,
    pub seed: u64,
    /// Mean intensity.
    pub base: f64,
    /// Peak deviation from `base`.
    pub contrast: f64,
    /// Finest noise wavelength, meters.
    pub min_wavelength: f64,
    /// Distance-dependent band limit: octaves with wavelength below
    /// `lod · r²` at distance `r` are faded out.
    pub lod: f64,
    pub octaves: usize,
    /// Checker square size, meters.
    pub checker_size: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            kind: TextureKind::Noise,
            seed: 1,
            base: 0.5,
            contrast: 0.35,
            min_wavelength: 0.1,
            lod: 0.012,
            octaves: 10,
            checker_size: 0.5,
        }
    }
}

/// Axis-aligned box. With `attached` set, `center` is in the camera frame and
/// the box moves rigidly with the camera (a co-moving object).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    /// Albedo per face, ordered −x, +x, −y, +y, −z, +z.
    pub albedo: [f64; 6],
    pub attached: bool,
}

impl SceneBox {
    /// A static box resting on a level ground `ground_y` below the origin.
    pub fn on_ground(x: f64, z: f64, size: [f64; 3], ground_y: f64) -> Self {
        Self {
            center: [x, ground_y - 0.5 * size[1], z],
            size,
            albedo: [0.75, 0.8, 0.95, 0.6, 0.85, 0.7],
            attached: false,
        }
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let c = Vector3::from(self.center);
        let half = Vector3::from(self.size) * 0.5;
        (c - half, c + half)
    }

    fn corners(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        let (lo, hi) = self.bounds();
        (0..8).map(move |i| {
            Vector3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}

/// Scene description. The world frame shares the camera axis convention
/// (x right, y down, z forward); `plane` is the ground in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub plane: GroundPlane,
    pub texture: TextureSpec,
    pub boxes: Vec<SceneBox>,
    /// Intensity of rays that hit nothing.
    pub sky: f64,
    /// Image channels, 1 or 3.
    pub channels: usize,
    /// Supersampling factor per axis.
    pub supersample: usize,
}

impl SceneSpec {
    /// Level textured ground only.
    pub fn plane_only(camera_height: f64) -> Result<Self> {
        Ok(Self {
            plane: GroundPlane::level(camera_height)?,
            texture: TextureSpec::default(),
            boxes: Vec::new(),
            sky: 0.8,
            channels: 1,
            supersample: 2,
        })
    }

    /// Level road with three static boxes, one of them inside the central
    /// road region.
    pub fn road_with_boxes(camera_height: f64) -> Result<Self> {
        let mut scene = Self::plane_only(camera_height)?;
        scene.boxes = vec![
            SceneBox::on_ground(-4.0, 14.0, [1.6, 1.4, 2.5], camera_height),
            SceneBox::on_ground(4.5, 20.0, [2.0, 2.2, 3.0], camera_height),
            SceneBox::on_ground(0.8, 30.0, [1.8, 1.6, 1.8], camera_height),
        ];
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.plane.validate()?;
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidParameter {
                name: "channels",
                reason: format!("must be 1 or 3, got {}", self.channels),
            });
        }
        if self.supersample == 0 {
            return Err(Error::InvalidParameter {
                name: "supersample",
                reason: "must be at least 1".into(),
            });
        }
        let t = &self.texture;
        if !(t.min_wavelength > 0.0 && t.checker_size > 0.0 && t.lod >= 0.0 && t.octaves >= 1) {
            return Err(Error::InvalidParameter {
                name: "texture",
                reason: "wavelength and checker size must be positive, lod non-negative, octaves ≥ 1".into(),
            });
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.size.iter().all(|s| *s > 0.0 && s.is_finite()) || !b.center.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "boxes",
                    reason: format!("box {i} must have finite center and positive size"),
                });
            }
            if !b.attached && b.corners().any(|c| self.plane.height_above(&c) < -1e-9) {
                return Err(Error::InvalidParameter {
                    name: "boxes",
                    reason: format!("box {i} extends below the ground plane"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surface {
    Sky,
    Ground,
    /// Box index and face (0..6 ordered −x, +x, −y, +y, −z, +z).
    Box { index: usize, face: usize },
}

impl Surface {
    pub fn is_box(&self) -> bool {
        matches!(self, Surface::Box { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub image: ImageBuffer,
    /// Exact z-depth of the pixel-center ray, meters.
    pub depth: DepthField,
    /// Exact structure: height above the ground over depth.
    pub gamma: StructureField,
    /// Exact geometric normal, oriented toward the camera.
    pub normals: NormalField,
    pub surface: Grid<Surface>,
    /// Camera → world.
    pub pose: RigidPose,
    /// Ground plane in this camera's frame.
    pub plane: GroundPlane,
}

struct Hit {
    t: f64,
    surface: Surface,
    /// Hit point in the frame the object lives in (world or camera).
    local: Vector3<f64>,
    /// Geometric normal in that frame (outward for boxes, plane normal for ground).
    normal: Vector3<f64>,
    attached: bool,
}

struct Camera<'a> {
    scene: &'a SceneSpec,
    k: &'a CameraIntrinsics,
    cam_to_world: RigidPose,
    center: Vector3<f64>,
    world_plane: GroundPlane,
}

fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &SceneBox) -> Option<(f64, usize)> {
    let (lo, hi) = b.bounds();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut face = 0;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-300 {
            if origin[axis] < lo[axis] || origin[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let t0 = (lo[axis] - origin[axis]) / dir[axis];
        let t1 = (hi[axis] - origin[axis]) / dir[axis];
        let (entry, exit, entry_face) = if t0 < t1 { (t0, t1, 2 * axis) } else { (t1, t0, 2 * axis + 1) };
        if entry > t_near {
            t_near = entry;
            face = entry_face;
        }
        t_far = t_far.min(exit);
    }
    (t_near <= t_far && t_near > 1e-9).then_some((t_near, face))
}

fn face_normal(face: usize) -> Vector3<f64> {
    let mut n = Vector3::zeros();
    n[face / 2] = if face % 2 == 0 { -1.0 } else { 1.0 };
    n
}

impl<'a> Camera<'a> {
    fn new(scene: &'a SceneSpec, k: &'a CameraIntrinsics, cam_to_world: RigidPose) -> Result<Self> {
        cam_to_world.validate()?;
        let center = cam_to_world.translation;
        let h = scene.plane.height_above(&center);
        if !(h > 0.0) {
            return Err(Error::CameraBelowPlane(h));
        }
        Ok(Self {
            scene,
            k,
            cam_to_world,
            center,
            world_plane: scene.plane,
        })
    }

    fn plane_in_camera(&self) -> Result<GroundPlane> {
        self.world_plane.transformed(&self.cam_to_world.inverse())
    }

    /// Nearest intersection of the ray through pixel coordinate `(u, v)`.
    /// `t` equals the camera-frame z-depth.
    fn cast(&self, u: f64, v: f64) -> Option<Hit> {
        let d_cam = self.k.ray(u, v);
        let d_world = self.cam_to_world.rotation * d_cam;
        let mut best: Option<Hit> = None;
        let mut consider = |hit: Hit| {
            if best.as_ref().map_or(true, |b| hit.t < b.t) {
                best = Some(hit);
            }
        };
        let plane = &self.world_plane;
        let denom = plane.normal.dot(&d_world);
        if denom > 1e-12 {
            let t = (plane.height - plane.normal.dot(&self.center)) / denom;
            if t > 0.0 {
                consider(Hit {
                    t,
                    surface: Surface::Ground,
                    local: self.center + d_world * t,
                    normal: plane.normal,
                    attached: false,
                });
            }
        }
        for (index, b) in self.scene.boxes.iter().enumerate() {
            let (origin, dir) = if b.attached {
                (Vector3::zeros(), d_cam)
            } else {
                (self.center, d_world)
            };
            if let Some((t, face)) = ray_box(&origin, &dir, b) {
                consider(Hit {
                    t,
                    surface: Surface::Box { index, face },
                    local: origin + dir * t,
                    normal: face_normal(face),
                    attached: b.attached,
                });
            }
        }
        best
    }

    fn shade(&self, hit: &Hit, channel: usize) -> f64 {
        let tex = &self.scene.texture;
        let (a, b, albedo) = match hit.surface {
            Surface::Sky => return self.scene.sky,
            Surface::Ground => {
                let (e1, e2) = tangent_basis(&self.world_plane.normal);
                (e1.dot(&hit.local), e2.dot(&hit.local), 1.0)
            }
            Surface::Box { index, face } => {
                let axis = face / 2;
                let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                let offset = 37.0 * index as f64 + 11.0 * face as f64;
                (hit.local[i] + offset, hit.local[j] - offset, self.scene.boxes[index].albedo[face])
            }
        };
        let distance = hit.local.norm();
        let seed = tex.seed ^ (channel as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let value = match tex.kind {
            TextureKind::Noise => tex.base + tex.contrast * band_limited_noise(a, b, distance, tex, seed),
            TextureKind::Checker => {
                let parity = ((a / tex.checker_size).floor() + (b / tex.checker_size).floor()) as i64;
                tex.base + if parity.rem_euclid(2) == 0 { tex.contrast } else { -tex.contrast }
            }
        };
        (albedo * value).clamp(0.0, 1.0)
    }
}

fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
    let e1 = (helper - n * n.dot(&helper)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, octave: usize, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64) ^ splitmix((iy as u64) ^ splitmix(octave as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(x: f64, y: f64, octave: usize, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let v00 = lattice(ix, iy, octave, seed);
    let v10 = lattice(ix + 1, iy, octave, seed);
    let v01 = lattice(ix, iy + 1, octave, seed);
    let v11 = lattice(ix + 1, iy + 1, octave, seed);
    let top = v00 + tx * (v10 - v00);
    let bottom = v01 + tx * (v11 - v01);
    top + ty * (bottom - top)
}

/// Sum of octaves in [−1, 1]; octaves finer than the distance-dependent band
/// limit fade out smoothly, so the texture is a fixed function of position.
fn band_limited_noise(a: f64, b: f64, distance: f64, tex: &TextureSpec, seed: u64) -> f64 {
    let limit = tex.lod * distance * distance;
    let mut sum = 0.0;
    let mut wavelength = tex.min_wavelength;
    for octave in 0..tex.octaves {
        let ratio = wavelength / limit.max(f64::MIN_POSITIVE);
        let weight = if ratio >= 2.0 {
            1.0
        } else if ratio <= 1.0 {
            0.0
        } else {
            let s = ratio - 1.0;
            s * s * (3.0 - 2.0 * s)
        };
        if weight > 0.0 {
            sum += weight * value_noise(a / wavelength, b / wavelength, octave, seed);
        }
        wavelength *= 2.0;
    }
    sum / tex.octaves as f64 * 2.0
}

struct PixelSample {
    color: [f64; 3],
    hit: Option<(f64, Surface, Vector3<f64>, f64)>,
}

/// Renders `scene` from a camera with pose `cam_to_world`.
pub fn render(scene: &SceneSpec, cam_to_world: &RigidPose, k: &CameraIntrinsics) -> Result<RenderedFrame> {
    scene.validate()?;
    k.validate()?;
    let cam = Camera::new(scene, k, *cam_to_world)?;
    let plane_cam = cam.plane_in_camera()?;
    let world_to_cam = cam_to_world.inverse();
    let (w, h) = k.dims();
    let ss = scene.supersample;
    let channels = scene.channels;
    let samples = Grid::from_fn(w, h, |x, y| {
        let mut color = [0.0; 3];
        for sy in 0..ss {
            for sx in 0..ss {
                let u = x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5;
                let v = y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5;
                let hit = cam.cast(u, v);
                for (c, value) in color.iter_mut().enumerate().take(channels) {
                    *value += match &hit {
                        Some(hit) => cam.shade(hit, c),
                        None => scene.sky,
                    };
                }
            }
        }
        let n = (ss * ss) as f64;
        color.iter_mut().for_each(|c| *c /= n);
        let hit = cam.cast(x as f64, y as f64).map(|hit| {
            let (p_cam, n_cam) = if hit.attached {
                (hit.local, hit.normal)
            } else {
                (world_to_cam.transform_point(&hit.local), world_to_cam.rotation * hit.normal)
            };
            let n_cam = if n_cam.dot(&p_cam) > 0.0 { -n_cam } else { n_cam };
            let gamma = match hit.surface {
                Surface::Ground => 0.0,
                _ => plane_cam.height_above(&p_cam) / hit.t,
            };
            (hit.t, hit.surface, n_cam, gamma)
        });
        PixelSample { color, hit }
    });
    let image = ImageBuffer::from_fn(w, h, channels, |x, y, out| {
        out.copy_from_slice(&samples.get(x, y).color[..channels]);
    });
    Ok(RenderedFrame {
        image,
        depth: DepthField::from_fn(w, h, |x, y| samples.get(x, y).hit.map(|s| s.0)),
        gamma: StructureField::from_fn(w, h, |x, y| samples.get(x, y).hit.map(|s| s.3)),
        normals: NormalField::from_fn(w, h, |x, y| samples.get(x, y).hit.map(|s| s.2)),
        surface: samples.map(|s| s.hit.map_or(Surface::Sky, |s| s.1)),
        pose: *cam_to_world,
        plane: plane_cam,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub target: RenderedFrame,
    pub source: RenderedFrame,
    pub pose_t_to_s: RigidPose,
    pub pose_s_to_t: RigidPose,
    /// Ground plane in the target frame.
    pub plane_t: GroundPlane,
    /// Static target pixels whose surface point is seen unoccluded in the
    /// source, with all four bilinear neighbors on the same surface.
    pub visible: Mask,
}

/// Renders a target/source pair and the exact relative motion between them.
pub fn make_pair(
    scene: &SceneSpec,
    pose_t: &RigidPose,
    pose_s: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<RenderedPair> {
    pose_t.validate()?;
    pose_s.validate()?;
    let target = render(scene, pose_t, k)?;
    let source = render(scene, pose_s, k)?;
    let pose_t_to_s = pose_s.inverse().compose(pose_t);
    let pose_s_to_t = pose_t_to_s.inverse();
    let cam_s = Camera::new(scene, k, *pose_s)?;
    let (w, h) = k.dims();
    let visible = Grid::from_fn(w, h, |x, y| {
        let surface = *target.surface.get(x, y);
        let attached = matches!(surface, Surface::Box { index, .. } if scene.boxes[index].attached);
        let Some(d) = target.depth.at(x, y) else { return false };
        if attached {
            return false;
        }
        let p_s = pose_t_to_s.transform_point(&(k.ray(x as f64, y as f64) * d));
        if !(p_s.z > 0.0) {
            return false;
        }
        let [u, v] = k.project_unchecked(&p_s);
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return false;
        }
        let Some(hit) = cam_s.cast(u, v) else { return false };
        if hit.surface != surface || (hit.t - p_s.z).abs() > 1e-6 * p_s.z {
            return false;
        }
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
            .iter()
            .all(|&(sx, sy)| *source.surface.get(sx, sy) == surface)
    });
    Ok(RenderedPair {
        plane_t: target.plane,
        target,
        source,
        pose_t_to_s,
        pose_s_to_t,
        visible,
    })
}

/// Camera pose `forward` meters ahead of `pose` along its optical axis.
pub fn advanced(pose: &RigidPose, forward: f64) -> RigidPose {
    pose.compose(&RigidPose::from_translation(Vector3::new(0.0, 0.0, forward)))
}
