//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! every key in a file must be recognized by the reader. Vectors are
//! comma-separated numbers.
//!
//! Camera keys: `width`, `height` (required); `fx`, `fy`, `cx`, `cy`
//! (default: KITTI-like intrinsics scaled to the image size).
//!
//! Scene keys: `preset` (`road` or `plane`, default `road`),
//! `camera_height` (1.65), `plane.normal` (0,1,0), `sky`, `channels`,
//! `supersample`, `texture.kind` (`noise`|`checker`), `texture.seed`,
//! `texture.base`, `texture.contrast`, `texture.min_wavelength`,
//! `texture.lod`, `texture.octaves`, `texture.checker_size`; boxes
//! `box.N.center`, `box.N.size`, `box.N.albedo` (one or six values),
//! `box.N.attached`; camera poses `target.position`, `target.rotation`,
//! `source.position`, `source.rotation` (positions in meters in the world
//! frame, rotations as axis-angle vectors in degrees; defaults: target at
//! the origin, source 0.8 m ahead).
//!
//! Run keys (all optional, flags override): `epsilon`, `delta`, `tau_deg`,
//! `alpha`, `f_min`, `f_max`, `cap`, `seed`, `gamma_tol`, `neighbor_offset`,
//! `ransac_iters`, `ransac_rel_tol`, `epipole_radius`, `threads`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use parallax_core::synth::{SceneBox, SceneSpec, TextureKind};
use parallax_core::{CameraIntrinsics, GroundPlane, RigidPose};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug)]
pub struct KeyValues {
    origin: String,
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

fn invalid(origin: &str, key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{origin}: key `{key}`: {reason}"))
}

impl KeyValues {
    pub fn parse(origin: &str, text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "{origin}: line {}: expected `key = value`, got {line:?}",
                    number + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::Validation(format!("{origin}: line {}: empty key", number + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(invalid(origin, key, "duplicate key"));
            }
        }
        Ok(Self {
            origin: origin.to_string(),
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn empty() -> Self {
        Self {
            origin: "<defaults>".into(),
            entries: BTreeMap::new(),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| invalid(&self.origin, key, format!("{v:?}: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| invalid(&self.origin, key, "missing required key"))
    }

    pub fn get_list(&self, key: &str, lengths: &[usize]) -> CliResult<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let values = v
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(&self.origin, key, format!("{v:?}: {e}")))?;
        if !lengths.contains(&values.len()) {
            return Err(invalid(
                &self.origin,
                key,
                format!("expected {lengths:?} comma-separated numbers, got {}", values.len()),
            ));
        }
        Ok(Some(values))
    }

    fn vec3(&self, key: &str) -> CliResult<Option<Vector3<f64>>> {
        Ok(self.get_list(key, &[3])?.map(|v| Vector3::new(v[0], v[1], v[2])))
    }

    /// Keys matching `prefix.<index>.` grouped by index, in ascending order.
    fn indices(&self, prefix: &str) -> CliResult<Vec<usize>> {
        let mut out = BTreeSet::new();
        for key in self.entries.keys() {
            if let Some(rest) = key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                let index = rest.split('.').next().unwrap_or_default();
                out.insert(index.parse::<usize>().map_err(|_| invalid(&self.origin, key, "box index must be an integer"))?);
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Fails on the first key that no reader asked for.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(key) => Err(invalid(&self.origin, key, "unknown key")),
            None => Ok(()),
        }
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    fn check(&self, key: &str, r: parallax_core::Result<()>) -> CliResult<()> {
        r.map_err(|e| invalid(&self.origin, key, e))
    }
}

pub fn camera_from(kv: &KeyValues) -> CliResult<CameraIntrinsics> {
    let width: usize = kv.require("width")?;
    let height: usize = kv.require("height")?;
    let d = CameraIntrinsics::kitti(width, height);
    let k = CameraIntrinsics {
        fx: kv.get_or("fx", d.fx)?,
        fy: kv.get_or("fy", d.fy)?,
        cx: kv.get_or("cx", d.cx)?,
        cy: kv.get_or("cy", d.cy)?,
        width,
        height,
    };
    kv.check("fx", k.validate())?;
    kv.finish()?;
    Ok(k)
}

pub fn load_camera(path: &Path) -> CliResult<CameraIntrinsics> {
    camera_from(&KeyValues::load(path)?)
}

/// Camera-file text for `k`.
pub fn camera_to_text(k: &CameraIntrinsics) -> String {
    format!(
        "width = {}\nheight = {}\nfx = {}\nfy = {}\ncx = {}\ncy = {}\n",
        k.width, k.height, k.fx, k.fy, k.cx, k.cy
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub scene: SceneSpec,
    /// Camera → world poses.
    pub target_pose: RigidPose,
    pub source_pose: RigidPose,
}

fn pose_from(kv: &KeyValues, prefix: &str, default_position: Vector3<f64>) -> CliResult<RigidPose> {
    let position = kv.vec3(&format!("{prefix}.position"))?.unwrap_or(default_position);
    let rotation = kv.vec3(&format!("{prefix}.rotation"))?.unwrap_or_else(Vector3::zeros);
    let angle = rotation.norm().to_radians();
    let mut pose = if angle > 0.0 {
        RigidPose::from_axis_angle(&rotation, angle)
    } else {
        RigidPose::identity()
    };
    pose.translation = position;
    Ok(pose)
}

pub fn scene_from(kv: &KeyValues) -> CliResult<SceneConfig> {
    let h: f64 = kv.get_or("camera_height", 1.65)?;
    let preset: String = kv.get_or("preset", "road".to_string())?;
    let mut scene = match preset.as_str() {
        "road" => SceneSpec::road_with_boxes(h),
        "plane" => SceneSpec::plane_only(h),
        other => return Err(invalid(kv.origin(), "preset", format!("expected road or plane, got {other:?}"))),
    }
    .map_err(|e| invalid(kv.origin(), "camera_height", e))?;
    if let Some(n) = kv.vec3("plane.normal")? {
        scene.plane = GroundPlane::from_direction(n, h).map_err(|e| invalid(kv.origin(), "plane.normal", e))?;
    }
    scene.sky = kv.get_or("sky", scene.sky)?;
    scene.channels = kv.get_or("channels", scene.channels)?;
    scene.supersample = kv.get_or("supersample", scene.supersample)?;
    let t = &mut scene.texture;
    if let Some(kind) = kv.get::<String>("texture.kind")? {
        t.kind = match kind.as_str() {
            "noise" => TextureKind::Noise,
            "checker" => TextureKind::Checker,
            other => return Err(invalid(kv.origin(), "texture.kind", format!("expected noise or checker, got {other:?}"))),
        };
    }
    t.seed = kv.get_or("texture.seed", t.seed)?;
    t.base = kv.get_or("texture.base", t.base)?;
    t.contrast = kv.get_or("texture.contrast", t.contrast)?;
    t.min_wavelength = kv.get_or("texture.min_wavelength", t.min_wavelength)?;
    t.lod = kv.get_or("texture.lod", t.lod)?;
    t.octaves = kv.get_or("texture.octaves", t.octaves)?;
    t.checker_size = kv.get_or("texture.checker_size", t.checker_size)?;

    let indices = kv.indices("box")?;
    if !indices.is_empty() {
        scene.boxes.clear();
    }
    for i in indices {
        let key = |field: &str| format!("box.{i}.{field}");
        let center = kv.get_list(&key("center"), &[3])?.ok_or_else(|| invalid(kv.origin(), &key("center"), "missing required key"))?;
        let size = kv.get_list(&key("size"), &[3])?.ok_or_else(|| invalid(kv.origin(), &key("size"), "missing required key"))?;
        let albedo = match kv.get_list(&key("albedo"), &[1, 6])? {
            None => SceneBox::on_ground(0.0, 0.0, [1.0; 3], 0.0).albedo,
            Some(v) if v.len() == 1 => [v[0]; 6],
            Some(v) => [v[0], v[1], v[2], v[3], v[4], v[5]],
        };
        scene.boxes.push(SceneBox {
            center: [center[0], center[1], center[2]],
            size: [size[0], size[1], size[2]],
            albedo,
            attached: kv.get_or(&key("attached"), false)?,
        });
    }
    kv.check("box", scene.validate())?;
    let target_pose = pose_from(kv, "target", Vector3::zeros())?;
    let source_pose = pose_from(kv, "source", Vector3::new(0.0, 0.0, 0.8))?;
    kv.finish()?;
    Ok(SceneConfig {
        scene,
        target_pose,
        source_pose,
    })
}

pub fn load_scene(path: Option<&Path>) -> CliResult<SceneConfig> {
    match path {
        Some(p) => scene_from(&KeyValues::load(p)?),
        None => scene_from(&KeyValues::empty()),
    }
}

/// Numeric run parameters with their documented defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub tau_deg: f64,
    pub alpha: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub cap: f64,
    pub seed: u64,
    pub gamma_tol: f64,
    pub neighbor_offset: usize,
    pub ransac_iters: usize,
    pub ransac_rel_tol: f64,
    pub epipole_radius: f64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon: 5.0,
            delta: 0.2,
            tau_deg: 3.0,
            alpha: 0.85,
            f_min: -100.0,
            f_max: 100.0,
            cap: 80.0,
            seed: 0,
            gamma_tol: 0.05,
            neighbor_offset: 2,
            ransac_iters: 200,
            ransac_rel_tol: 0.02,
            epipole_radius: 2.0,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> CliResult<Self> {
        let d = Self::default();
        let cfg = Self {
            epsilon: kv.get_or("epsilon", d.epsilon)?,
            delta: kv.get_or("delta", d.delta)?,
            tau_deg: kv.get_or("tau_deg", d.tau_deg)?,
            alpha: kv.get_or("alpha", d.alpha)?,
            f_min: kv.get_or("f_min", d.f_min)?,
            f_max: kv.get_or("f_max", d.f_max)?,
            cap: kv.get_or("cap", d.cap)?,
            seed: kv.get_or("seed", d.seed)?,
            gamma_tol: kv.get_or("gamma_tol", d.gamma_tol)?,
            neighbor_offset: kv.get_or("neighbor_offset", d.neighbor_offset)?,
            ransac_iters: kv.get_or("ransac_iters", d.ransac_iters)?,
            ransac_rel_tol: kv.get_or("ransac_rel_tol", d.ransac_rel_tol)?,
            epipole_radius: kv.get_or("epipole_radius", d.epipole_radius)?,
            threads: kv.get("threads")?,
        };
        kv.finish()?;
        Ok(cfg)
    }

    /// τ as a cosine.
    pub fn tau(&self) -> f64 {
        self.tau_deg.to_radians().cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let kv = KeyValues::parse("t", "# c\n\nwidth = 64\nheight=32\n fx = 50.5 \n").unwrap();
        let k = camera_from(&kv).unwrap();
        assert_eq!((k.width, k.height, k.fx), (64, 32, 50.5));
        assert_eq!(k.cx, 32.0);
    }

    #[test]
    fn errors_name_the_key() {
        let e = camera_from(&KeyValues::parse("cam.cfg", "width = 64\nheight = abc\n").unwrap()).unwrap_err();
        assert!(e.to_string().contains("`height`"), "{e}");
        let e = camera_from(&KeyValues::parse("cam.cfg", "width = 64\nheight = 8\nfocal = 3\n").unwrap()).unwrap_err();
        assert!(e.to_string().contains("`focal`"), "{e}");
        let e = camera_from(&KeyValues::parse("cam.cfg", "height = 8\n").unwrap()).unwrap_err();
        assert!(e.to_string().contains("`width`"), "{e}");
        let e = KeyValues::parse("cam.cfg", "width = 1\nwidth = 2\n").unwrap_err();
        assert!(e.to_string().contains("`width`"), "{e}");
        let e = KeyValues::parse("cam.cfg", "just text\n").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn scene_boxes_and_poses() {
        let text = "preset = plane\nbox.0.center = 0, 1.15, 10\nbox.0.size = 1,1,1\nbox.0.albedo = 0.5\n\
                    source.position = 0, 0, 1.2\ntarget.rotation = 0, 90, 0\n";
        let cfg = scene_from(&KeyValues::parse("s", text).unwrap()).unwrap();
        assert_eq!(cfg.scene.boxes.len(), 1);
        assert_eq!(cfg.scene.boxes[0].albedo, [0.5; 6]);
        assert_eq!(cfg.source_pose.translation, Vector3::new(0.0, 0.0, 1.2));
        let z = cfg.target_pose.rotation * Vector3::z();
        assert!((z - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn scene_errors_name_the_key() {
        let e = scene_from(&KeyValues::parse("s", "box.0.center = 0,1\nbox.0.size=1,1,1\n").unwrap()).unwrap_err();
        assert!(e.to_string().contains("`box.0.center`"), "{e}");
        let e = scene_from(&KeyValues::parse("s", "texture.kind = marble\n").unwrap()).unwrap_err();
        assert!(e.to_string().contains("`texture.kind`"), "{e}");
    }

    #[test]
    fn run_defaults() {
        let cfg = RunConfig::from_key_values(&KeyValues::empty()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!((cfg.tau() - 3f64.to_radians().cos()).abs() < 1e-15);
        let e = RunConfig::from_key_values(&KeyValues::parse("r", "delta = x\n").unwrap()).unwrap_err();
        assert!(e.to_string().contains("`delta`"));
    }
}
