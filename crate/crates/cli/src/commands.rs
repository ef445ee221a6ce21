//! Subcommand implementations. Each returns the text destined for standard
//! output (JSON unless stated otherwise); artifacts go to the given paths.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::Vector3;
use parallax_core::eval::evaluate;
use parallax_core::parallax::{
    bin_flowscale, depth_from_gamma, flowscale_from_gamma, flowscale_from_residual_flow, gamma_from_depth,
    gamma_from_flowscale, residual_flow_from_flowscale, unbin_flowscale,
};
use parallax_core::photometric::{
    loss_consist, masked_mean_loss, photometric_error, static_mask, LossReport, PhotometricParams, Stage,
};
use parallax_core::pipeline::{run_pair, PairInputs, PairLosses, PipelineParams};
use parallax_core::sampling::warp_by_homography;
use parallax_core::scale::{estimate_scale, recover_and_apply_scale, HeightOptions, ScaleEstimate, ScaleMethod};
use parallax_core::surface::{road_flat_mask, surface_normals, TrapezoidPrior};
use parallax_core::synth::make_pair;
use parallax_core::{
    epipole, plane_homography, CameraIntrinsics, DepthField, Error, FlowScaleField, Grid, GroundPlane, Mask,
    MaskedField, RigidPose,
};
use serde::{Deserialize, Serialize};

use crate::config::{camera_to_text, load_camera, load_scene, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    read_flow, read_image, read_json, read_mask, read_scalar, to_json, write_flow, write_image, write_json,
    write_mask, write_normals, write_ply, write_scalar, PlyPoint,
};

/// Relative motion and ground plane of a target/source pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    /// Row-major `[R | T]` mapping target-frame points to the source frame.
    pub pose_t_to_s: [f64; 12],
    pub pose_s_to_t: [f64; 12],
    /// Ground plane in the target frame.
    pub plane_normal: [f64; 3],
    pub plane_height: f64,
}

impl PairGeometry {
    pub fn new(pose_t_to_s: &RigidPose, plane: &GroundPlane) -> Self {
        Self {
            pose_t_to_s: pose_t_to_s.to_row_major(),
            pose_s_to_t: pose_t_to_s.inverse().to_row_major(),
            plane_normal: [plane.normal.x, plane.normal.y, plane.normal.z],
            plane_height: plane.height,
        }
    }

    pub fn pose_t_to_s(&self) -> CliResult<RigidPose> {
        Ok(RigidPose::from_row_major(&self.pose_t_to_s)?)
    }

    pub fn plane(&self) -> CliResult<GroundPlane> {
        Ok(GroundPlane::from_direction(Vector3::from(self.plane_normal), self.plane_height)?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a target/source pair with exact depth, structure and flow.
    Synth(SynthArgs),
    /// Warp the source image onto the target with the plane homography.
    Warp(WarpArgs),
    /// Structure, flowscale and residual flow from a target depth map.
    Flow(FlowArgs),
    /// Depth from residual flow, flowscale or binned flowscale.
    DepthFromFlow(DepthFromFlowArgs),
    /// Flat, auto, certainty and static masks plus estimated normals.
    Masks(MasksArgs),
    /// Photometric and consistency losses as JSON.
    Losses(LossesArgs),
    /// Metric scale from the known camera height.
    ScaleRecover(ScaleArgs),
    /// Depth metrics against ground truth.
    Evaluate(EvaluateArgs),
    /// Export a depth map as a binary PLY point cloud.
    Pointcloud(PointcloudArgs),
}

#[derive(Debug, Args)]
pub struct CameraArg {
    /// Camera config file (key = value).
    #[arg(long)]
    pub camera: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairArg {
    /// Pair geometry JSON as written by `synth`.
    #[arg(long)]
    pub pair: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    /// Scene config file; the built-in road scene when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    #[command(flatten)]
    pub pair: PairArg,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional PGM of pixels with an in-bounds source sample.
    #[arg(long)]
    pub valid_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    #[command(flatten)]
    pub pair: PairArg,
    /// Target depth (PFM).
    #[arg(long)]
    pub depth: PathBuf,
    /// Residual flow output (3-channel PFM).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub flowscale_out: Option<PathBuf>,
    #[arg(long)]
    pub gamma_out: Option<PathBuf>,
    /// Flowscale mapped to [0, 1] with f_min/f_max.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
    #[arg(long)]
    pub f_min: Option<f64>,
    #[arg(long)]
    pub f_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DepthFromFlowArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    #[command(flatten)]
    pub pair: PairArg,
    /// Residual flow (3-channel PFM).
    #[arg(long, group = "input")]
    pub flow: Option<PathBuf>,
    /// Flowscale (1-channel PFM).
    #[arg(long, group = "input")]
    pub flowscale: Option<PathBuf>,
    /// Binned flowscale in [0, 1] (1-channel PFM).
    #[arg(long, group = "input")]
    pub raw: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gamma_out: Option<PathBuf>,
    #[arg(long)]
    pub f_min: Option<f64>,
    #[arg(long)]
    pub f_max: Option<f64>,
    /// Pixels closer than this to the epipole are invalid.
    #[arg(long)]
    pub epipole_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    #[command(flatten)]
    pub pair: PairArg,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    /// Parallax-branch depth (PFM).
    #[arg(long)]
    pub depth_pp: PathBuf,
    /// Monocular-branch depth (PFM); defaults to `--depth-pp`.
    #[arg(long)]
    pub depth_mono: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Flatness angle in degrees.
    #[arg(long)]
    pub tau_deg: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma_tol: Option<f64>,
    #[arg(long)]
    pub neighbor_offset: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    #[command(flatten)]
    pub inputs: PipelineArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub pair: Option<PathBuf>,
    #[arg(long)]
    pub target: PathBuf,
    /// Source image: runs the full pair pipeline.
    #[arg(long, conflicts_with = "synthesized")]
    pub source: Option<PathBuf>,
    /// Already-synthesized view compared directly with the target.
    #[arg(long)]
    pub synthesized: Option<PathBuf>,
    /// Restricts the direct comparison to this mask (PGM).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub depth_pp: Option<PathBuf>,
    #[arg(long)]
    pub depth_mono: Option<PathBuf>,
    #[arg(long, default_value = "homo")]
    pub stage: String,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau_deg: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ransac,
    Median,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    #[arg(long)]
    pub depth: PathBuf,
    /// Flat-road mask (PGM); detected from the depth's normals when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 1.65)]
    pub h_true: f64,
    #[arg(long, value_enum, default_value = "median")]
    pub method: MethodArg,
    /// Reference ground normal, camera → ground, comma-separated.
    #[arg(long, default_value = "0,1,0")]
    pub normal: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Corrected depth output (PFM).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub median_scale: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct PointcloudArgs {
    #[command(flatten)]
    pub camera: CameraArg,
    #[arg(long)]
    pub depth: PathBuf,
    /// Colors; white points when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Drops points deeper than this.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn check_shape(what: &str, expected: (usize, usize), found: (usize, usize)) -> CliResult<()> {
    if expected != found {
        return Err(CliError::Validation(format!(
            "{what}: shape {}x{} does not match camera {}x{}",
            found.0, found.1, expected.0, expected.1
        )));
    }
    Ok(())
}

fn load_depth(path: &Path, k: &CameraIntrinsics) -> CliResult<DepthField> {
    let field = read_scalar(path)?;
    check_shape(&path.display().to_string(), k.dims(), field.dims())?;
    Ok(field.into())
}

fn created(path: &Path) -> String {
    info!("event=write path={}", path.display());
    path.display().to_string()
}

#[derive(Serialize)]
struct Outputs {
    outputs: Vec<String>,
}

pub fn synth(args: &SynthArgs) -> CliResult<String> {
    let k = load_camera(&args.camera.camera)?;
    let cfg = load_scene(args.scene.as_deref())?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let pair = make_pair(&cfg.scene, &cfg.target_pose, &cfg.source_pose, &k)?;
    let mut outputs = Vec::new();
    let mut out = |name: &str| {
        let p = args.out.join(name);
        outputs.push(created(&p));
        p
    };
    write_image(&out("target.png"), &pair.target.image)?;
    write_image(&out("source.png"), &pair.source.image)?;
    write_scalar(&out("target_depth.pfm"), &pair.target.depth)?;
    write_scalar(&out("source_depth.pfm"), &pair.source.depth)?;
    write_scalar(&out("target_gamma.pfm"), &pair.target.gamma)?;
    write_mask(&out("visible.pgm"), &pair.visible)?;
    write_json(&out("pair.json"), &PairGeometry::new(&pair.pose_t_to_s, &pair.plane_t))?;
    let camera_path = out("camera.cfg");
    std::fs::write(&camera_path, camera_to_text(&k)).map_err(|e| CliError::io(&camera_path, e))?;
    let t_z = pair.pose_s_to_t.translation.z;
    match flowscale_from_gamma(&pair.target.gamma, t_z, &pair.plane_t) {
        Ok(s) => {
            let flow = residual_flow_from_flowscale(&s, &epipole(&k, &pair.pose_s_to_t))?;
            write_scalar(&out("flowscale.pfm"), &s)?;
            write_flow(&out("flow.pfm"), &flow)?;
        }
        Err(Error::DegenerateBaseline { .. }) => warn!("event=skip what=flow reason=zero_forward_baseline"),
        Err(e) => return Err(e.into()),
    }
    Ok(to_json(&Outputs { outputs }))
}

pub fn warp(args: &WarpArgs) -> CliResult<String> {
    let k = load_camera(&args.camera.camera)?;
    let geo = PairGeometry::load(&args.pair.pair)?;
    let source = read_image(&args.source)?;
    check_shape("source", k.dims(), source.dims())?;
    let h = plane_homography(&k, &geo.pose_t_to_s()?, &geo.plane()?)?;
    let warped = warp_by_homography(&source, &h.inverse()?)?;
    let mut outputs = vec![];
    write_image(&args.out, &warped.image)?;
    outputs.push(created(&args.out));
    if let Some(p) = &args.valid_out {
        write_mask(p, &warped.valid)?;
        outputs.push(created(p));
    }
    Ok(to_json(&Outputs { outputs }))
}

fn bounds(run: &RunConfig, f_min: Option<f64>, f_max: Option<f64>) -> (f64, f64) {
    (f_min.unwrap_or(run.f_min), f_max.unwrap_or(run.f_max))
}

pub fn flow(args: &FlowArgs, run: &RunConfig) -> CliResult<String> {
    let k = load_camera(&args.camera.camera)?;
    let geo = PairGeometry::load(&args.pair.pair)?;
    let plane = geo.plane()?;
    let pose_s_to_t = geo.pose_t_to_s()?.inverse();
    let depth = load_depth(&args.depth, &k)?;
    let gamma = gamma_from_depth(&depth, &k, &plane)?;
    let s = flowscale_from_gamma(&gamma, pose_s_to_t.translation.z, &plane)?;
    let flow = residual_flow_from_flowscale(&s, &epipole(&k, &pose_s_to_t))?;
    let mut outputs = vec![];
    write_flow(&args.out, &flow)?;
    outputs.push(created(&args.out));
    if let Some(p) = &args.flowscale_out {
        write_scalar(p, &s)?;
        outputs.push(created(p));
    }
    if let Some(p) = &args.gamma_out {
        write_scalar(p, &gamma)?;
        outputs.push(created(p));
    }
    if let Some(p) = &args.raw_out {
        let (f_min, f_max) = bounds(run, args.f_min, args.f_max);
        let raw = unbin_flowscale(&s, f_min, f_max)?;
        let raw = MaskedField::new(raw, s.valid().clone())?;
        write_scalar(p, &raw)?;
        outputs.push(created(p));
    }
    Ok(to_json(&Outputs { outputs }))
}

#[derive(Serialize)]
struct DepthFromFlowReport {
    output: String,
    valid: usize,
    clamped: usize,
}

pub fn depth_from_flow(args: &DepthFromFlowArgs, run: &RunConfig) -> CliResult<String> {
    let k = load_camera(&args.camera.camera)?;
    let geo = PairGeometry::load(&args.pair.pair)?;
    let plane = geo.plane()?;
    let pose_s_to_t = geo.pose_t_to_s()?.inverse();
    let t_z = pose_s_to_t.translation.z;
    let mut clamped = 0;
    let s: FlowScaleField = if let Some(p) = &args.flow {
        let flow = read_flow(p)?;
        check_shape("flow", k.dims(), flow.dims())?;
        let radius = args.epipole_radius.unwrap_or(run.epipole_radius);
        flowscale_from_residual_flow(&flow, &epipole(&k, &pose_s_to_t), radius)?.flowscale
    } else if let Some(p) = &args.flowscale {
        let field = read_scalar(p)?;
        check_shape("flowscale", k.dims(), field.dims())?;
        field.into()
    } else if let Some(p) = &args.raw {
        let field = read_scalar(p)?;
        check_shape("raw", k.dims(), field.dims())?;
        let (f_min, f_max) = bounds(run, args.f_min, args.f_max);
        let (values, valid) = field.into_parts();
        let (binned, n) = bin_flowscale(&values, f_min, f_max)?;
        clamped = n;
        let (binned_values, _) = binned.into_inner().into_parts();
        MaskedField::new(binned_values, valid)?.into()
    } else {
        return Err(CliError::Validation("one of --flow, --flowscale or --raw is required".into()));
    };
    let gamma = gamma_from_flowscale(&s, t_z, &plane)?;
    let depth = depth_from_gamma(&gamma, &k, &plane)?;
    write_scalar(&args.out, &depth)?;
    let output = created(&args.out);
    if let Some(p) = &args.gamma_out {
        write_scalar(p, &gamma)?;
        created(p);
    }
    Ok(to_json(&DepthFromFlowReport {
        output,
        valid: depth.valid_count(),
        clamped,
    }))
}

fn pipeline_params(a: &PipelineArgs, run: &RunConfig) -> PipelineParams {
    let mut p = PipelineParams::default();
    p.photometric.alpha = a.alpha.unwrap_or(run.alpha);
    p.epsilon = a.epsilon.unwrap_or(run.epsilon);
    p.delta = a.delta.unwrap_or(run.delta);
    p.tau = a.tau_deg.unwrap_or(run.tau_deg).to_radians().cos();
    p.gamma_tol = a.gamma_tol.unwrap_or(run.gamma_tol);
    p.neighbor_offset = a.neighbor_offset.unwrap_or(run.neighbor_offset);
    p
}

struct LoadedPair {
    k: CameraIntrinsics,
    pose_t_to_s: RigidPose,
    plane: GroundPlane,
    target: parallax_core::ImageBuffer,
    source: parallax_core::ImageBuffer,
    depth_pp: DepthField,
    depth_mono: DepthField,
}

fn load_pair_inputs(
    camera: &Path,
    pair: &Path,
    target: &Path,
    source: &Path,
    depth_pp: &Path,
    depth_mono: Option<&Path>,
) -> CliResult<LoadedPair> {
    let k = load_camera(camera)?;
    let geo = PairGeometry::load(pair)?;
    let target_img = read_image(target)?;
    let source_img = read_image(source)?;
    check_shape("target", k.dims(), target_img.dims())?;
    check_shape("source", k.dims(), source_img.dims())?;
    if target_img.channels() != source_img.channels() {
        return Err(CliError::Validation(format!(
            "target has {} channels but source has {}",
            target_img.channels(),
            source_img.channels()
        )));
    }
    let depth_pp_field = load_depth(depth_pp, &k)?;
    let depth_mono_field = match depth_mono {
        Some(p) => load_depth(p, &k)?,
        None => depth_pp_field.clone(),
    };
    Ok(LoadedPair {
        k,
        pose_t_to_s: geo.pose_t_to_s()?,
        plane: geo.plane()?,
        target: target_img,
        source: source_img,
        depth_pp: depth_pp_field,
        depth_mono: depth_mono_field,
    })
}

impl LoadedPair {
    fn inputs(&self) -> PairInputs<'_> {
        PairInputs {
            target: &self.target,
            source: &self.source,
            k: &self.k,
            pose_t_to_s: &self.pose_t_to_s,
            plane: &self.plane,
            depth_pp: &self.depth_pp,
            depth_mono: &self.depth_mono,
        }
    }
}

#[derive(Serialize)]
struct MaskCounts {
    outputs: Vec<String>,
    flat: usize,
    auto: usize,
    cert: usize,
    #[serde(rename = "static")]
    static_: usize,
}

pub fn masks(args: &MasksArgs, run: &RunConfig) -> CliResult<String> {
    let a = &args.inputs;
    let loaded = load_pair_inputs(&a.camera.camera, &a.pair.pair, &a.target, &a.source, &a.depth_pp, a.depth_mono.as_deref())?;
    let out = run_pair(&loaded.inputs(), &pipeline_params(a, run))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let m = &out.masks;
    let mut outputs = Vec::new();
    for (name, mask) in [("flat.pgm", &m.flat), ("auto.pgm", &m.auto), ("cert.pgm", &m.cert), ("static.pgm", &m.static_)] {
        let p = args.out.join(name);
        write_mask(&p, mask)?;
        outputs.push(created(&p));
    }
    let p = args.out.join("normals.pfm");
    write_normals(&p, &out.normals)?;
    outputs.push(created(&p));
    Ok(to_json(&MaskCounts {
        outputs,
        flat: m.flat.count(),
        auto: m.auto.count(),
        cert: m.cert.count(),
        static_: m.static_.count(),
    }))
}

#[derive(Serialize)]
struct DirectLosses {
    photometric: LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    consist: Option<LossReport>,
}

pub fn losses(args: &LossesArgs, run: &RunConfig) -> CliResult<String> {
    let stage: Stage = args.stage.parse()?;
    if let Some(synth_path) = &args.synthesized {
        let target = read_image(&args.target)?;
        let synthesized = read_image(synth_path)?;
        let mut params = PhotometricParams::default();
        params.alpha = args.alpha.unwrap_or(run.alpha);
        let pe = photometric_error(&synthesized, &target, &params)?;
        let mask = match &args.mask {
            Some(p) => read_mask(p)?,
            None => Grid::filled(target.width(), target.height(), true),
        };
        let photometric = masked_mean_loss(pe, &mask)?;
        let consist = match (&args.depth_pp, &args.depth_mono) {
            (Some(pp), Some(mono)) => {
                let pp: DepthField = read_scalar(pp)?.into();
                let mono: DepthField = read_scalar(mono)?.into();
                let delta = args.delta.unwrap_or(run.delta);
                Some(loss_consist(&mono, &pp, &static_mask(&mono, &pp, delta)?)?)
            }
            _ => None,
        };
        return Ok(to_json(&DirectLosses { photometric, consist }));
    }
    let (Some(camera), Some(pair), Some(source), Some(depth_pp)) = (&args.camera, &args.pair, &args.source, &args.depth_pp) else {
        return Err(CliError::Validation(
            "either --synthesized, or --camera, --pair, --source and --depth-pp are required".into(),
        ));
    };
    let loaded = load_pair_inputs(camera, pair, &args.target, source, depth_pp, args.depth_mono.as_deref())?;
    let pa = PipelineArgs {
        camera: CameraArg { camera: camera.clone() },
        pair: PairArg { pair: pair.clone() },
        target: args.target.clone(),
        source: source.clone(),
        depth_pp: depth_pp.clone(),
        depth_mono: args.depth_mono.clone(),
        epsilon: args.epsilon,
        delta: args.delta,
        tau_deg: args.tau_deg,
        alpha: args.alpha,
        gamma_tol: None,
        neighbor_offset: None,
    };
    let mut params = pipeline_params(&pa, run);
    params.stage = stage;
    let out = run_pair(&loaded.inputs(), &params)?;
    let losses: PairLosses = out.losses;
    Ok(to_json(&losses))
}

fn parse_normal(text: &str) -> CliResult<Vector3<f64>> {
    let v = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(format!("--normal {text:?}: {e}")))?;
    if v.len() != 3 {
        return Err(CliError::Validation(format!("--normal needs 3 values, got {}", v.len())));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

pub fn scale_recover(args: &ScaleArgs, run: &RunConfig) -> CliResult<String> {
    let k = load_camera(&args.camera.camera)?;
    let depth = load_depth(&args.depth, &k)?;
    let normal = parse_normal(&args.normal)?;
    let flat: Mask = match &args.mask {
        Some(p) => {
            let m = read_mask(p)?;
            check_shape("mask", k.dims(), m.dims())?;
            m
        }
        None => {
            let normals = surface_normals(&depth, &k, run.neighbor_offset)?;
            road_flat_mask(&normals, &normal, run.tau(), None, run.gamma_tol, &TrapezoidPrior::default())?
        }
    };
    let method = match args.method {
        MethodArg::Ransac => ScaleMethod::Ransac,
        MethodArg::Median => ScaleMethod::Median,
    };
    let options = HeightOptions {
        normal,
        iterations: args.iters.unwrap_or(run.ransac_iters),
        relative_tol: run.ransac_rel_tol,
        seed: args.seed.unwrap_or(run.seed),
    };
    let est: ScaleEstimate = estimate_scale(&depth, &k, &flat, args.h_true, method, &options)?;
    if let Some(p) = &args.out {
        let corrected = recover_and_apply_scale(&depth, est.h_pred, est.h_true)?;
        write_scalar(p, &corrected)?;
        created(p);
    }
    Ok(to_json(&est))
}

pub fn evaluate_cmd(args: &EvaluateArgs, run: &RunConfig) -> CliResult<String> {
    let pred: DepthField = read_scalar(&args.pred)?.into();
    let gt: DepthField = read_scalar(&args.gt)?.into();
    if pred.dims() != gt.dims() {
        return Err(CliError::Validation(format!(
            "prediction shape {}x{} does not match ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let m = evaluate(&pred, &gt, args.cap.unwrap_or(run.cap), args.median_scale)?;
    Ok(match args.format {
        OutputFormat::Json => to_json(&m),
        OutputFormat::Table => m.table(),
    })
}

#[derive(Serialize)]
struct PointcloudReport {
    output: String,
    points: usize,
}

pub fn pointcloud(args: &PointcloudArgs) -> CliResult<String> {
    let k = load_camera(&args.camera.camera)?;
    let depth = load_depth(&args.depth, &k)?;
    let image = args.image.as_deref().map(read_image).transpose()?;
    if let Some(img) = &image {
        check_shape("image", k.dims(), img.dims())?;
    }
    let cap = args.cap.unwrap_or(f64::INFINITY);
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut points = Vec::new();
    for y in 0..k.height {
        for x in 0..k.width {
            let Some(d) = depth.at(x, y).filter(|d| *d > 0.0 && *d <= cap) else { continue };
            let p = k.ray(x as f64, y as f64) * d;
            let color = match &image {
                None => [255; 3],
                Some(img) if img.channels() == 1 => [to_u8(img.get(x, y, 0)); 3],
                Some(img) => [to_u8(img.get(x, y, 0)), to_u8(img.get(x, y, 1)), to_u8(img.get(x, y, 2))],
            };
            points.push(PlyPoint {
                position: [p.x as f32, p.y as f32, p.z as f32],
                color,
            });
        }
    }
    write_ply(&args.out, &points)?;
    Ok(to_json(&PointcloudReport {
        output: created(&args.out),
        points: points.len(),
    }))
}

pub fn run_command(command: &Command, run: &RunConfig) -> CliResult<String> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Warp(a) => warp(a),
        Command::Flow(a) => flow(a, run),
        Command::DepthFromFlow(a) => depth_from_flow(a, run),
        Command::Masks(a) => masks(a, run),
        Command::Losses(a) => losses(a, run),
        Command::ScaleRecover(a) => scale_recover(a, run),
        Command::Evaluate(a) => evaluate_cmd(a, run),
        Command::Pointcloud(a) => pointcloud(a),
    }
}
