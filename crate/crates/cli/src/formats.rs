//! File formats: PFM float maps, PGM masks, 8-bit images, binary PLY point
//! clouds and JSON documents.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, ImageFormat};
use nalgebra::Vector3;
use parallax_core::{Grid, ImageBuffer, Mask, MaskedField, NormalField, ResidualFlowField};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A PFM raster in top-to-bottom row order.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn invalid_data(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

/// Little-endian PFM (negative scale), rows stored bottom to top.
pub fn write_pfm_to(mut out: impl Write, img: &PfmImage) -> std::io::Result<()> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(invalid_data(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    write!(out, "{tag}\n{} {}\n-1.0\n", img.width, img.height)?;
    let row_len = img.width * img.channels;
    for row in img.data.chunks_exact(row_len).rev() {
        for v in row {
            out.write_f32::<LittleEndian>(*v)?;
        }
    }
    out.flush()
}

fn read_token(input: &mut impl BufRead) -> std::io::Result<String> {
    let mut token = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        input.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return String::from_utf8(token).map_err(|_| invalid_data("non-UTF-8 header"));
        }
        token.push(byte[0]);
    }
}

pub fn read_pfm_from(mut input: impl BufRead) -> std::io::Result<PfmImage> {
    let channels = match read_token(&mut input)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(invalid_data(format!("not a PFM file (magic {other:?})"))),
    };
    let parse = |t: String, what: &str| -> std::io::Result<usize> {
        t.parse().map_err(|_| invalid_data(format!("bad PFM {what}: {t:?}")))
    };
    let width = parse(read_token(&mut input)?, "width")?;
    let height = parse(read_token(&mut input)?, "height")?;
    let scale_token = read_token(&mut input)?;
    let scale: f64 = scale_token
        .parse()
        .map_err(|_| invalid_data(format!("bad PFM scale: {scale_token:?}")))?;
    if scale == 0.0 || width == 0 || height == 0 {
        return Err(invalid_data("PFM scale and dimensions must be non-zero"));
    }
    let n = width * height * channels;
    let mut raw = vec![0f32; n];
    if scale < 0.0 {
        input.read_f32_into::<LittleEndian>(&mut raw)?;
    } else {
        input.read_f32_into::<BigEndian>(&mut raw)?;
    }
    let row_len = width * channels;
    let data = raw.chunks_exact(row_len).rev().flatten().copied().collect();
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_pfm_to(BufWriter::new(file), img).map_err(|e| CliError::io(path, e))
}

pub fn read_pfm(path: &Path) -> CliResult<PfmImage> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_pfm_from(BufReader::new(file)).map_err(|e| CliError::io(path, e))
}

fn expect_channels(path: &Path, img: &PfmImage, channels: usize) -> CliResult<()> {
    if img.channels != channels {
        return Err(CliError::Validation(format!(
            "{}: expected a {channels}-channel PFM, found {} channels",
            path.display(),
            img.channels
        )));
    }
    Ok(())
}

/// Scalar field as a 1-channel PFM; invalid pixels are stored as NaN.
pub fn scalar_to_pfm(field: &MaskedField<f64>) -> PfmImage {
    let (w, h) = field.dims();
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| field.at(x, y).map_or(f32::NAN, |v| v as f32))
        .collect();
    PfmImage {
        width: w,
        height: h,
        channels: 1,
        data,
    }
}

/// Non-finite samples become invalid pixels.
pub fn scalar_from_pfm(img: &PfmImage) -> MaskedField<f64> {
    MaskedField::from_fn(img.width, img.height, |x, y| {
        let v = img.data[y * img.width + x];
        v.is_finite().then_some(v as f64)
    })
}

pub fn write_scalar(path: &Path, field: &MaskedField<f64>) -> CliResult<()> {
    write_pfm(path, &scalar_to_pfm(field))
}

pub fn read_scalar(path: &Path) -> CliResult<MaskedField<f64>> {
    let img = read_pfm(path)?;
    expect_channels(path, &img, 1)?;
    Ok(scalar_from_pfm(&img))
}

fn vectors_to_pfm<const N: usize>(w: usize, h: usize, at: impl Fn(usize, usize) -> Option<[f64; N]>) -> PfmImage {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            match at(x, y) {
                Some(v) => data.extend((0..3).map(|c| if c < N { v[c] as f32 } else { 0.0 })),
                None => data.extend([f32::NAN; 3]),
            }
        }
    }
    PfmImage {
        width: w,
        height: h,
        channels: 3,
        data,
    }
}

/// Residual flow as a 3-channel PFM `(u, v, 0)`, NaN where invalid.
pub fn flow_to_pfm(flow: &ResidualFlowField) -> PfmImage {
    let (w, h) = flow.dims();
    vectors_to_pfm(w, h, |x, y| flow.at(x, y))
}

pub fn flow_from_pfm(img: &PfmImage) -> ResidualFlowField {
    ResidualFlowField::from_fn(img.width, img.height, |x, y| {
        let i = (y * img.width + x) * 3;
        let (u, v) = (img.data[i], img.data[i + 1]);
        (u.is_finite() && v.is_finite()).then_some([u as f64, v as f64])
    })
}

pub fn write_flow(path: &Path, flow: &ResidualFlowField) -> CliResult<()> {
    write_pfm(path, &flow_to_pfm(flow))
}

pub fn read_flow(path: &Path) -> CliResult<ResidualFlowField> {
    let img = read_pfm(path)?;
    expect_channels(path, &img, 3)?;
    Ok(flow_from_pfm(&img))
}

pub fn write_normals(path: &Path, normals: &NormalField) -> CliResult<()> {
    let (w, h) = normals.dims();
    write_pfm(path, &vectors_to_pfm(w, h, |x, y| normals.at(x, y).map(|n: Vector3<f64>| [n.x, n.y, n.z])))
}

/// Binary PGM with 0/255 samples.
pub fn write_mask_to(mut out: impl Write, mask: &Mask) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> = mask.data().iter().map(|v| if *v { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    out.flush()
}

pub fn write_mask(path: &Path, mask: &Mask) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_mask_to(BufWriter::new(file), mask).map_err(|e| CliError::io(path, e))
}

/// Any 8/16-bit grayscale image; samples at or above half range are set.
pub fn read_mask(path: &Path) -> CliResult<Mask> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.into_raw().into_iter().map(|v| v >= 128).collect()).map_err(CliError::from)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantized 8-bit image; the format follows the file extension
/// (png, pgm, ppm, pnm).
pub fn write_image(path: &Path, img: &ImageBuffer) -> CliResult<()> {
    let format = ImageFormat::from_path(path).map_err(|e| CliError::io(path, e))?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|v| to_u8(*v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer size matches")),
        _ => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer size matches")),
    };
    dynamic.save_with_format(path, format).map_err(|e| CliError::io(path, e))
}

/// Loads an image into [0, 1] samples. Grayscale sources keep one channel,
/// everything else becomes RGB.
pub fn read_image(path: &Path) -> CliResult<ImageBuffer> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img.color().channel_count() {
        1 | 2 => {
            if img.color().bytes_per_pixel() / img.color().channel_count() > 1 {
                (1, img.into_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            } else {
                (1, img.into_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
        }
        _ => {
            if img.color().bytes_per_pixel() / img.color().channel_count() > 1 {
                (3, img.into_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            } else {
                (3, img.into_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
        }
    };
    ImageBuffer::new(w, h, channels, data).map_err(CliError::from)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

/// Binary little-endian PLY with float xyz and uchar rgb per vertex.
pub fn write_ply_to(mut out: impl Write, points: &[PlyPoint]) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    for p in points {
        for v in p.position {
            out.write_f32::<LittleEndian>(v)?;
        }
        out.write_all(&p.color)?;
    }
    out.flush()
}

pub fn read_ply_from(mut input: impl BufRead) -> std::io::Result<Vec<PlyPoint>> {
    let mut count = None;
    let mut properties = Vec::new();
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(invalid_data("PLY header not terminated"));
        }
        let l = line.trim_end();
        if first {
            if l != "ply" {
                return Err(invalid_data("not a PLY file"));
            }
            first = false;
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(invalid_data(format!("unsupported PLY format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| invalid_data("bad vertex count"))?)
            }
            ["property", ty, name] => properties.push(((*ty).to_string(), (*name).to_string())),
            ["end_header"] => break,
            _ => {}
        }
    }
    let expected: Vec<(String, String)> = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ]
    .iter()
    .map(|(a, b)| ((*a).to_string(), (*b).to_string()))
    .collect();
    if properties != expected {
        return Err(invalid_data("expected vertex properties float x y z, uchar red green blue"));
    }
    let count = count.ok_or_else(|| invalid_data("missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let mut position = [0f32; 3];
        input.read_f32_into::<LittleEndian>(&mut position)?;
        let mut color = [0u8; 3];
        input.read_exact(&mut color)?;
        points.push(PlyPoint { position, color });
    }
    Ok(points)
}

pub fn write_ply(path: &Path, points: &[PlyPoint]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_ply_to(BufWriter::new(file), points).map_err(|e| CliError::io(path, e))
}

pub fn read_ply(path: &Path) -> CliResult<Vec<PlyPoint>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_ply_from(BufReader::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable value")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, to_json(value) + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
