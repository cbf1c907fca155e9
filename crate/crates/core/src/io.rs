//! Readers and writers for flow, depth, image, mask, calibration and report
//! files.
//!
//! All functions work on in-memory buffers; callers own the filesystem.

use std::io::Cursor;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, ImageRecord};
use crate::types::{
    nearest_rotation, CameraIntrinsics, DepthMap, FlowField, ImageGray, RigidPose,
    SegmentationMask,
};

/// Magic number opening every Middlebury `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;
/// Middlebury convention: components beyond this magnitude mean "unknown".
const FLO_UNKNOWN: f32 = 1e9;
/// Largest side accepted by readers; guards allocations on corrupt headers.
const MAX_SIDE: usize = 1 << 15;
/// KITTI flow PNG fixed-point scale.
const KITTI_SCALE: f64 = 64.0;
const KITTI_OFFSET: f64 = 32768.0;
/// KITTI depth PNG fixed-point scale (value / 256 = meters).
const DEPTH_SCALE: f64 = 256.0;
/// Parsed rotations may be this far from orthonormal before rejection.
const ROTATION_TEXT_TOL: f64 = 1e-6;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a Middlebury `.flo` buffer. Finite values are valid; non-finite or
/// "unknown" (> 1e9) components mark the pixel invalid.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(format_err("flo header truncated"));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(format_err(format!("bad flo magic {magic}")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 || w as usize > MAX_SIDE || h as usize > MAX_SIDE {
        return Err(format_err(format!("bad flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h;
    if bytes.len() < 12 + 8 * n {
        return Err(format_err(format!(
            "flo payload truncated: {} bytes for {w}x{h}",
            bytes.len()
        )));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let a = f32::from_le_bytes(word(12 + 8 * i));
        let b = f32::from_le_bytes(word(16 + 8 * i));
        let ok = a.is_finite() && b.is_finite() && a.abs() < FLO_UNKNOWN && b.abs() < FLO_UNKNOWN;
        u.push(a);
        v.push(b);
        valid.push(ok);
    }
    FlowField::new(w, h, u, v, valid)
}

struct Png16 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u16>,
}

fn decode_png16(bytes: &[u8], channels: usize) -> Result<Png16> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| format_err(format!("png: {e}")))?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    let (width, height) = (info.width as usize, info.height as usize);
    if depth != png::BitDepth::Sixteen {
        return Err(format_err(format!("expected 16-bit png, got {depth:?}")));
    }
    let expected = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => unreachable!("unsupported channel count"),
    };
    if color != expected {
        return Err(format_err(format!("expected {expected:?} png, got {color:?}")));
    }
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(format_err(format!("bad png dimensions {width}x{height}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err("png too large"))?;
    let mut buf = vec![0u8; size];
    let out = reader.next_frame(&mut buf).map_err(|e| format_err(format!("png: {e}")))?;
    let line = out.line_size;
    let mut data = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(line).take(height) {
        for px in row[..width * channels * 2].chunks_exact(2) {
            data.push(u16::from_be_bytes([px[0], px[1]]));
        }
    }
    Ok(Png16 { width, height, channels, data })
}

fn encode_png16(width: usize, height: usize, channels: usize, data: &[u16]) -> Vec<u8> {
    debug_assert_eq!(data.len(), width * height * channels);
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(if channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().expect("in-memory png header");
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
        writer.write_image_data(&bytes).expect("in-memory png body");
    }
    out
}

fn kitti_encode(value: f32) -> Option<u16> {
    let q = (value as f64 * KITTI_SCALE + KITTI_OFFSET).round();
    (value.is_finite() && (0.0..=65535.0).contains(&q)).then_some(q as u16)
}

/// Encodes a flow as a KITTI 16-bit PNG with channels `(u, v, valid)`.
pub fn write_kitti_png(flow: &FlowField) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(flow.len() * 3);
    for i in 0..flow.len() {
        let (u, v, ok) = (flow.u()[i], flow.v()[i], flow.valid()[i]);
        let cu = kitti_encode(u).ok_or_else(|| Error::Range(format!("u={u} at pixel {i}")))?;
        let cv = kitti_encode(v).ok_or_else(|| Error::Range(format!("v={v} at pixel {i}")))?;
        data.extend_from_slice(&[cu, cv, ok as u16]);
    }
    Ok(encode_png16(flow.width(), flow.height(), 3, &data))
}

pub fn read_kitti_png(bytes: &[u8]) -> Result<FlowField> {
    let png = decode_png16(bytes, 3)?;
    let n = png.width * png.height;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for px in png.data.chunks_exact(png.channels) {
        u.push(((px[0] as f64 - KITTI_OFFSET) / KITTI_SCALE) as f32);
        v.push(((px[1] as f64 - KITTI_OFFSET) / KITTI_SCALE) as f32);
        valid.push(px[2] != 0);
    }
    FlowField::new(png.width, png.height, u, v, valid)
}

pub fn write_mask(mask: &SegmentationMask) -> Result<Vec<u8>> {
    let data = mask
        .ids()
        .iter()
        .map(|&id| u16::try_from(id).map_err(|_| Error::Range(format!("instance id {id}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(encode_png16(mask.width(), mask.height(), 1, &data))
}

pub fn read_mask(bytes: &[u8]) -> Result<SegmentationMask> {
    let png = decode_png16(bytes, 1)?;
    SegmentationMask::new(png.width, png.height, png.data.into_iter().map(u32::from).collect())
}

/// Encodes depth in the KITTI convention, `value = round(z * 256)`, 0 = missing.
pub fn write_depth(depth: &DepthMap) -> Result<Vec<u8>> {
    let data = depth
        .values()
        .iter()
        .map(|&z| {
            let q = (z * DEPTH_SCALE).round();
            if q > 65535.0 {
                Err(Error::Range(format!("depth {z} m exceeds 16-bit range")))
            } else {
                Ok(q as u16)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(encode_png16(depth.width(), depth.height(), 1, &data))
}

pub fn read_depth(bytes: &[u8]) -> Result<DepthMap> {
    let png = decode_png16(bytes, 1)?;
    let z = png.data.iter().map(|&v| v as f64 / DEPTH_SCALE).collect();
    DepthMap::new(png.width, png.height, z)
}

/// Encodes intensities in `[0, 1]` as a 16-bit grayscale PNG.
pub fn write_image(img: &ImageGray) -> Vec<u8> {
    let data: Vec<u16> = img.data().iter().map(|&v| (v as f64 * 65535.0).round() as u16).collect();
    encode_png16(img.width(), img.height(), 1, &data)
}

pub fn read_image(bytes: &[u8]) -> Result<ImageGray> {
    let png = decode_png16(bytes, 1)?;
    let data = png.data.iter().map(|&v| (v as f64 / 65535.0) as f32).collect();
    ImageGray::new(png.width, png.height, data)
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(format!("not a finite number: {s:?}")))
        })
        .collect()
}

/// Parses a row-major 3x4 `[R | t]` matrix (a trailing `0 0 0 1` row is
/// accepted). Rotations within 1e-6 of orthonormal are projected onto the
/// nearest rotation; anything further is rejected.
pub fn read_pose(text: &str) -> Result<RigidPose> {
    let vals = parse_numbers(text)?;
    match vals.len() {
        12 => {}
        16 if vals[12..] == [0.0, 0.0, 0.0, 1.0] => {}
        n => return Err(format_err(format!("pose needs 12 values, got {n}"))),
    }
    let r = Matrix3::new(
        vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
    );
    let t = Vector3::new(vals[3], vals[7], vals[11]);
    let projected = nearest_rotation(&r).ok_or_else(|| format_err("rotation svd failed"))?;
    let deviation = (projected - r).abs().max();
    if deviation > ROTATION_TEXT_TOL {
        return Err(format_err(format!("rotation is {deviation:e} away from orthonormal")));
    }
    RigidPose::new(projected, t).map_err(|e| format_err(e.to_string()))
}

pub fn write_pose(pose: &RigidPose) -> String {
    let r = pose.rotation();
    let t = pose.translation();
    let mut out = String::new();
    for row in 0..3 {
        out.push_str(&format!(
            "{:.17e} {:.17e} {:.17e} {:.17e}\n",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)],
            t[row]
        ));
    }
    out
}

/// Parses a row-major 3x3 `K` without skew.
pub fn read_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let v = parse_numbers(text)?;
    if v.len() != 9 {
        return Err(format_err(format!("intrinsics need 9 values, got {}", v.len())));
    }
    if v[1] != 0.0 || v[3] != 0.0 || v[6] != 0.0 || v[7] != 0.0 || v[8] != 1.0 {
        return Err(format_err("intrinsics must be [fx 0 cx; 0 fy cy; 0 0 1]"));
    }
    CameraIntrinsics::new(v[0], v[4], v[2], v[5]).map_err(|e| format_err(e.to_string()))
}

pub fn write_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "{:.17e} 0 {:.17e}\n0 {:.17e} {:.17e}\n0 0 1\n",
        k.fx, k.cx, k.fy, k.cy
    )
}

/// Writes `report` as CSV with header `image,epe,fl,density`, preceded by
/// `# key=value` provenance lines. The last row holds the aggregate under the
/// name `mean`.
pub fn write_report_csv(report: &EvalReport, provenance: &[(String, String)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (k, v) in provenance {
        out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["image", "epe", "fl", "density"]).expect("in-memory csv");
        let fmt = |x: f64| format!("{x:.6}");
        for r in report.records() {
            w.write_record([r.name.clone(), fmt(r.epe), fmt(r.fl), fmt(r.density)])
                .expect("in-memory csv");
        }
        if let Some(agg) = report.aggregate() {
            w.write_record(["mean".to_string(), fmt(agg.epe), fmt(agg.fl), fmt(agg.density)])
                .expect("in-memory csv");
        }
        w.flush().expect("in-memory csv");
    }
    out
}

/// Reads the per-image rows of a report written by [`write_report_csv`];
/// the aggregate row is recomputed rather than trusted.
pub fn read_report_csv(bytes: &[u8]) -> Result<EvalReport> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| format_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["image", "epe", "fl", "density"] {
        return Err(format_err(format!("unexpected report header {headers:?}")));
    }
    let mut report = EvalReport::default();
    for row in rdr.records() {
        let row = row.map_err(|e| format_err(e.to_string()))?;
        if &row[0] == "mean" {
            continue;
        }
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| format_err(format!("bad number {:?}", &row[i])))
        };
        report.push(ImageRecord { name: row[0].to_string(), epe: num(1)?, fl: num(2)?, density: num(3)? });
    }
    Ok(report)
}
