//! Procedural scenes with analytic ground truth.
//!
//! The background is a wall (optionally with a ground plane below the
//! camera) carrying a value-noise texture that is defined on the image plane
//! of frame 0. Frame 1 is rendered by casting its pixel rays into the scene,
//! so both frames are photometrically consistent by construction. Objects are
//! textured image-space rectangles with their own depth and 2D motion.

use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, DepthMap, FlowField, ImageGray, Mask, RigidPose, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layout {
    /// Fronto-parallel plane at `depth`.
    Plane { depth: f64 },
    /// Ground plane `camera_height` below the camera, closed by a wall at
    /// `wall_depth`.
    GroundWall { camera_height: f64, wall_depth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthSampling {
    /// LIDAR-like: every `row_step`-th row, random pixels within the row.
    Scanlines { row_step: usize },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    /// Frame-0 rectangle `[x, y, width, height]` in pixels.
    pub rect: [usize; 4],
    pub depth: f64,
    /// Image-space motion between the frames.
    pub motion: [f64; 2],
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub k: CameraIntrinsics,
    /// Motion of scene points from camera 0 to camera 1 coordinates.
    pub pose: RigidPose,
    pub layout: Layout,
    pub texture_seed: u64,
    /// Later objects are drawn on top of earlier ones.
    pub objects: Vec<ObjectSpec>,
    /// Fraction of pixels carrying a depth sample.
    pub depth_density: f64,
    /// Standard deviation of the multiplicative depth noise.
    pub depth_noise: f64,
    pub sampling: DepthSampling,
    /// Seed for depth sampling and noise.
    pub seed: u64,
}

impl SceneSpec {
    /// A textured plane at `depth` seen by a static camera.
    pub fn plane(width: usize, height: usize, k: CameraIntrinsics, depth: f64) -> Self {
        Self {
            width,
            height,
            k,
            pose: RigidPose::identity(),
            layout: Layout::Plane { depth },
            texture_seed: 0,
            objects: Vec::new(),
            depth_density: 0.05,
            depth_noise: 0.01,
            sampling: DepthSampling::Scanlines { row_step: 4 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub i0: ImageGray,
    pub i1: ImageGray,
    /// Ground-truth flow, stored in single precision.
    pub gt: FlowField,
    /// Ground-truth flow in double precision, row-major.
    pub gt_exact: Vec<Option<[f64; 2]>>,
    /// Dense noise-free depth of each frame.
    pub depth0: DepthMap,
    pub depth1: DepthMap,
    /// Sparse noisy depth of each frame.
    pub d0: DepthMap,
    pub d1: DepthMap,
    pub seg: SegmentationMask,
    /// Frame-0 pixels that leave the image or are hidden in frame 1.
    pub occlusion: Mask,
    pub k: CameraIntrinsics,
    pub pose: RigidPose,
}

// ---- texture ----

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x9E37_79B9) ^ (iy as u64).wrapping_shl(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (fade(x - x0), fade(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

const OCTAVES: [(f64, f64); 3] = [(24.0, 0.45), (12.0, 0.35), (6.0, 0.2)];

/// Band-limited value noise in `[0.1, 0.9]`, defined on the whole plane.
pub fn texture(seed: u64, x: f64, y: f64) -> f64 {
    let mut acc = 0.0;
    for (o, &(scale, amp)) in OCTAVES.iter().enumerate() {
        acc += amp * value_noise(splitmix(seed.wrapping_add(o as u64)), x / scale, y / scale);
    }
    0.1 + 0.8 * acc
}

// ---- geometry ----

fn ray(k: &CameraIntrinsics, x: f64, y: f64) -> Vector3<f64> {
    Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0)
}

/// First positive hit of the ray `origin + s * dir` with the background.
fn background_hit(layout: &Layout, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let (wall, ground) = match *layout {
        Layout::Plane { depth } => (depth, None),
        Layout::GroundWall { camera_height, wall_depth } => (wall_depth, Some(camera_height)),
    };
    let mut best = f64::INFINITY;
    if dir.z > 0.0 {
        best = best.min((wall - origin.z) / dir.z);
    }
    if let Some(hgt) = ground {
        if dir.y > 0.0 {
            best = best.min((hgt - origin.y) / dir.y);
        }
    }
    (best.is_finite() && best > 0.0).then_some(best)
}

/// Frame-0 depth of the background at pixel `(x, y)`.
pub fn background_depth(layout: &Layout, k: &CameraIntrinsics, x: f64, y: f64) -> Option<f64> {
    // The ray has unit z, so the hit parameter is the depth.
    background_hit(layout, &Vector3::zeros(), &ray(k, x, y))
}

/// Flow of a frame-0 camera point under `pose`, differencing normalized
/// coordinates so that the identity pose gives exactly zero.
fn point_flow(k: &CameraIntrinsics, pose: &RigidPose, p0: &Vector3<f64>) -> Option<[f64; 2]> {
    let p1 = pose.rotation() * p0 + pose.translation();
    if p1.z <= 0.0 {
        return None;
    }
    Some([k.fx * (p1.x / p1.z - p0.x / p0.z), k.fy * (p1.y / p1.z - p0.y / p0.z)])
}

struct Placed {
    id: u32,
    spec: ObjectSpec,
}

impl Placed {
    fn covers0(&self, x: f64, y: f64) -> bool {
        let [rx, ry, rw, rh] = self.spec.rect;
        let (x0, y0) = (rx as f64 - 0.5, ry as f64 - 0.5);
        x >= x0 && x < x0 + rw as f64 && y >= y0 && y < y0 + rh as f64
    }

    fn covers1(&self, x: f64, y: f64) -> bool {
        self.covers0(x - self.spec.motion[0], y - self.spec.motion[1])
    }

    fn shade(&self, x0: f64, y0: f64) -> f32 {
        let [rx, ry, _, _] = self.spec.rect;
        texture(self.spec.texture_seed, x0 - rx as f64, y0 - ry as f64) as f32
    }
}

fn validate(spec: &SceneSpec) -> Result<()> {
    let bad = |m: String| Err(Error::Config(m));
    if spec.width < 16 || spec.height < 16 {
        return bad(format!("scene must be at least 16x16, got {}x{}", spec.width, spec.height));
    }
    match spec.layout {
        Layout::Plane { depth } if !(depth > 0.0 && depth.is_finite()) => {
            return bad(format!("plane depth must be positive, got {depth}"))
        }
        Layout::GroundWall { camera_height, wall_depth }
            if !(camera_height > 0.0 && wall_depth > 0.0 && camera_height.is_finite() && wall_depth.is_finite()) =>
        {
            return bad("ground/wall distances must be positive".into())
        }
        _ => {}
    }
    if !(spec.depth_density > 0.0 && spec.depth_density <= 1.0) {
        return bad(format!("depth density must be in (0, 1], got {}", spec.depth_density));
    }
    if !(spec.depth_noise >= 0.0 && spec.depth_noise < 0.3) {
        return bad(format!("depth noise must be in [0, 0.3), got {}", spec.depth_noise));
    }
    if let DepthSampling::Scanlines { row_step: 0 } = spec.sampling {
        return bad("scanline step must be positive".into());
    }
    // The camera centre must stay inside the background for frame 1.
    let c1 = spec.pose.inverse().translation().clone_owned();
    let inside = match spec.layout {
        Layout::Plane { depth } => c1.z < depth,
        Layout::GroundWall { camera_height, wall_depth } => c1.z < wall_depth && c1.y < camera_height,
    };
    if !inside {
        return bad("second camera lies behind the background".into());
    }
    for (i, o) in spec.objects.iter().enumerate() {
        let [x, y, w, h] = o.rect;
        let [mx, my] = o.motion;
        let fits = w > 0
            && h > 0
            && x + w <= spec.width
            && y + h <= spec.height
            && mx.is_finite()
            && my.is_finite()
            && x as f64 + mx >= 0.0
            && y as f64 + my >= 0.0
            && (x + w) as f64 + mx <= spec.width as f64
            && (y + h) as f64 + my <= spec.height as f64;
        if !fits {
            return bad(format!("object {i} leaves the frame"));
        }
        if !(o.depth > 0.0 && o.depth.is_finite()) {
            return bad(format!("object {i} depth must be positive"));
        }
    }
    Ok(())
}

fn sparse_depth(dense: &DepthMap, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<DepthMap> {
    let (w, h) = dense.dims();
    let noise = Normal::new(0.0, spec.depth_noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let (rows, p): (Vec<usize>, f64) = match spec.sampling {
        DepthSampling::Scanlines { row_step } => {
            let rows: Vec<usize> = (row_step / 2..h).step_by(row_step).collect();
            let frac = rows.len() as f64 / h as f64;
            (rows, (spec.depth_density / frac).min(1.0))
        }
        DepthSampling::Uniform => ((0..h).collect(), spec.depth_density),
    };
    let mut out = DepthMap::empty(w, h);
    for y in rows {
        for x in 0..w {
            // Draw unconditionally so the pattern does not depend on the noise level.
            let keep = rng.random_bool(p);
            let eps: f64 = noise.sample(rng);
            if keep {
                if let Some(z) = dense.get(x, y) {
                    let f = if spec.depth_noise > 0.0 { (1.0 + eps).max(0.5) } else { 1.0 };
                    out.set(x, y, Some(z * f));
                }
            }
        }
    }
    Ok(out)
}

/// Renders a scene. Identical specs give identical scenes.
pub fn make_scene(spec: &SceneSpec) -> Result<Scene> {
    validate(spec)?;
    let (w, h) = (spec.width, spec.height);
    let k = spec.k;
    let pose = spec.pose;
    let objects: Vec<Placed> = spec.objects.iter().enumerate().map(|(i, &s)| Placed { id: i as u32 + 1, spec: s }).collect();
    let top0 = |x: f64, y: f64| objects.iter().rev().find(|o| o.covers0(x, y));
    let top1 = |x: f64, y: f64| objects.iter().rev().find(|o| o.covers1(x, y));

    struct Px0 {
        i0: f32,
        z0: f64,
        seg: u32,
        flow: Option<[f64; 2]>,
    }
    let frame0: Vec<Px0> = (0..w * h)
        .into_par_iter()
        .map(|p| -> Result<Px0> {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            if let Some(o) = top0(x, y) {
                return Ok(Px0 { i0: o.shade(x, y), z0: o.spec.depth, seg: o.id, flow: Some(o.spec.motion) });
            }
            let r = ray(&k, x, y);
            let z = background_hit(&spec.layout, &Vector3::zeros(), &r)
                .ok_or_else(|| Error::Config(format!("pixel ({x}, {y}) does not see the background")))?;
            let flow = point_flow(&k, &pose, &(r * z));
            Ok(Px0 { i0: texture(spec.texture_seed, x, y) as f32, z0: z, seg: 0, flow })
        })
        .collect::<Result<_>>()?;

    // Frame 1: cast rays from camera 1 into frame-0 coordinates.
    let inv = pose.inverse();
    let origin1 = *inv.translation();
    let frame1: Vec<(f32, f64)> = (0..w * h)
        .into_par_iter()
        .map(|p| -> Result<(f32, f64)> {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            if let Some(o) = top1(x, y) {
                return Ok((o.shade(x - o.spec.motion[0], y - o.spec.motion[1]), o.spec.depth));
            }
            let r1 = ray(&k, x, y);
            let dir = inv.rotation() * r1;
            let s = background_hit(&spec.layout, &origin1, &dir)
                .ok_or_else(|| Error::Config(format!("frame-1 pixel ({x}, {y}) does not see the background")))?;
            // The frame-1 point is s * r1; its frame-0 coordinates give the texture position.
            let q1 = r1 * s;
            let q0 = inv.rotation() * q1 + inv.translation();
            if q0.z <= 0.0 {
                return Err(Error::Config("background point behind the first camera".into()));
            }
            let u = x + k.fx * (q0.x / q0.z - q1.x / q1.z);
            let v = y + k.fy * (q0.y / q0.z - q1.y / q1.z);
            Ok((texture(spec.texture_seed, u, v) as f32, s))
        })
        .collect::<Result<_>>()?;

    let layer = |seg: u32| seg as usize;
    let occlusion: Vec<bool> = (0..w * h)
        .map(|p| {
            let px = &frame0[p];
            let Some([u, v]) = px.flow else { return true };
            let (tx, ty) = ((p % w) as f64 + u, (p / w) as f64 + v);
            if tx < 0.0 || ty < 0.0 || tx > (w - 1) as f64 || ty > (h - 1) as f64 {
                return true;
            }
            match top1(tx, ty) {
                Some(o) => layer(o.id) > layer(px.seg),
                None => false,
            }
        })
        .collect();

    let gt_exact: Vec<Option<[f64; 2]>> = frame0.iter().map(|p| p.flow).collect();
    let gt = FlowField::from_fn(w, h, |x, y| gt_exact[y * w + x]);
    let depth0 = DepthMap::new(w, h, frame0.iter().map(|p| p.z0).collect())?;
    let depth1 = DepthMap::new(w, h, frame1.iter().map(|p| p.1).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d0 = sparse_depth(&depth0, spec, &mut rng)?;
    let d1 = sparse_depth(&depth1, spec, &mut rng)?;
    Ok(Scene {
        i0: ImageGray::new(w, h, frame0.iter().map(|p| p.i0).collect())?,
        i1: ImageGray::new(w, h, frame1.iter().map(|p| p.0).collect())?,
        gt,
        gt_exact,
        depth0,
        depth1,
        d0,
        d1,
        seg: SegmentationMask::new(w, h, frame0.iter().map(|p| p.seg).collect())?,
        occlusion: Mask::new(w, h, occlusion)?,
        k,
        pose,
    })
}

// ---- presets ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Moving camera, static world.
    StaticSuite,
    /// Moving camera plus independently moving objects.
    DynamicSuite,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::StaticSuite => "static-suite",
            Preset::DynamicSuite => "dynamic-suite",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-suite" => Ok(Preset::StaticSuite),
            "dynamic-suite" => Ok(Preset::DynamicSuite),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected static-suite or dynamic-suite)"))),
        }
    }
}

pub const PRESET_SIZE: usize = 256;

/// Spec of scene `index` of a preset. Each index draws from its own random
/// stream, so a scene does not depend on how many others are generated.
pub fn preset_spec(preset: Preset, index: usize, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let n = PRESET_SIZE;
    let f = 0.625 * n as f64;
    let c = (n as f64 - 1.0) / 2.0;
    let k = CameraIntrinsics::new(f, f, c, c).expect("valid intrinsics");
    let camera_height = rng.random_range(1.4..1.8);
    let wall_depth = rng.random_range(12.0..20.0);
    let deg = std::f64::consts::PI / 180.0;
    let rot = Vector3::new(rng.random_range(-0.5..0.5) * deg, rng.random_range(-1.5..1.5) * deg, rng.random_range(-0.5..0.5) * deg);
    let t = Vector3::new(rng.random_range(-0.12..0.12), rng.random_range(-0.03..0.03), -rng.random_range(0.15..0.3));
    let pose = RigidPose::from_axis_angle(rot, t);
    let layout = Layout::GroundWall { camera_height, wall_depth };
    let mut objects = Vec::new();
    if preset == Preset::DynamicSuite {
        let count = rng.random_range(2..=3);
        let mut tries = 0;
        while objects.len() < count && tries < 100 {
            tries += 1;
            let ow = rng.random_range(28..=56usize);
            let oh = rng.random_range(28..=56usize);
            let speed = rng.random_range(14.0..28.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let motion = [(speed * angle.cos()).round(), (speed * angle.sin()).round()];
            let margin = 4.0 + speed;
            let lo = margin as usize;
            if n < 2 * lo + ow || n < 2 * lo + oh {
                continue;
            }
            let x = rng.random_range(lo..=n - lo - ow);
            let y = rng.random_range(lo..=n - lo - oh);
            let centre_depth = background_depth(&layout, &k, (x + ow / 2) as f64, (y + oh / 2) as f64).unwrap_or(wall_depth);
            let depth = centre_depth * rng.random_range(0.15..0.3);
            objects.push(ObjectSpec { rect: [x, y, ow, oh], depth, motion, texture_seed: rng.random() });
        }
    }
    SceneSpec {
        width: n,
        height: n,
        k,
        pose,
        layout,
        texture_seed: rng.random(),
        objects,
        depth_density: 0.05,
        depth_noise: 0.01,
        sampling: DepthSampling::Scanlines { row_step: 4 },
        seed: rng.random(),
    }
}

pub fn preset_specs(preset: Preset, count: usize, seed: u64) -> Vec<SceneSpec> {
    (0..count).map(|i| preset_spec(preset, i, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egoflow::ego_flow;

    fn small_k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 31.5, 31.5).unwrap()
    }

    #[test]
    fn identity_without_objects_is_static() {
        let s = make_scene(&SceneSpec::plane(64, 64, small_k(), 5.0)).unwrap();
        assert!(s.gt.valid().iter().all(|&v| v));
        assert!(s.gt.u().iter().chain(s.gt.v()).all(|&f| f == 0.0));
        assert_eq!(s.i0, s.i1);
    }

    #[test]
    fn lateral_translation_on_plane() {
        let mut spec = SceneSpec::plane(64, 64, small_k(), 2.0);
        spec.pose = RigidPose::translation_only([1.0, 0.0, 0.0]);
        let s = make_scene(&spec).unwrap();
        for f in s.gt_exact.iter() {
            let [u, v] = f.unwrap();
            assert!((u - 50.0).abs() < 1e-9 && v.abs() < 1e-9);
        }
    }

    #[test]
    fn object_overrides_background() {
        let mut spec = SceneSpec::plane(64, 64, small_k(), 5.0);
        spec.objects.push(ObjectSpec { rect: [20, 20, 10, 8], depth: 2.0, motion: [-4.0, 2.0], texture_seed: 9 });
        let s = make_scene(&spec).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let inside = (20..30).contains(&x) && (20..28).contains(&y);
                assert_eq!(s.seg.get(x, y), inside as u32);
                let want = if inside { [-4.0, 2.0] } else { [0.0, 0.0] };
                assert_eq!(s.gt.get(x, y), Some(want));
            }
        }
        // Where the object left, the background reappears unchanged.
        assert_eq!(s.i1.get(29, 20), texture(spec.texture_seed, 29.0, 20.0) as f32);
        assert_eq!(s.i1.get(16, 22), s.i0.get(20, 20));
    }

    #[test]
    fn degenerate_specs() {
        let mut spec = SceneSpec::plane(64, 64, small_k(), 0.0);
        assert!(matches!(make_scene(&spec), Err(Error::Config(_))));
        spec.layout = Layout::Plane { depth: 3.0 };
        spec.objects.push(ObjectSpec { rect: [60, 10, 8, 8], depth: 1.0, motion: [0.0, 0.0], texture_seed: 0 });
        assert!(matches!(make_scene(&spec), Err(Error::Config(_))));
        spec.objects[0].rect = [50, 10, 8, 8];
        spec.objects[0].motion = [7.0, 0.0];
        assert!(matches!(make_scene(&spec), Err(Error::Config(_))));
        spec.objects.clear();
        spec.pose = RigidPose::translation_only([0.0, 0.0, -4.0]);
        assert!(matches!(make_scene(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn background_flow_matches_ego_flow() {
        for i in 0..3 {
            let spec = preset_spec(Preset::StaticSuite, i, 5);
            let s = make_scene(&spec).unwrap();
            let ego = ego_flow(&s.depth0, &s.k, &s.pose);
            for p in 0..ego.len() {
                let (x, y) = ((p % 256) as f64, (p / 256) as f64);
                let e = super::super::egoflow::ego_displacement(&s.k, &s.pose, x, y, s.depth0.values()[p]).unwrap();
                let g = s.gt_exact[p].unwrap();
                assert!((e[0] - g[0]).abs() < 1e-9 && (e[1] - g[1]).abs() < 1e-9);
                assert!(ego.valid()[p]);
            }
        }
    }

    #[test]
    fn photometric_consistency() {
        for preset in [Preset::StaticSuite, Preset::DynamicSuite] {
            let s = make_scene(&preset_spec(preset, 0, 3)).unwrap();
            let (w, h) = s.i0.dims();
            let mut worst: f64 = 0.0;
            for y in 1..h - 1 {
                'px: for x in 1..w - 1 {
                    // Skip pixels next to occlusions or object borders.
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (xx, yy) = (x + dx - 1, y + dy - 1);
                            if s.occlusion.get(xx, yy) || s.seg.get(xx, yy) != s.seg.get(x, y) {
                                continue 'px;
                            }
                        }
                    }
                    let [u, v] = s.gt_exact[y * w + x].unwrap();
                    if let Some(i1) = s.i1.sample_bilinear(x as f64 + u, y as f64 + v) {
                        worst = worst.max((i1 - s.i0.get(x, y) as f64).abs());
                    }
                }
            }
            assert!(worst < 0.02, "{preset:?}: {worst}");
        }
    }

    #[test]
    fn seg_zero_off_objects_and_determinism() {
        let spec = preset_spec(Preset::DynamicSuite, 2, 11);
        assert!(!spec.objects.is_empty());
        let a = make_scene(&spec).unwrap();
        let b = make_scene(&spec).unwrap();
        assert_eq!(a.i1, b.i1);
        assert_eq!(a.d0, b.d0);
        let (w, h) = a.seg.dims();
        for y in 0..h {
            for x in 0..w {
                let covered = spec.objects.iter().any(|o| {
                    let [rx, ry, rw, rh] = o.rect;
                    (rx..rx + rw).contains(&x) && (ry..ry + rh).contains(&y)
                });
                assert_eq!(a.seg.get(x, y) == 0, !covered);
            }
        }
        assert_eq!(preset_spec(Preset::DynamicSuite, 2, 11), spec);
    }

    #[test]
    fn sparse_depth_density() {
        let s = make_scene(&preset_spec(Preset::StaticSuite, 1, 0)).unwrap();
        let dens = s.d0.valid_count() as f64 / s.d0.values().len() as f64;
        assert!((dens - 0.05).abs() < 0.01, "{dens}");
        for p in 0..s.d0.values().len() {
            let z = s.d0.values()[p];
            if z > 0.0 {
                assert!((z / s.depth0.values()[p] - 1.0).abs() < 0.06);
            }
        }
    }
}
