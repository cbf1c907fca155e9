//! Core data model shared by every stage of the pipeline.
//!
//! Pixel coordinates are `(x right, y down)` with the origin at the center of
//! the top-left pixel. All per-pixel buffers are row-major.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{shape_err, Error, Result};

/// Dense per-pixel 2D displacement with an explicit validity channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    /// Builds a field from raw channels; the result is canonical.
    pub fn new(
        width: usize,
        height: usize,
        u: Vec<f32>,
        v: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "flow channels must hold {n} entries (got u={}, v={}, valid={})",
                u.len(),
                v.len(),
                valid.len()
            )));
        }
        Ok(Self { width, height, u, v, valid }.canonicalize())
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: vec![true; n] }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: vec![false; n] }
    }

    /// Builds a field by evaluating `f(x, y)`; `None` marks the pixel invalid.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<[f64; 2]>,
    ) -> Self {
        let mut out = Self::invalid(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some([u, v]) = f(x, y) {
                    out.set(x, y, Some([u as f32, v as f32]));
                }
            }
        }
        out
    }

    /// Zeroes the flow of invalid pixels. Idempotent.
    pub fn canonicalize(mut self) -> Self {
        for i in 0..self.valid.len() {
            if !self.valid[i] {
                self.u[i] = 0.0;
                self.v[i] = 0.0;
            }
        }
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Flow at `(x, y)` if the pixel is valid.
    pub fn get(&self, x: usize, y: usize) -> Option<[f32; 2]> {
        let i = y * self.width + x;
        self.valid[i].then(|| [self.u[i], self.v[i]])
    }

    pub fn set(&mut self, x: usize, y: usize, value: Option<[f32; 2]>) {
        let i = y * self.width + x;
        match value {
            Some([u, v]) => {
                self.u[i] = u;
                self.v[i] = v;
                self.valid[i] = true;
            }
            None => {
                self.u[i] = 0.0;
                self.v[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Restricts validity to pixels where `mask` is set.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        if mask.dims() != self.dims() {
            return Err(shape_err("flow vs mask", self.dims(), mask.dims()));
        }
        let valid = self.valid.iter().zip(mask.data()).map(|(&a, &b)| a && b).collect();
        Self::new(self.width, self.height, self.u.clone(), self.v.clone(), valid)
    }

    /// Reinterprets the valid pixels of this field as sparse hints.
    pub fn to_hints(&self) -> SparseHints {
        SparseHints {
            width: self.width,
            height: self.height,
            hx: self.u.clone(),
            hy: self.v.clone(),
            valid: self.valid.clone(),
        }
    }
}

/// Sparse flow guide: hinted displacement per pixel plus a binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHints {
    width: usize,
    height: usize,
    hx: Vec<f32>,
    hy: Vec<f32>,
    valid: Vec<bool>,
}

impl SparseHints {
    pub fn new(
        width: usize,
        height: usize,
        hx: Vec<f32>,
        hy: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if hx.len() != n || hy.len() != n || valid.len() != n {
            return Err(Error::Shape(format!("hint channels must hold {n} entries")));
        }
        let mut out = Self { width, height, hx, hy, valid };
        for i in 0..n {
            if !out.valid[i] {
                out.hx[i] = 0.0;
                out.hy[i] = 0.0;
            }
        }
        Ok(out)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, hx: vec![0.0; n], hy: vec![0.0; n], valid: vec![false; n] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn hx(&self) -> &[f32] {
        &self.hx
    }

    pub fn hy(&self) -> &[f32] {
        &self.hy
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<[f32; 2]> {
        let i = y * self.width + x;
        self.valid[i].then(|| [self.hx[i], self.hy[i]])
    }

    pub fn set(&mut self, x: usize, y: usize, value: Option<[f32; 2]>) {
        let i = y * self.width + x;
        match value {
            Some([a, b]) => {
                self.hx[i] = a;
                self.hy[i] = b;
                self.valid[i] = true;
            }
            None => {
                self.hx[i] = 0.0;
                self.hy[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels carrying a hint, in `[0, 1]`.
    pub fn density(&self) -> f64 {
        if self.valid.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.valid.len() as f64
    }

    /// Top-left `width x height` window of the hints.
    pub fn crop(&self, width: usize, height: usize) -> Result<Self> {
        if width > self.width || height > self.height {
            return Err(shape_err("crop larger than source", (width, height), self.dims()));
        }
        let mut out = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                out.set(x, y, self.get(x, y));
            }
        }
        Ok(out)
    }

    pub fn to_flow(&self) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.hx.clone(),
            v: self.hy.clone(),
            valid: self.valid.clone(),
        }
    }
}

/// Per-pixel boolean mask (validity, consistency, occlusion).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("mask must hold {} entries", width * height)));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Metric depth per pixel; zero marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    z: Vec<f64>,
}

impl DepthMap {
    /// Non-finite or non-positive entries are stored as invalid (zero).
    pub fn new(width: usize, height: usize, mut z: Vec<f64>) -> Result<Self> {
        if z.len() != width * height {
            return Err(Error::Shape(format!("depth must hold {} entries", width * height)));
        }
        for d in &mut z {
            if !(d.is_finite() && *d > 0.0) {
                *d = 0.0;
            }
        }
        Ok(Self { width, height, z })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, z: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let z = self.z[y * self.width + x];
        (z > 0.0).then_some(z)
    }

    pub fn set(&mut self, x: usize, y: usize, z: Option<f64>) {
        self.z[y * self.width + x] = match z {
            Some(d) if d.is_finite() && d > 0.0 => d,
            _ => 0.0,
        };
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.z[y * self.width + x] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.z.iter().filter(|&&z| z > 0.0).count()
    }

    pub fn validity(&self) -> Mask {
        Mask { width: self.width, height: self.height, data: self.z.iter().map(|&z| z > 0.0).collect() }
    }
}

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite())
            || !(cx.is_finite() && cy.is_finite())
        {
            return Err(Error::Config(format!("invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera-frame point at depth `z` seen through pixel `(x, y)`.
    pub fn back_project(&self, x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z)
    }

    /// Pixel of a camera-frame point; `None` at or behind the image plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

/// Rigid transform `X1 = R X0 + t` from frame 0 to frame 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl RigidPose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rejects rotations that are not orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL)
            || !translation.iter().all(|t| t.is_finite())
        {
            return Err(Error::Config(format!(
                "rotation is not a proper rotation (|RtR-I|={ortho:e}, det={det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    /// Rotation from an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = *Rotation3::new(axis_angle).matrix();
        Self { rotation, translation }
    }

    pub fn translation_only(t: [f64; 3]) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::new(t[0], t[1], t[2]) }
    }

    /// Nearest proper rotation to `m` (via SVD), paired with `translation`.
    pub fn from_approx_rotation(m: Matrix3<f64>, translation: Vector3<f64>) -> Option<Self> {
        let rotation = nearest_rotation(&m)?;
        Some(Self { rotation, translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Applies `self` first, then `next`.
    pub fn then(&self, next: &RigidPose) -> Self {
        Self {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Angle of the relative rotation between two poses, in radians.
    pub fn rotation_distance(&self, other: &RigidPose) -> f64 {
        RigidPose { rotation: self.rotation.transpose() * other.rotation, translation: Vector3::zeros() }
            .rotation_angle()
    }

    /// Maximum deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max()
    }
}

pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Some(u * d * vt)
}

/// Instance IDs per pixel; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    id: Vec<u32>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, id: Vec<u32>) -> Result<Self> {
        if id.len() != width * height {
            return Err(Error::Shape(format!("mask must hold {} entries", width * height)));
        }
        Ok(Self { width, height, id })
    }

    pub fn background(width: usize, height: usize) -> Self {
        Self { width, height, id: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn ids(&self) -> &[u32] {
        &self.id
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.id[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.id[y * self.width + x] = id;
    }
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageGray {
    /// Intensities are clamped to `[0, 1]`; NaN becomes 0.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("image must hold {} entries", width * height)));
        }
        for d in &mut data {
            *d = if d.is_nan() { 0.0 } else { d.clamp(0.0, 1.0) };
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Edge-replicated access.
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample; `None` outside the pixel-center hull.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let g = |xx: usize, yy: usize| self.data[yy * self.width + xx] as f64;
        let top = g(x0, y0) * (1.0 - ax) + g(x1, y0) * ax;
        let bottom = g(x0, y1) * (1.0 - ax) + g(x1, y1) * ax;
        Some(top * (1.0 - ay) + bottom * ay)
    }
}

/// Gaussian modulation parameters: peak gain `k` and width `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationParams {
    k: f64,
    c: f64,
}

impl ModulationParams {
    pub fn new(k: f64, c: f64) -> Result<Self> {
        if !(k > 1.0 && k.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("modulation needs k > 1 and c > 0 (k={k}, c={c})")));
        }
        Ok(Self { k, c })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Gaussian gain for a squared distance from the hinted displacement.
    #[inline]
    pub fn gain(&self, dist2: f64) -> f64 {
        self.k * (-dist2 / (2.0 * self.c * self.c)).exp()
    }
}

impl Default for ModulationParams {
    fn default() -> Self {
        Self { k: 10.0, c: 1.0 }
    }
}

/// Forward-backward consistency tolerance in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    threshold: f64,
}

impl ConsistencyConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::Config(format!("consistency threshold must be > 0, got {threshold}")));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { threshold: 3.0 }
    }
}
