//! Windowed correlation volumes and Gaussian guided modulation.
//!
//! Scores are `1 + ZNCC` in `[0, 2]`, so multiplying by a positive gain only
//! ever peaks or dampens a candidate. Out-of-image candidates score 0.

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::types::{FlowField, ModulationParams, SparseHints};

/// Per-pixel feature vectors over which correlations are computed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    width: usize,
    height: usize,
    dim: usize,
    features: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(width: usize, height: usize, dim: usize, features: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be >= 1".into()));
        }
        if features.len() != width * height * dim {
            return Err(Error::Shape(format!(
                "feature grid {width}x{height}x{dim} needs {} values, got {}",
                width * height * dim,
                features.len()
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("feature values must be finite".into()));
        }
        Ok(Self { width, height, dim, features })
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

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.features[i..i + self.dim]
    }

    /// Zero-mean, unit-norm copy of every feature; zero-variance features
    /// become all-zero so that their ZNCC with anything is 0.
    fn normalized(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.features.len()];
        out.par_chunks_mut(self.dim)
            .zip(self.features.par_chunks(self.dim))
            .for_each(|(dst, src)| {
                let mean = src.iter().map(|&v| v as f64).sum::<f64>() / self.dim as f64;
                let mut ss = 0.0;
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s as f64 - mean;
                    ss += *d * *d;
                }
                if ss > ZERO_VARIANCE {
                    let inv = 1.0 / ss.sqrt();
                    dst.iter_mut().for_each(|d| *d *= inv);
                } else {
                    dst.iter_mut().for_each(|d| *d = 0.0);
                }
            });
        out
    }
}

/// Sum of squared deviations below which a feature counts as constant.
const ZERO_VARIANCE: f64 = 1e-12;

/// Clamps a correlation to `[-1, 1]`, snapping values within rounding
/// distance of the bounds so identical patches score exactly 1.
#[inline]
fn snap_unit(zncc: f64) -> f64 {
    if zncc >= 1.0 - 1e-12 {
        1.0
    } else if zncc <= -1.0 + 1e-12 {
        -1.0
    } else {
        zncc
    }
}

/// Per-pixel `(2r+1)^2` score grids. Each pixel's grid is centered on an
/// integer offset (the rounded initial flow), so cell `(dx, dy)` of pixel `p`
/// scores the absolute displacement `offset(p) + (dx, dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    width: usize,
    height: usize,
    radius: usize,
    offsets: Vec<[i32; 2]>,
    scores: Vec<f64>,
}

impl CorrelationVolume {
    /// Builds a volume from raw parts. Scores must be finite and nonnegative.
    pub fn from_parts(
        width: usize,
        height: usize,
        radius: usize,
        offsets: Vec<[i32; 2]>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if radius == 0 {
            return Err(Error::Config("radius must be >= 1".into()));
        }
        let side = 2 * radius + 1;
        if offsets.len() != width * height || scores.len() != width * height * side * side {
            return Err(Error::Shape("volume parts do not match dimensions".into()));
        }
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("scores must be finite and nonnegative".into()));
        }
        Ok(Self { width, height, radius, offsets, scores })
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

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Window side length `2r + 1`.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Integer window center of pixel `(x, y)`.
    pub fn offset(&self, x: usize, y: usize) -> [i32; 2] {
        self.offsets[y * self.width + x]
    }

    /// The score grid of one pixel, row-major over `dy` then `dx`.
    pub fn grid(&self, x: usize, y: usize) -> &[f64] {
        let cells = self.side() * self.side();
        let i = (y * self.width + x) * cells;
        &self.scores[i..i + cells]
    }

    pub fn score(&self, x: usize, y: usize, dx: i32, dy: i32) -> f64 {
        let r = self.radius as i32;
        debug_assert!(dx.abs() <= r && dy.abs() <= r);
        let side = self.side() as i32;
        self.grid(x, y)[((dy + r) * side + dx + r) as usize]
    }
}

/// Correlates `f0` against `f1` in a window of `radius` around the rounded
/// `init_flow` of every pixel.
pub fn build_volume(
    f0: &FeatureGrid,
    f1: &FeatureGrid,
    radius: usize,
    init_flow: &FlowField,
) -> Result<CorrelationVolume> {
    if f0.dims() != f1.dims() {
        return Err(shape_err("feature grids", f0.dims(), f1.dims()));
    }
    if f0.dim != f1.dim {
        return Err(Error::Shape(format!("feature dims {} vs {}", f0.dim, f1.dim)));
    }
    if init_flow.dims() != f0.dims() {
        return Err(shape_err("initial flow vs features", init_flow.dims(), f0.dims()));
    }
    if radius == 0 {
        return Err(Error::Config("radius must be >= 1".into()));
    }
    let (w, h, dim) = (f0.width, f0.height, f0.dim);
    let n0 = f0.normalized();
    let n1 = f1.normalized();
    let side = 2 * radius + 1;
    let cells = side * side;
    let r = radius as i64;
    let offsets: Vec<[i32; 2]> = (0..w * h)
        .map(|i| {
            if init_flow.valid()[i] {
                [init_flow.u()[i].round() as i32, init_flow.v()[i].round() as i32]
            } else {
                [0, 0]
            }
        })
        .collect();
    let mut scores = vec![0.0; w * h * cells];
    scores.par_chunks_mut(w * cells).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let p = y * w + x;
            let a = &n0[p * dim..(p + 1) * dim];
            let [ox, oy] = offsets[p];
            let grid = &mut row[x * cells..(x + 1) * cells];
            for dy in -r..=r {
                let ty = y as i64 + oy as i64 + dy;
                for dx in -r..=r {
                    let tx = x as i64 + ox as i64 + dx;
                    let cell = ((dy + r) as usize) * side + (dx + r) as usize;
                    grid[cell] = if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                        0.0
                    } else {
                        let q = ty as usize * w + tx as usize;
                        let b = &n1[q * dim..(q + 1) * dim];
                        let zncc: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
                        1.0 + snap_unit(zncc)
                    };
                }
            }
        }
    });
    Ok(CorrelationVolume { width: w, height: h, radius, offsets, scores })
}

/// Guided 2D modulation: every hinted pixel's grid is multiplied by a
/// Gaussian of height `k` and width `c` centered on the hinted displacement.
/// Unhinted pixels are copied untouched.
pub fn modulate_2d(
    vol: &CorrelationVolume,
    hints: &SparseHints,
    params: &ModulationParams,
) -> Result<CorrelationVolume> {
    if hints.dims() != vol.dims() {
        return Err(shape_err("hints vs volume", hints.dims(), vol.dims()));
    }
    let mut out = vol.clone();
    let side = vol.side();
    let cells = side * side;
    let r = vol.radius as i32;
    out.scores.par_chunks_mut(cells).enumerate().for_each(|(p, grid)| {
        if !hints.valid()[p] {
            return;
        }
        let hx = hints.hx()[p] as f64;
        let hy = hints.hy()[p] as f64;
        let [ox, oy] = vol.offsets[p];
        for dy in -r..=r {
            let ey = (oy + dy) as f64 - hy;
            for dx in -r..=r {
                let ex = (ox + dx) as f64 - hx;
                grid[((dy + r) as usize) * side + (dx + r) as usize] *= params.gain(ex * ex + ey * ey);
            }
        }
    });
    Ok(out)
}

/// Per-pixel cost curves over disparities `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurves {
    width: usize,
    height: usize,
    len: usize,
    costs: Vec<f64>,
}

impl CostCurves {
    pub fn new(width: usize, height: usize, len: usize, costs: Vec<f64>) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("disparity axis must have length >= 1".into()));
        }
        if costs.len() != width * height * len {
            return Err(Error::Shape(format!(
                "cost curves {width}x{height}x{len} need {} values",
                width * height * len
            )));
        }
        Ok(Self { width, height, len, costs })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn curve(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.len;
        &self.costs[i..i + self.len]
    }
}

/// Sparse disparity hints for the stereo (1D) modulation.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityHints {
    width: usize,
    height: usize,
    disparity: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityHints {
    pub fn new(width: usize, height: usize, disparity: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if disparity.len() != width * height || valid.len() != width * height {
            return Err(Error::Shape(format!("disparity hints need {} entries", width * height)));
        }
        Ok(Self { width, height, disparity, valid })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Guided 1D modulation of stereo cost curves around hinted disparities.
pub fn modulate_1d(
    costs: &CostCurves,
    hints: &DisparityHints,
    params: &ModulationParams,
) -> Result<CostCurves> {
    if hints.dims() != costs.dims() {
        return Err(shape_err("disparity hints vs costs", hints.dims(), costs.dims()));
    }
    let mut out = costs.clone();
    out.costs.chunks_mut(costs.len).enumerate().for_each(|(p, curve)| {
        if !hints.valid[p] {
            return;
        }
        let target = hints.disparity[p] as f64;
        for (d, c) in curve.iter_mut().enumerate() {
            let e = d as f64 - target;
            *c *= params.gain(e * e);
        }
    });
    Ok(out)
}

/// Nearest-neighbor hint downsampling by an integer `factor`. Each coarse
/// cell takes the valid fine hint closest to its footprint center (ties go
/// to the first in row-major order), scaled by `1 / factor`.
pub fn downsample_hints(hints: &SparseHints, factor: usize) -> Result<SparseHints> {
    if factor == 0 {
        return Err(Error::Config("downsampling factor must be >= 1".into()));
    }
    let (w, h) = hints.dims();
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::Shape(format!("{w}x{h} is not divisible by {factor}")));
    }
    if factor == 1 {
        return Ok(hints.clone());
    }
    let (cw, ch) = (w / factor, h / factor);
    let center = (factor as f64 - 1.0) / 2.0;
    let scale = 1.0 / factor as f64;
    let mut out = SparseHints::empty(cw, ch);
    for cy in 0..ch {
        for cx in 0..cw {
            let mut best: Option<(f64, [f32; 2])> = None;
            for fy in 0..factor {
                for fx in 0..factor {
                    let Some(hint) = hints.get(cx * factor + fx, cy * factor + fy) else {
                        continue;
                    };
                    let d = (fx as f64 - center).powi(2) + (fy as f64 - center).powi(2);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, hint));
                    }
                }
            }
            if let Some((_, [a, b])) = best {
                out.set(cx, cy, Some([(a as f64 * scale) as f32, (b as f64 * scale) as f32]));
            }
        }
    }
    Ok(out)
}
