//! Classical coarse-to-fine dense flow estimator built on windowed
//! correlation volumes, with optional guided modulation at every level.

use rayon::prelude::*;

use crate::correlation::{build_volume, downsample_hints, modulate_2d, CorrelationVolume, FeatureGrid};
use crate::error::{shape_err, Error, Result};
use crate::types::{FlowField, ImageGray, ModulationParams, SparseHints};

/// Pyramid levels are dropped once the coarse image would fall below this side.
const MIN_LEVEL_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    pub levels: usize,
    /// Search radius in pixels at every level.
    pub radius: usize,
    /// Odd side of the intensity patch used as the feature vector.
    pub patch: usize,
    /// Odd median window applied to the flow after each level, or 0 to skip.
    pub median_filter: usize,
}

impl PyramidConfig {
    pub fn new(levels: usize, radius: usize, patch: usize, median_filter: usize) -> Result<Self> {
        let cfg = Self { levels, radius, patch, median_filter };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        if self.radius == 0 {
            return Err(Error::Config("radius must be >= 1".into()));
        }
        if self.patch < 3 || self.patch.is_multiple_of(2) {
            return Err(Error::Config(format!("patch must be odd and >= 3, got {}", self.patch)));
        }
        if self.median_filter != 0 && self.median_filter.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "median window must be odd or 0, got {}",
                self.median_filter
            )));
        }
        Ok(())
    }
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { levels: 3, radius: 4, patch: 7, median_filter: 3 }
    }
}

/// Feature of pixel `p` = its `patch x patch` neighborhood, edge-replicated,
/// row-major.
pub fn extract_features(img: &ImageGray, patch: usize) -> Result<FeatureGrid> {
    if patch < 3 || patch.is_multiple_of(2) {
        return Err(Error::Config(format!("patch must be odd and >= 3, got {patch}")));
    }
    let (w, h) = img.dims();
    let dim = patch * patch;
    let half = (patch / 2) as isize;
    let mut data = vec![0.0f32; w * h * dim];
    data.par_chunks_mut(w * dim).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let dst = &mut row[x * dim..(x + 1) * dim];
            let mut k = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    dst[k] = img.get_clamped(x as isize + dx, y as isize + dy);
                    k += 1;
                }
            }
        }
    });
    FeatureGrid::new(w, h, dim, data)
}

/// 2x box downscaling; an odd trailing row/column is dropped.
pub fn downscale(img: &ImageGray) -> ImageGray {
    let (w, h) = (img.width() / 2, img.height() / 2);
    ImageGray::from_fn(w, h, |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        (img.get(sx, sy) + img.get(sx + 1, sy) + img.get(sx, sy + 1) + img.get(sx + 1, sy + 1)) * 0.25
    })
}

fn build_pyramid(img: &ImageGray, levels: usize) -> Vec<ImageGray> {
    let mut pyr = vec![img.clone()];
    while pyr.len() < levels {
        let last = pyr.last().unwrap();
        if last.width() / 2 < MIN_LEVEL_SIDE || last.height() / 2 < MIN_LEVEL_SIDE {
            break;
        }
        pyr.push(downscale(last));
    }
    pyr
}

/// Nearest-neighbor x2 upsampling of a coarse flow to `(w, h)`, doubling
/// the displacements.
pub fn upsample_flow(coarse: &FlowField, w: usize, h: usize) -> FlowField {
    FlowField::from_fn(w, h, |x, y| {
        let cx = (x / 2).min(coarse.width() - 1);
        let cy = (y / 2).min(coarse.height() - 1);
        coarse.get(cx, cy).map(|[u, v]| [2.0 * u as f64, 2.0 * v as f64])
    })
}

/// Window cells ordered for deterministic tie-breaking: smallest offset
/// norm first, then row-major `(dy, dx)`.
fn tie_break_order(radius: usize) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let mut cells: Vec<(i32, i32)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    cells.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    cells
}

/// Vertex of the parabola through three samples, as an offset from the
/// middle one in `[-0.5, 0.5]`; 0 when the samples are not concave.
pub fn parabola_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom < 0.0 {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Raw score of a perfect match (ZNCC = 1).
const PERFECT_MATCH: f64 = 2.0;

/// Winner-take-all over every pixel's grid with parabolic subpixel
/// refinement. `raw` is the unmodulated volume; a winner that is a perfect
/// match there is an exact integer alignment and is not refined.
pub fn winner_take_all(vol: &CorrelationVolume, raw: &CorrelationVolume) -> FlowField {
    let (w, h) = vol.dims();
    let r = vol.radius() as i32;
    let order = tie_break_order(vol.radius());
    let side = vol.side() as i32;
    let flows: Vec<[f32; 2]> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let grid = vol.grid(x, y);
            let at = |dx: i32, dy: i32| grid[((dy + r) * side + dx + r) as usize];
            let mut best = order[0];
            let mut best_score = at(best.0, best.1);
            for &(dx, dy) in &order[1..] {
                let s = at(dx, dy);
                if s > best_score {
                    best_score = s;
                    best = (dx, dy);
                }
            }
            let (bx, by) = best;
            let exact = raw.score(x, y, bx, by) >= PERFECT_MATCH;
            let sub_x = if exact {
                0.0
            } else if bx.abs() < r {
                parabola_offset(at(bx - 1, by), best_score, at(bx + 1, by))
            } else {
                0.0
            };
            let sub_y = if exact {
                0.0
            } else if by.abs() < r {
                parabola_offset(at(bx, by - 1), best_score, at(bx, by + 1))
            } else {
                0.0
            };
            let [ox, oy] = vol.offset(x, y);
            [
                ((ox + bx) as f64 + sub_x) as f32,
                ((oy + by) as f64 + sub_y) as f32,
            ]
        })
        .collect();
    let (u, v) = flows.iter().map(|f| (f[0], f[1])).unzip();
    FlowField::new(w, h, u, v, vec![true; w * h]).expect("dimensions match")
}

/// Per-channel median over a `size x size` edge-replicated window.
pub fn median_filter(flow: &FlowField, size: usize) -> FlowField {
    if size <= 1 {
        return flow.clone();
    }
    let (w, h) = flow.dims();
    let half = (size / 2) as isize;
    let filter = |chan: &[f32]| -> Vec<f32> {
        (0..w * h)
            .into_par_iter()
            .map(|p| {
                let (x, y) = ((p % w) as isize, (p / w) as isize);
                let mut buf = Vec::with_capacity(size * size);
                for dy in -half..=half {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -half..=half {
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        buf.push(chan[yy * w + xx]);
                    }
                }
                let mid = buf.len() / 2;
                *buf.select_nth_unstable_by(mid, f32::total_cmp).1
            })
            .collect()
    };
    FlowField::new(w, h, filter(flow.u()), filter(flow.v()), flow.valid().to_vec())
        .expect("dimensions match")
}

/// Hints resampled to a pyramid level whose pixels span `factor` fine pixels.
fn hints_for_level(hints: &SparseHints, factor: usize, w: usize, h: usize) -> Result<SparseHints> {
    if factor == 1 {
        return Ok(hints.clone());
    }
    downsample_hints(&hints.crop(w * factor, h * factor)?, factor)
}

/// Dense flow from `i0` to `i1`. When `hints` are given, every level's
/// correlation volume is modulated with the hints resampled to that level.
pub fn estimate(
    i0: &ImageGray,
    i1: &ImageGray,
    cfg: &PyramidConfig,
    hints: Option<&SparseHints>,
    params: &ModulationParams,
) -> Result<FlowField> {
    cfg.validate()?;
    if i0.dims() != i1.dims() {
        return Err(shape_err("image pair", i0.dims(), i1.dims()));
    }
    if let Some(h) = hints {
        if h.dims() != i0.dims() {
            return Err(shape_err("hints vs images", h.dims(), i0.dims()));
        }
    }
    let pyr0 = build_pyramid(i0, cfg.levels);
    let pyr1 = build_pyramid(i1, cfg.levels);
    let mut flow: Option<FlowField> = None;
    for level in (0..pyr0.len()).rev() {
        let (a, b) = (&pyr0[level], &pyr1[level]);
        let (w, h) = a.dims();
        let init = match &flow {
            Some(coarse) => upsample_flow(coarse, w, h),
            None => FlowField::zeros(w, h),
        };
        let f0 = extract_features(a, cfg.patch)?;
        let f1 = extract_features(b, cfg.patch)?;
        let raw = build_volume(&f0, &f1, cfg.radius, &init)?;
        let mut level_flow = match hints {
            Some(hints) => {
                let level_hints = hints_for_level(hints, 1 << level, w, h)?;
                winner_take_all(&modulate_2d(&raw, &level_hints, params)?, &raw)
            }
            None => winner_take_all(&raw, &raw),
        };
        if cfg.median_filter > 1 {
            level_flow = median_filter(&level_flow, cfg.median_filter);
        }
        flow = Some(level_flow);
    }
    Ok(flow.expect("at least one level"))
}

/// Flow from `i1` back to `i0`, i.e. `estimate(i1, i0, ..)` without hints.
pub fn estimate_backward(i0: &ImageGray, i1: &ImageGray, cfg: &PyramidConfig) -> Result<FlowField> {
    estimate(i1, i0, cfg, None, &ModulationParams::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f32 {
        let v = 0.5
            + 0.2 * (0.9 * x + 0.3 * y).sin()
            + 0.15 * (0.4 * x - 1.1 * y).cos()
            + 0.1 * (1.7 * x + 0.8 * y).sin() * (0.6 * y).cos();
        v as f32
    }

    fn textured(w: usize, h: usize, shift: (f64, f64)) -> ImageGray {
        ImageGray::from_fn(w, h, |x, y| texture(x as f64 - shift.0, y as f64 - shift.1))
    }

    #[test]
    fn constant_image_features_are_equal() {
        let img = ImageGray::from_fn(5, 4, |_, _| 0.3);
        let f = extract_features(&img, 3).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(f.feature(x, y), f.feature(0, 0));
            }
        }
    }

    #[test]
    fn ramp_features_row_major() {
        let img = ImageGray::from_fn(5, 5, |x, y| (x + 5 * y) as f32 / 32.0);
        let f = extract_features(&img, 3).unwrap();
        let expected: Vec<f32> = [6, 7, 8, 11, 12, 13, 16, 17, 18].iter().map(|&v| v as f32 / 32.0).collect();
        assert_eq!(f.feature(2, 2), &expected[..]);
    }

    #[test]
    fn single_pixel_replicates() {
        let img = ImageGray::from_fn(1, 1, |_, _| 0.7);
        assert_eq!(extract_features(&img, 3).unwrap().feature(0, 0), &[0.7f32; 9]);
        assert!(matches!(extract_features(&img, 4), Err(Error::Config(_))));
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let img = textured(64, 48, (0.0, 0.0));
        let f = estimate(&img, &img, &PyramidConfig::default(), None, &ModulationParams::default()).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&v| v == 0.0));
        assert_eq!(f.valid_count(), f.len());
    }

    #[test]
    fn integer_shift_single_level() {
        let i0 = textured(48, 40, (0.0, 0.0));
        let i1 = textured(48, 40, (3.0, 0.0));
        let cfg = PyramidConfig::new(1, 4, 7, 0).unwrap();
        let f = estimate(&i0, &i1, &cfg, None, &ModulationParams::default()).unwrap();
        for y in 4..36 {
            for x in 4..40 {
                let [u, v] = f.get(x, y).unwrap();
                assert!((u - 3.0).abs() <= 0.25 && v.abs() <= 0.25, "({x},{y}) -> ({u},{v})");
            }
        }
        let b = estimate_backward(&i0, &i1, &cfg).unwrap();
        for y in 4..36 {
            for x in 8..44 {
                let [u, v] = b.get(x, y).unwrap();
                assert!((u + 3.0).abs() <= 0.25 && v.abs() <= 0.25);
            }
        }
        assert_eq!(b, estimate(&i1, &i0, &cfg, None, &ModulationParams::default()).unwrap());
    }

    #[test]
    fn textureless_follows_hints() {
        let (w, h) = (32, 32);
        let flat = ImageGray::from_fn(w, h, |_, _| 0.5);
        let mut hints = SparseHints::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                hints.set(x, y, Some([2.0, 1.0]));
            }
        }
        let f = estimate(&flat, &flat, &PyramidConfig::default(), Some(&hints), &ModulationParams::default()).unwrap();
        // Targets outside the image score 0 and cannot win.
        for y in 0..h - 1 {
            for x in 0..w - 2 {
                let [u, v] = f.get(x, y).unwrap();
                assert!((u - 2.0).abs() <= 0.5 && (v - 1.0).abs() <= 0.5, "({x},{y}) -> ({u},{v})");
            }
        }
    }

    #[test]
    fn parabola_bounds() {
        assert_eq!(parabola_offset(1.0, 2.0, 1.0), 0.0);
        assert_eq!(parabola_offset(0.0, 1.0, 1.0), 0.5);
        assert_eq!(parabola_offset(1.0, 1.0, 1.0), 0.0);
        assert!(parabola_offset(0.2, 1.0, 0.9) > 0.0);
        for i in 0..100 {
            let a = (i as f64 * 0.37).sin().abs();
            let c = (i as f64 * 0.11).cos().abs();
            let o = parabola_offset(a, a.max(c) + 0.01, c);
            assert!((-0.5..=0.5).contains(&o));
        }
    }

    #[test]
    fn tie_break_prefers_center() {
        let order = tie_break_order(2);
        assert_eq!(order[0], (0, 0));
        assert_eq!(&order[1..5], &[(0, -1), (-1, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn size_mismatch() {
        let a = textured(16, 16, (0.0, 0.0));
        let b = textured(16, 12, (0.0, 0.0));
        assert!(matches!(
            estimate(&a, &b, &PyramidConfig::default(), None, &ModulationParams::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn median_removes_isolated_spike() {
        let mut f = FlowField::zeros(5, 5);
        f.set(2, 2, Some([9.0, -9.0]));
        let m = median_filter(&f, 3);
        assert_eq!(m.get(2, 2), Some([0.0, 0.0]));
    }

    #[test]
    fn config_validation() {
        assert!(PyramidConfig::new(0, 4, 7, 3).is_err());
        assert!(PyramidConfig::new(3, 0, 7, 3).is_err());
        assert!(PyramidConfig::new(3, 4, 6, 3).is_err());
        assert!(PyramidConfig::new(3, 4, 7, 2).is_err());
    }
}
