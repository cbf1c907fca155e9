//! Harris corners matched across frames by ZNCC patch search.

use rayon::prelude::*;

use crate::estimator::parabola_offset;
use crate::types::{ImageGray, Mask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherConfig {
    pub max_corners: usize,
    /// Minimum spacing between accepted corners (pixels).
    pub min_distance: usize,
    /// Odd patch side used for ZNCC.
    pub patch: usize,
    /// Search half-width in frame 1 around the corner position.
    pub search: usize,
    /// Lowe-style ratio on `1 - ZNCC` distances (best / second best).
    pub ratio: f64,
    pub min_zncc: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { max_corners: 300, min_distance: 6, patch: 9, search: 40, ratio: 0.8, min_zncc: 0.8 }
    }
}

const HARRIS_K: f64 = 0.04;
const HARRIS_WINDOW: isize = 2;
/// Candidates weaker than this fraction of the strongest allowed one are dropped.
const CORNER_REL_THRESHOLD: f64 = 0.001;

/// Harris corner response with central-difference gradients and a 5x5 box
/// window.
pub fn harris_response(img: &ImageGray) -> Vec<f64> {
    let (w, h) = img.dims();
    let g = |x: isize, y: isize| img.get_clamped(x, y) as f64;
    let grads: Vec<(f64, f64)> = (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            (0.5 * (g(x + 1, y) - g(x - 1, y)), 0.5 * (g(x, y + 1) - g(x, y - 1)))
        })
        .collect();
    (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for dy in -HARRIS_WINDOW..=HARRIS_WINDOW {
                let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -HARRIS_WINDOW..=HARRIS_WINDOW {
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let (gx, gy) = grads[yy * w + xx];
                    sxx += gx * gx;
                    syy += gy * gy;
                    sxy += gx * gy;
                }
            }
            sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy).powi(2)
        })
        .collect()
}

/// Strongest corners among the `allowed` pixels, greedily spaced by
/// `min_distance`. Ties are broken by row-major position.
pub fn detect_corners(img: &ImageGray, allowed: &Mask, cfg: &MatcherConfig) -> Vec<[usize; 2]> {
    let (w, h) = img.dims();
    let margin = cfg.patch / 2 + 1;
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let response = harris_response(img);
    let mut cand: Vec<(f64, usize)> = (0..w * h)
        .filter(|&p| {
            let (x, y) = (p % w, p / w);
            x >= margin && y >= margin && x < w - margin && y < h - margin && allowed.data()[p]
        })
        .map(|p| (response[p], p))
        .collect();
    let max = cand.iter().map(|c| c.0).fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    cand.retain(|c| c.0 > CORNER_REL_THRESHOLD * max);
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let min_d2 = (cfg.min_distance * cfg.min_distance) as isize;
    let mut out: Vec<[usize; 2]> = Vec::new();
    for (_, p) in cand {
        let (x, y) = (p % w, p / w);
        let far = out.iter().all(|&[ox, oy]| {
            let (dx, dy) = (ox as isize - x as isize, oy as isize - y as isize);
            dx * dx + dy * dy >= min_d2
        });
        if far {
            out.push([x, y]);
            if out.len() == cfg.max_corners {
                break;
            }
        }
    }
    out
}

/// Zero-mean unit-norm patch, `None` if the patch is flat or leaves the image.
fn normalized_patch(img: &ImageGray, x: isize, y: isize, half: isize) -> Option<Vec<f64>> {
    if x - half < 0 || y - half < 0 || x + half >= img.width() as isize || y + half >= img.height() as isize {
        return None;
    }
    let mut v = Vec::with_capacity(((2 * half + 1) * (2 * half + 1)) as usize);
    for dy in -half..=half {
        for dx in -half..=half {
            v.push(img.get((x + dx) as usize, (y + dy) as usize) as f64);
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let mut ss = 0.0;
    for e in &mut v {
        *e -= mean;
        ss += *e * *e;
    }
    if ss <= 1e-12 {
        return None;
    }
    let inv = 1.0 / ss.sqrt();
    v.iter_mut().for_each(|e| *e *= inv);
    Some(v)
}

/// A matched corner: integer position in frame 0, subpixel position in frame 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub p0: [usize; 2],
    pub p1: [f64; 2],
    pub zncc: f64,
}

/// Matches every corner of `i0` into `i1` by exhaustive ZNCC search with a
/// ratio test. Output order follows `corners`.
pub fn match_corners(i0: &ImageGray, i1: &ImageGray, corners: &[[usize; 2]], cfg: &MatcherConfig) -> Vec<Match> {
    let half = (cfg.patch / 2) as isize;
    let s = cfg.search as isize;
    corners
        .par_iter()
        .filter_map(|&[x, y]| {
            let a = normalized_patch(i0, x as isize, y as isize, half)?;
            let side = (2 * s + 1) as usize;
            let mut scores = vec![f64::NEG_INFINITY; side * side];
            for dy in -s..=s {
                for dx in -s..=s {
                    if let Some(b) = normalized_patch(i1, x as isize + dx, y as isize + dy, half) {
                        scores[((dy + s) as usize) * side + (dx + s) as usize] =
                            a.iter().zip(&b).map(|(p, q)| p * q).sum();
                    }
                }
            }
            let (best_i, &best) = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
            if best < cfg.min_zncc {
                return None;
            }
            let (bx, by) = ((best_i % side) as isize - s, (best_i / side) as isize - s);
            let second = scores
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    let (cx, cy) = ((i % side) as isize - s, (i / side) as isize - s);
                    (cx - bx).abs() > 2 || (cy - by).abs() > 2
                })
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if second.is_finite() && (1.0 - best) >= cfg.ratio * (1.0 - second) {
                return None;
            }
            let at = |dx: isize, dy: isize| -> f64 {
                if dx.abs() > s || dy.abs() > s {
                    return f64::NEG_INFINITY;
                }
                scores[((dy + s) as usize) * side + (dx + s) as usize]
            };
            let refine = |l: f64, r: f64| if l.is_finite() && r.is_finite() { parabola_offset(l, best, r) } else { 0.0 };
            let sx = refine(at(bx - 1, by), at(bx + 1, by));
            let sy = refine(at(bx, by - 1), at(bx, by + 1));
            Some(Match {
                p0: [x, y],
                p1: [x as f64 + bx as f64 + sx, y as f64 + by as f64 + sy],
                zncc: best,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f32 {
        (0.5 + 0.2 * (0.9 * x + 0.3 * y).sin() + 0.15 * (0.4 * x - 1.1 * y).cos()
            + 0.1 * (1.7 * x + 0.8 * y).sin() * (0.6 * y).cos()) as f32
    }

    #[test]
    fn corners_respect_mask_and_spacing() {
        let img = ImageGray::from_fn(64, 64, |x, y| texture(x as f64, y as f64));
        let mut allowed = Mask::filled(64, 64, false);
        for x in 0..64 {
            allowed.set(x, 30, true);
        }
        let cfg = MatcherConfig::default();
        let c = detect_corners(&img, &allowed, &cfg);
        assert!(!c.is_empty());
        assert!(c.iter().all(|&[_, y]| y == 30));
        for a in &c {
            for b in &c {
                if a != b {
                    let d2 = (a[0] as isize - b[0] as isize).pow(2) + (a[1] as isize - b[1] as isize).pow(2);
                    assert!(d2 >= 36);
                }
            }
        }
    }

    #[test]
    fn matches_subpixel_shift() {
        let i0 = ImageGray::from_fn(80, 80, |x, y| texture(x as f64, y as f64));
        let i1 = ImageGray::from_fn(80, 80, |x, y| texture(x as f64 - 4.3, y as f64 + 2.0));
        let cfg = MatcherConfig { search: 8, ..Default::default() };
        let corners = detect_corners(&i0, &Mask::filled(80, 80, true), &cfg);
        // Only corners whose true match keeps the whole patch inside frame 1.
        let inside: Vec<_> = corners.into_iter().filter(|&[x, y]| x + 9 < 80 && y >= 7).collect();
        let m = match_corners(&i0, &i1, &inside, &cfg);
        assert!(m.len() > 10);
        for mt in &m {
            let dx = mt.p1[0] - mt.p0[0] as f64;
            let dy = mt.p1[1] - mt.p0[1] as f64;
            assert!((dx - 4.3).abs() < 0.3 && (dy + 2.0).abs() < 0.3, "{mt:?}");
        }
    }
}
