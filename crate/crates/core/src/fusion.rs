//! Segmentation-gated fusion of hint sources and ground-truth hint sampling.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::eval::{flow_metrics, FlowMetrics};
use crate::types::{FlowField, Mask, SegmentationMask, SparseHints};

/// Background pixels (id 0) keep the ego hint. Object pixels take the
/// estimator flow where it passed its consistency check, but only where an
/// ego hint existed, so the guide never exceeds the depth sensor's support.
pub fn fuse_hints(ego: &SparseHints, ric: &FlowField, ric_fb_mask: &Mask, seg: &SegmentationMask) -> Result<SparseHints> {
    let dims = ego.dims();
    for other in [ric.dims(), ric_fb_mask.dims(), seg.dims()] {
        if other != dims {
            return Err(shape_err("fusion inputs", dims, other));
        }
    }
    let (w, h) = dims;
    let mut out = SparseHints::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some(e) = ego.get(x, y) else { continue };
            let hint = if seg.get(x, y) == 0 {
                Some(e)
            } else if ric_fb_mask.get(x, y) {
                ric.get(x, y)
            } else {
                None
            };
            out.set(x, y, hint);
        }
    }
    Ok(out)
}

/// Samples exactly `round(density * #valid_gt)` ground-truth pixels without
/// replacement and perturbs each component by `Uniform[-noise, noise]`.
pub fn sample_gt_hints(gt: &FlowField, density: f64, noise: f64, seed: u64) -> Result<SparseHints> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density must be in (0, 1], got {density}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and >= 0, got {noise}")));
    }
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| gt.valid()[i]).collect();
    if valid.is_empty() {
        return Err(Error::EmptyInput("ground truth has no valid pixels".into()));
    }
    let n = ((density * valid.len() as f64).round() as usize).min(valid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, valid.len(), n).into_iter().map(|i| valid[i]).collect();
    // Noise is drawn in raster order so it does not depend on the sampling order.
    picked.sort_unstable();
    let (w, h) = gt.dims();
    let mut out = SparseHints::empty(w, h);
    for p in picked {
        let (mut ex, mut ey) = (0.0, 0.0);
        if noise > 0.0 {
            ex = rng.random_range(-noise..=noise);
            ey = rng.random_range(-noise..=noise);
        }
        out.set(p % w, p / w, Some([(gt.u()[p] as f64 + ex) as f32, (gt.v()[p] as f64 + ey) as f32]));
    }
    Ok(out)
}

/// Hint quality over pixels where both hints and ground truth exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HintStats {
    pub epe: f64,
    /// Outlier percentage.
    pub fl: f64,
    /// Percentage of image pixels carrying a hint.
    pub density: f64,
    pub metrics: FlowMetrics,
}

pub fn hint_stats(hints: &SparseHints, gt: &FlowField) -> Result<HintStats> {
    let metrics = flow_metrics(&hints.to_flow(), gt)?;
    Ok(HintStats { epe: metrics.epe, fl: metrics.fl, density: 100.0 * hints.density(), metrics })
}
