//! Flow hints from depth and camera geometry.
//!
//! Ego-motion flow reprojects each pixel with known depth through the
//! relative camera pose. The pose comes from PnP on matched corners, and
//! the resulting hints are filtered by a forward-backward consistency check
//! against the backward ego-motion flow of the (densified) second depth map.

pub mod matching;
pub mod pnp;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::types::{
    CameraIntrinsics, ConsistencyConfig, DepthMap, FlowField, ImageGray, Mask, RigidPose, SparseHints,
};

pub use matching::{detect_corners, match_corners, MatcherConfig};
pub use pnp::{estimate_pose, Correspondence, PoseEstimate, RansacConfig};

/// Flow of pixel `(x, y)` at depth `z` under camera motion `pose`, or `None`
/// if the point lands at or behind the second image plane.
#[inline]
pub fn ego_displacement(k: &CameraIntrinsics, pose: &RigidPose, x: f64, y: f64, z: f64) -> Option<[f64; 2]> {
    // Differencing normalized coordinates keeps the identity pose exactly zero.
    let x0 = k.back_project(x, y, z);
    let x1 = pose.transform(&x0);
    if x1.z <= 0.0 {
        return None;
    }
    Some([k.fx * (x1.x / x1.z - x0.x / x0.z), k.fy * (x1.y / x1.z - x0.y / x0.z)])
}

/// Ego-motion flow for every pixel with valid depth.
pub fn ego_flow(depth: &DepthMap, k: &CameraIntrinsics, pose: &RigidPose) -> FlowField {
    let (w, h) = depth.dims();
    let flows: Vec<Option<[f64; 2]>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let z = depth.get(x, y)?;
            ego_displacement(k, pose, x as f64, y as f64, z)
        })
        .collect();
    FlowField::from_fn(w, h, |x, y| flows[y * w + x])
}

/// Bilinear sample of `flow` at `(x, y)`. Every tap with nonzero weight must
/// be valid and inside the image.
pub fn sample_flow_bilinear(flow: &FlowField, x: f64, y: f64) -> Option<[f64; 2]> {
    let (w, h) = flow.dims();
    if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let mut acc = [0.0; 2];
    for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
        for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
            let wt = wx * wy;
            if wt == 0.0 {
                continue;
            }
            let [u, v] = flow.get(x0 + dx, y0 + dy)?;
            acc[0] += wt * u as f64;
            acc[1] += wt * v as f64;
        }
    }
    Some(acc)
}

/// Forward-backward consistency: pixel `p` passes when the backward flow,
/// sampled at `p + fwd(p)`, cancels `fwd(p)` within the threshold.
pub fn fb_consistency(fwd: &FlowField, bwd: &FlowField, cfg: &ConsistencyConfig) -> Result<Mask> {
    if fwd.dims() != bwd.dims() {
        return Err(shape_err("forward vs backward flow", fwd.dims(), bwd.dims()));
    }
    let (w, h) = fwd.dims();
    let t = cfg.threshold();
    let data: Vec<bool> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let Some([u, v]) = fwd.get(x, y) else { return false };
            let (u, v) = (u as f64, v as f64);
            match sample_flow_bilinear(bwd, x as f64 + u, y as f64 + v) {
                Some([bu, bv]) => (u + bu).hypot(v + bv) <= t,
                None => false,
            }
        })
        .collect();
    Mask::new(w, h, data)
}

/// Maximum number of dilation passes in [`complete_depth`].
pub const COMPLETION_PASSES: usize = 10;

/// Fills missing depth by repeated min-depth dilation over a `kernel` window
/// until dense or after [`COMPLETION_PASSES`] passes. Valid inputs are kept.
pub fn complete_depth(depth: &DepthMap, kernel: usize) -> Result<DepthMap> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("completion kernel must be odd and >= 3, got {kernel}")));
    }
    if depth.valid_count() == 0 {
        return Err(Error::EmptyInput("depth map has no valid pixels".into()));
    }
    let (w, h) = depth.dims();
    let half = (kernel / 2) as isize;
    let mut cur = depth.values().to_vec();
    for _ in 0..COMPLETION_PASSES {
        if cur.iter().all(|&z| z > 0.0) {
            break;
        }
        let prev = cur.clone();
        cur.par_iter_mut().enumerate().for_each(|(p, z)| {
            if *z > 0.0 {
                return;
            }
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let mut best = f64::INFINITY;
            for dy in -half..=half {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -half..=half {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let d = prev[yy as usize * w + xx as usize];
                    if d > 0.0 && d < best {
                        best = d;
                    }
                }
            }
            if best.is_finite() {
                *z = best;
            }
        });
    }
    DepthMap::new(w, h, cur)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgoHintsConfig {
    pub ransac: RansacConfig,
    pub matcher: MatcherConfig,
    pub consistency: ConsistencyConfig,
    /// Odd dilation kernel used to densify the second depth map.
    pub completion_kernel: usize,
    /// Known relative pose (e.g. from odometry); skips PnP when set.
    pub pose: Option<RigidPose>,
}

impl Default for EgoHintsConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            matcher: MatcherConfig::default(),
            consistency: ConsistencyConfig::default(),
            completion_kernel: 5,
            pose: None,
        }
    }
}

/// All intermediate products of the ego-hint pipeline.
#[derive(Debug, Clone)]
pub struct EgoHints {
    /// Ego-motion flow at every valid pixel of the first depth map.
    pub raw: SparseHints,
    /// `raw` restricted to forward-backward consistent pixels.
    pub filtered: SparseHints,
    pub consistency: Mask,
    pub pose: RigidPose,
    /// Number of matched correspondences and PnP inliers (0 with a known pose).
    pub matches: usize,
    pub inliers: usize,
}

/// Correspondences between corners of `i0` with depth in `d0` and their ZNCC
/// matches in `i1`.
pub fn correspondences(
    d0: &DepthMap,
    i0: &ImageGray,
    i1: &ImageGray,
    cfg: &MatcherConfig,
) -> Vec<Correspondence> {
    let corners = detect_corners(i0, &d0.validity(), cfg);
    match_corners(i0, i1, &corners, cfg)
        .into_iter()
        .filter_map(|m| {
            let z0 = d0.get(m.p0[0], m.p0[1])?;
            Some(Correspondence { p0: [m.p0[0] as f64, m.p0[1] as f64], p1: m.p1, z0 })
        })
        .collect()
}

/// Full ego-hint pipeline; see [`EgoHints`].
pub fn ego_hints_detailed(
    d0: &DepthMap,
    d1: &DepthMap,
    k: &CameraIntrinsics,
    i0: &ImageGray,
    i1: &ImageGray,
    cfg: &EgoHintsConfig,
) -> Result<EgoHints> {
    for dims in [d1.dims(), i0.dims(), i1.dims()] {
        if dims != d0.dims() {
            return Err(shape_err("ego-hint inputs", d0.dims(), dims));
        }
    }
    let (pose, matches, inliers) = match cfg.pose {
        Some(p) => (p, 0, 0),
        None => {
            let corrs = correspondences(d0, i0, i1, &cfg.matcher);
            let est = estimate_pose(&corrs, k, &cfg.ransac)?;
            let n = est.inlier_count();
            (est.pose, corrs.len(), n)
        }
    };
    let fwd = ego_flow(d0, k, &pose);
    let bwd = ego_flow(&complete_depth(d1, cfg.completion_kernel)?, k, &pose.inverse());
    let consistency = fb_consistency(&fwd, &bwd, &cfg.consistency)?;
    let raw = fwd.to_hints();
    let filtered = fwd.masked(&consistency)?.to_hints();
    Ok(EgoHints { raw, filtered, consistency, pose, matches, inliers })
}

/// Forward-backward filtered ego-motion hints.
pub fn ego_hints(
    d0: &DepthMap,
    d1: &DepthMap,
    k: &CameraIntrinsics,
    i0: &ImageGray,
    i1: &ImageGray,
    cfg: &EgoHintsConfig,
) -> Result<SparseHints> {
    ego_hints_detailed(d0, d1, k, i0, i1, cfg).map(|e| e.filtered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn identity_pose_gives_zero_flow() {
        let k = CameraIntrinsics::new(200.0, 210.0, 31.5, 20.0).unwrap();
        let d = DepthMap::new(4, 3, (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 + i as f64 }).collect()).unwrap();
        let f = ego_flow(&d, &k, &RigidPose::identity());
        for i in 0..12 {
            assert_eq!(f.valid()[i], i % 3 != 0);
            assert_eq!((f.u()[i], f.v()[i]), (0.0, 0.0));
        }
    }

    #[test]
    fn hand_projected_translation() {
        let d = DepthMap::new(1, 1, vec![2.0]).unwrap();
        let f = ego_flow(&d, &unit_k(), &RigidPose::translation_only([1.0, 0.0, 0.0]));
        assert_eq!(f.get(0, 0), Some([0.5, 0.0]));
    }

    #[test]
    fn behind_camera_is_invalid() {
        let d = DepthMap::new(1, 1, vec![2.0]).unwrap();
        let f = ego_flow(&d, &unit_k(), &RigidPose::translation_only([0.0, 0.0, -3.0]));
        assert_eq!(f.get(0, 0), None);
    }

    #[test]
    fn fb_examples() {
        let cfg = ConsistencyConfig::default();
        let fwd = FlowField::from_fn(8, 3, |_, _| Some([2.0, 0.0]));
        let bwd = FlowField::from_fn(8, 3, |_, _| Some([-2.0, 0.0]));
        let m = fb_consistency(&fwd, &bwd, &cfg).unwrap();
        assert!(m.get(1, 1));
        // x = 6, 7 map outside the image.
        assert!(!m.get(6, 1) && !m.get(7, 1));

        let fwd = FlowField::from_fn(8, 3, |_, _| Some([5.0, 0.0]));
        let bwd = FlowField::from_fn(8, 3, |_, _| Some([-1.0, 0.0]));
        assert!(!fb_consistency(&fwd, &bwd, &cfg).unwrap().get(0, 1));

        assert!(matches!(
            fb_consistency(&fwd, &FlowField::zeros(3, 3), &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fb_needs_valid_taps() {
        let fwd = FlowField::from_fn(4, 1, |_, _| Some([0.5, 0.0]));
        let mut bwd = FlowField::from_fn(4, 1, |_, _| Some([-0.5, 0.0]));
        bwd.set(2, 0, None);
        let m = fb_consistency(&fwd, &bwd, &ConsistencyConfig::default()).unwrap();
        assert_eq!(m.data(), &[true, false, false, false]);
    }

    #[test]
    fn completion_examples() {
        let dense = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(complete_depth(&dense, 3).unwrap(), dense);

        let mut single = DepthMap::empty(3, 3);
        single.set(1, 1, Some(5.0));
        let c = complete_depth(&single, 3).unwrap();
        assert!(c.values().iter().all(|&z| z == 5.0));

        let mut two = DepthMap::empty(3, 1);
        two.set(0, 0, Some(2.0));
        two.set(2, 0, Some(6.0));
        assert_eq!(complete_depth(&two, 3).unwrap().get(1, 0), Some(2.0));

        assert!(matches!(complete_depth(&DepthMap::empty(2, 2), 3), Err(Error::EmptyInput(_))));
        assert!(matches!(complete_depth(&dense, 4), Err(Error::Config(_))));
    }

    #[test]
    fn completion_stops_after_max_passes() {
        let mut d = DepthMap::empty(40, 1);
        d.set(0, 0, Some(1.0));
        let c = complete_depth(&d, 3).unwrap();
        assert_eq!(c.valid_count(), 1 + COMPLETION_PASSES);
    }

    proptest! {
        #[test]
        fn fb_mask_monotone_in_threshold(seed in any::<u64>(), t1 in 0.1f64..5.0, extra in 0.0f64..5.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rnd = |_: usize, _: usize| if rng.random_bool(0.9) { Some([rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]) } else { None };
            let fwd = FlowField::from_fn(10, 8, &mut rnd);
            let bwd = FlowField::from_fn(10, 8, &mut rnd);
            let a = fb_consistency(&fwd, &bwd, &ConsistencyConfig::new(t1).unwrap()).unwrap();
            let b = fb_consistency(&fwd, &bwd, &ConsistencyConfig::new(t1 + extra).unwrap()).unwrap();
            prop_assert!(a.is_subset_of(&b));
        }

        #[test]
        fn ego_flow_identity_is_exactly_zero(z in 0.01f64..100.0, x in 0.0f64..500.0, y in 0.0f64..500.0) {
            let k = CameraIntrinsics::new(721.5, 721.5, 609.6, 172.9).unwrap();
            let f = ego_displacement(&k, &RigidPose::identity(), x, y, z).unwrap();
            // Back-projection and projection round-trip within 1e-9.
            prop_assert!(f[0].abs() < 1e-9 && f[1].abs() < 1e-9);
        }
    }
}
