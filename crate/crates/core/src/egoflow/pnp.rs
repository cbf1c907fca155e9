//! Perspective-n-Point pose estimation with RANSAC.
//!
//! Minimal samples of six correspondences are solved linearly (DLT on
//! normalized 3D points) and refined by damped Gauss-Newton on pixel
//! reprojection residuals. The consensus model is refit on all inliers.

// Negated comparisons below also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, RigidPose};

/// Size of a minimal PnP sample.
pub const MIN_CORRESPONDENCES: usize = 6;

/// A pixel in frame 0 with known depth, matched to a pixel in frame 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub z0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iters: usize,
    /// Reprojection error (pixels) below which a correspondence is an inlier.
    pub inlier_px: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iters: 1000, inlier_px: 2.0, seed: 0 }
    }
}

/// Estimated pose plus the per-correspondence inlier flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: RigidPose,
    pub inliers: Vec<bool>,
}

impl PoseEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

struct Problem<'a> {
    k: &'a CameraIntrinsics,
    points: Vec<Vector3<f64>>,
    pixels: Vec<[f64; 2]>,
}

impl Problem<'_> {
    fn reprojection_error(&self, pose: &RigidPose, i: usize) -> f64 {
        match self.k.project(&pose.transform(&self.points[i])) {
            Some([u, v]) => (u - self.pixels[i][0]).hypot(v - self.pixels[i][1]),
            None => f64::INFINITY,
        }
    }

    fn cost(&self, pose: &RigidPose, idx: &[usize]) -> f64 {
        idx.iter()
            .map(|&i| {
                let e = self.reprojection_error(pose, i);
                if e.is_finite() {
                    e * e
                } else {
                    1e12
                }
            })
            .sum()
    }

    /// Linear pose from at least six correspondences.
    fn dlt(&self, idx: &[usize]) -> Option<RigidPose> {
        let n = idx.len();
        let centroid = idx.iter().map(|&i| self.points[i]).sum::<Vector3<f64>>() / n as f64;
        let mean_dist = idx.iter().map(|&i| (self.points[i] - centroid).norm()).sum::<f64>() / n as f64;
        if !(mean_dist > 1e-12) {
            return None;
        }
        let s = 3f64.sqrt() / mean_dist;
        let rows = (2 * n).max(12);
        let mut a = DMatrix::<f64>::zeros(rows, 12);
        for (j, &i) in idx.iter().enumerate() {
            let x = (self.points[i] - centroid) * s;
            let u = (self.pixels[i][0] - self.k.cx) / self.k.fx;
            let v = (self.pixels[i][1] - self.k.cy) / self.k.fy;
            let xh = [x.x, x.y, x.z, 1.0];
            for c in 0..4 {
                a[(2 * j, c)] = xh[c];
                a[(2 * j, 8 + c)] = -u * xh[c];
                a[(2 * j + 1, 4 + c)] = xh[c];
                a[(2 * j + 1, 8 + c)] = -v * xh[c];
            }
        }
        let svd = a.svd(false, true);
        let v_t = svd.v_t?;
        let (min_idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        let p = v_t.row(min_idx);
        let m_norm = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
        let col_norm = Vector3::new(p[3], p[7], p[11]);
        // Undo the point normalization: P = P' [sI, -s c; 0, 1].
        let mut m = m_norm * s;
        let mut col = col_norm - m * centroid;
        if m.determinant() < 0.0 {
            m = -m;
            col = -col;
        }
        let svd_m = m.svd(true, true);
        let scale = svd_m.singular_values.mean();
        if !(scale > 1e-12) {
            return None;
        }
        let pose = RigidPose::from_approx_rotation(m, col / scale)?;
        pose.translation().iter().all(|t| t.is_finite()).then_some(pose)
    }

    /// Levenberg-Marquardt on the reprojection residuals of `idx`.
    fn refine(&self, init: &RigidPose, idx: &[usize], max_iters: usize) -> (RigidPose, f64) {
        let mut pose = *init;
        let mut cost = self.cost(&pose, idx);
        let mut lambda = 1e-3;
        for _ in 0..max_iters {
            let mut h = Matrix6::<f64>::zeros();
            let mut g = Vector6::<f64>::zeros();
            for &i in idx {
                let rx = pose.rotation() * self.points[i];
                let pc = rx + pose.translation();
                if pc.z <= 1e-9 {
                    continue;
                }
                let (zi, zi2) = (1.0 / pc.z, 1.0 / (pc.z * pc.z));
                let ru = self.k.fx * pc.x * zi + self.k.cx - self.pixels[i][0];
                let rv = self.k.fy * pc.y * zi + self.k.cy - self.pixels[i][1];
                let dproj = nalgebra::Matrix2x3::new(
                    self.k.fx * zi, 0.0, -self.k.fx * pc.x * zi2,
                    0.0, self.k.fy * zi, -self.k.fy * pc.y * zi2,
                );
                // d(pc)/d(omega) = -[R X]_x for a left perturbation exp(omega) R.
                let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
                let jr = dproj * (-skew);
                let jt = dproj;
                let mut j = nalgebra::Matrix2x6::<f64>::zeros();
                j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jr);
                j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jt);
                let r = nalgebra::Vector2::new(ru, rv);
                h += j.transpose() * j;
                g += j.transpose() * r;
            }
            let mut improved = false;
            for _ in 0..8 {
                let mut damped = h;
                for d in 0..6 {
                    damped[(d, d)] += lambda * (h[(d, d)] + 1e-9);
                }
                let Some(step) = damped.lu().solve(&(-g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let omega = Vector3::new(step[0], step[1], step[2]);
                let dt = Vector3::new(step[3], step[4], step[5]);
                let rot = Rotation3::new(omega).into_inner() * pose.rotation();
                let Some(candidate) = RigidPose::from_approx_rotation(rot, pose.translation() + dt) else {
                    lambda *= 10.0;
                    continue;
                };
                let c = self.cost(&candidate, idx);
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    pose = candidate;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-12 {
                        return (pose, cost);
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (pose, cost)
    }

    /// Best of the DLT-initialized and identity-initialized refinements.
    /// The identity start covers coplanar samples, where the DLT is
    /// rank-deficient.
    fn fit(&self, idx: &[usize], iters: usize) -> RigidPose {
        let mut best = self.refine(&RigidPose::identity(), idx, iters);
        if let Some(init) = self.dlt(idx) {
            let cand = self.refine(&init, idx, iters);
            if cand.1 < best.1 {
                best = cand;
            }
        }
        best.0
    }

    fn inliers(&self, pose: &RigidPose, threshold: f64) -> Vec<bool> {
        (0..self.points.len()).map(|i| self.reprojection_error(pose, i) < threshold).collect()
    }
}

/// RANSAC PnP over `corrs`. Deterministic for a given seed.
pub fn estimate_pose(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    ransac: &RansacConfig,
) -> Result<PoseEstimate> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientData { needed: MIN_CORRESPONDENCES, got: corrs.len() });
    }
    if !(ransac.inlier_px > 0.0) || ransac.iters == 0 {
        return Err(Error::Config("ransac needs iters >= 1 and inlier_px > 0".into()));
    }
    let usable: Vec<&Correspondence> = corrs
        .iter()
        .filter(|c| c.z0 > 0.0 && c.z0.is_finite() && c.p0.iter().chain(&c.p1).all(|v| v.is_finite()))
        .collect();
    if usable.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientData { needed: MIN_CORRESPONDENCES, got: usable.len() });
    }
    let problem = Problem {
        k,
        points: usable.iter().map(|c| k.back_project(c.p0[0], c.p0[1], c.z0)).collect(),
        pixels: usable.iter().map(|c| c.p1).collect(),
    };
    let n = usable.len();
    let mut rng = ChaCha8Rng::seed_from_u64(ransac.seed);
    let mut best: Option<(usize, RigidPose)> = None;
    for _ in 0..ransac.iters {
        let idx = sample(&mut rng, n, MIN_CORRESPONDENCES).into_vec();
        let pose = problem.fit(&idx, 10);
        let count = problem.inliers(&pose, ransac.inlier_px).iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, pose));
        }
    }
    let (count, mut pose) = best.expect("at least one iteration");
    if count < MIN_CORRESPONDENCES {
        return Err(Error::NoConsensus { inliers: count });
    }
    let mut mask = problem.inliers(&pose, ransac.inlier_px);
    for _ in 0..3 {
        let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        if idx.len() < MIN_CORRESPONDENCES {
            break;
        }
        pose = problem.refine(&pose, &idx, 50).0;
        let next = problem.inliers(&pose, ransac.inlier_px);
        if next == mask {
            break;
        }
        mask = next;
    }
    if mask.iter().filter(|&&b| b).count() < MIN_CORRESPONDENCES {
        return Err(Error::NoConsensus { inliers: count });
    }
    // Map back to the caller's indexing; unusable correspondences are outliers.
    let mut inliers = Vec::with_capacity(corrs.len());
    let mut it = mask.into_iter();
    for c in corrs {
        let ok = c.z0 > 0.0 && c.z0.is_finite() && c.p0.iter().chain(&c.p1).all(|v| v.is_finite());
        inliers.push(ok && it.next().unwrap_or(false));
    }
    Ok(PoseEstimate { pose, inliers })
}
