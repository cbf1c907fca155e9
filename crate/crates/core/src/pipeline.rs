//! End-to-end per-scene pipeline: hint sources, guided and unguided flow,
//! and the benchmark over a scene directory.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{list_scenes, read_scene, SceneInput};
use crate::egoflow::{ego_hints_detailed, fb_consistency, EgoHintsConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate, estimate_backward, PyramidConfig};
use crate::eval::{flow_metrics, Aggregation, EvalReport};
use crate::fusion::{fuse_hints, hint_stats, sample_gt_hints, HintStats};
use crate::types::{FlowField, Mask, ModulationParams, RigidPose, SparseHints};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub estimator: PyramidConfig,
    pub modulation: ModulationParams,
    pub ego: EgoHintsConfig,
    /// Ground-truth sampling density (fraction of valid GT pixels).
    pub density: f64,
    /// Half-width of the uniform noise added to sampled GT hints.
    pub noise: f64,
    pub seed: u64,
    /// Use the scene's recorded pose instead of PnP.
    pub known_pose: bool,
    pub aggregation: Aggregation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            estimator: PyramidConfig::default(),
            modulation: ModulationParams::default(),
            ego: EgoHintsConfig::default(),
            density: 0.03,
            noise: 3.0,
            seed: 0,
            known_pose: false,
            aggregation: Aggregation::MeanOverImages,
        }
    }
}

impl PipelineConfig {
    /// Effective settings as key/value pairs, echoed into reports.
    pub fn provenance(&self) -> Vec<(String, String)> {
        let e = &self.estimator;
        let r = &self.ego.ransac;
        [
            ("seed", self.seed.to_string()),
            ("density", self.density.to_string()),
            ("noise", self.noise.to_string()),
            ("k", self.modulation.k().to_string()),
            ("c", self.modulation.c().to_string()),
            ("levels", e.levels.to_string()),
            ("radius", e.radius.to_string()),
            ("patch", e.patch.to_string()),
            ("median", e.median_filter.to_string()),
            ("fb_threshold", self.ego.consistency.threshold().to_string()),
            ("ransac_iters", r.iters.to_string()),
            ("ransac_inlier_px", r.inlier_px.to_string()),
            ("ransac_seed", r.seed.to_string()),
            ("known_pose", self.known_pose.to_string()),
            (
                "aggregation",
                match self.aggregation {
                    Aggregation::MeanOverImages => "mean".to_string(),
                    Aggregation::PooledPixels => "pooled".to_string(),
                },
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Per-scene seed derived from the run seed and the scene name, so results
/// do not depend on scene order or scheduling.
pub fn scene_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Hints from the depth sensor, the unguided estimator and their fusion.
#[derive(Debug, Clone)]
pub struct SensorHints {
    /// Ego-motion hints before and after the consistency check.
    pub ego_raw: SparseHints,
    pub ego: SparseHints,
    /// Unguided estimator flow and its forward-backward mask.
    pub estimator: FlowField,
    pub estimator_fb: Mask,
    pub fused: SparseHints,
    pub pose: RigidPose,
    pub inliers: usize,
}

impl SensorHints {
    /// Estimator flow restricted to its consistent pixels.
    pub fn estimator_hints(&self) -> SparseHints {
        self.estimator.masked(&self.estimator_fb).expect("same dims").to_hints()
    }
}

pub fn unguided_flow(input: &SceneInput, cfg: &PipelineConfig) -> Result<FlowField> {
    estimate(&input.i0, &input.i1, &cfg.estimator, None, &cfg.modulation)
}

pub fn guided_flow(input: &SceneInput, hints: &SparseHints, cfg: &PipelineConfig) -> Result<FlowField> {
    estimate(&input.i0, &input.i1, &cfg.estimator, Some(hints), &cfg.modulation)
}

/// Builds the sensor hints. `unguided` may pass a precomputed unguided flow.
pub fn sensor_hints(input: &SceneInput, cfg: &PipelineConfig, unguided: Option<&FlowField>) -> Result<SensorHints> {
    let mut ego_cfg = cfg.ego.clone();
    if cfg.known_pose {
        ego_cfg.pose = Some(input.pose.ok_or_else(|| Error::Config(format!("{}: no recorded pose", input.name)))?);
    }
    let ego = ego_hints_detailed(&input.d0, &input.d1, &input.k, &input.i0, &input.i1, &ego_cfg)?;
    let estimator = match unguided {
        Some(f) => f.clone(),
        None => unguided_flow(input, cfg)?,
    };
    let backward = estimate_backward(&input.i0, &input.i1, &cfg.estimator)?;
    let estimator_fb = fb_consistency(&estimator, &backward, &cfg.ego.consistency)?;
    let fused = fuse_hints(&ego.filtered, &estimator, &estimator_fb, &input.seg)?;
    Ok(SensorHints {
        ego_raw: ego.raw,
        ego: ego.filtered,
        estimator,
        estimator_fb,
        fused,
        pose: ego.pose,
        inliers: ego.inliers,
    })
}

pub fn gt_hints(input: &SceneInput, cfg: &PipelineConfig) -> Result<SparseHints> {
    sample_gt_hints(&input.gt, cfg.density, cfg.noise, scene_seed(cfg.seed, &input.name))
}

/// Hint sources in report order.
pub const HINT_SOURCES: [&str; 5] = ["ego_raw", "ego", "estimator", "fused", "gt_sampled"];

/// Quality of every hint source for one scene, in [`HINT_SOURCES`] order.
pub fn hint_source_stats(input: &SceneInput, sensor: &SensorHints, gt_sampled: &SparseHints) -> Vec<Result<HintStats>> {
    let est = sensor.estimator_hints();
    [&sensor.ego_raw, &sensor.ego, &est, &sensor.fused, gt_sampled]
        .into_iter()
        .map(|h| hint_stats(h, &input.gt))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Unguided,
    /// Guided by sampled, perturbed ground truth.
    GtSampled,
    /// Guided by fused sensor hints.
    Sensor,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Unguided, Variant::GtSampled, Variant::Sensor];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unguided => "unguided",
            Variant::GtSampled => "gt_sampled",
            Variant::Sensor => "sensor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Flow of every variant for one scene plus the guides that produced them.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub flows: Vec<(Variant, FlowField)>,
    pub gt_hints: SparseHints,
    pub sensor: SensorHints,
}

pub fn run_scene(input: &SceneInput, cfg: &PipelineConfig) -> Result<SceneRun> {
    let unguided = unguided_flow(input, cfg)?;
    let gt_hints = gt_hints(input, cfg)?;
    let sensor = sensor_hints(input, cfg, Some(&unguided))?;
    let gt_flow = guided_flow(input, &gt_hints, cfg)?;
    let sensor_flow = guided_flow(input, &sensor.fused, cfg)?;
    Ok(SceneRun {
        flows: vec![(Variant::Unguided, unguided), (Variant::GtSampled, gt_flow), (Variant::Sensor, sensor_flow)],
        gt_hints,
        sensor,
    })
}

/// Per-variant reports plus the scenes that could not be processed.
#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub variants: Vec<(Variant, EvalReport)>,
    pub errors: Vec<(String, String)>,
}

impl BenchReport {
    pub fn report(&self, v: Variant) -> Option<&EvalReport> {
        self.variants.iter().find(|(x, _)| *x == v).map(|(_, r)| r)
    }

    pub fn is_empty(&self) -> bool {
        self.variants.iter().all(|(_, r)| r.is_empty()) && self.errors.is_empty()
    }
}

fn evaluate_scene(input: &SceneInput, cfg: &PipelineConfig) -> Result<Vec<(Variant, crate::eval::FlowMetrics, f64)>> {
    let run = run_scene(input, cfg)?;
    run.flows
        .iter()
        .map(|(v, f)| {
            let density = match v {
                Variant::Unguided => 0.0,
                Variant::GtSampled => 100.0 * run.gt_hints.density(),
                Variant::Sensor => 100.0 * run.sensor.fused.density(),
            };
            Ok((*v, flow_metrics(f, &input.gt)?, density))
        })
        .collect()
}

/// Evaluates every variant on every scene under `root`. Scenes are processed
/// in parallel on the current rayon pool; unreadable or failing scenes are
/// recorded in `errors` and the run continues.
pub fn run_benchmark(root: &Path, cfg: &PipelineConfig) -> Result<BenchReport> {
    let names = list_scenes(root)?;
    let results: Vec<(String, Result<Vec<_>>)> = names
        .par_iter()
        .map(|name| {
            let r = read_scene(&root.join(name), name).and_then(|input| evaluate_scene(&input, cfg));
            (name.clone(), r)
        })
        .collect();
    let mut out = BenchReport {
        variants: Variant::ALL.iter().map(|&v| (v, EvalReport::with_aggregation(cfg.aggregation))).collect(),
        errors: Vec::new(),
    };
    for (name, r) in results {
        match r {
            Ok(rows) => {
                for (v, m, density) in rows {
                    let slot = out.variants.iter_mut().find(|(x, _)| *x == v).expect("all variants present");
                    slot.1.push_metrics(name.clone(), &m, density);
                }
            }
            Err(e) => out.errors.push((name, e.to_string())),
        }
    }
    for (_, r) in &mut out.variants {
        r.sort_by_name();
    }
    out.errors.sort();
    Ok(out)
}
