//! Effective configuration: defaults, then a `key=value` file, then flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use guideflow::egoflow::EgoHintsConfig;
use guideflow::estimator::PyramidConfig;
use guideflow::eval::Aggregation;
use guideflow::pipeline::PipelineConfig;
use guideflow::{ConsistencyConfig, ModulationParams};

use crate::Common;

/// Parses `key=value` lines; `#` starts a comment. Keys accept `-` or `_`.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

pub struct Settings {
    pub pipeline: PipelineConfig,
    pub jobs: Option<usize>,
}

fn get<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str, flag: Option<T>) -> Result<Option<T>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(v) => v.parse().map(Some).map_err(|_| format!("config: bad value {v:?} for {key}")),
        None => Ok(None),
    }
}

const KNOWN_KEYS: [&str; 15] = [
    "seed",
    "density",
    "noise",
    "k",
    "c",
    "radius",
    "levels",
    "patch",
    "median",
    "fb_threshold",
    "ransac_iters",
    "ransac_inlier_px",
    "known_pose",
    "aggregation",
    "jobs",
];

impl Settings {
    pub fn resolve(common: &Common) -> Result<Self, String> {
        let file = match &common.config {
            Some(p) => load(p)?,
            None => BTreeMap::new(),
        };
        if let Some(bad) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(format!("config: unknown key {bad:?}"));
        }
        let mut cfg = PipelineConfig::default();
        let est = PyramidConfig {
            levels: get(&file, "levels", common.levels)?.unwrap_or(cfg.estimator.levels),
            radius: get(&file, "radius", common.radius)?.unwrap_or(cfg.estimator.radius),
            patch: get(&file, "patch", None)?.unwrap_or(cfg.estimator.patch),
            median_filter: get(&file, "median", None)?.unwrap_or(cfg.estimator.median_filter),
        };
        est.validate().map_err(|e| e.to_string())?;
        cfg.estimator = est;
        let k = get(&file, "k", common.k)?.unwrap_or(cfg.modulation.k());
        let c = get(&file, "c", common.c)?.unwrap_or(cfg.modulation.c());
        cfg.modulation = ModulationParams::new(k, c).map_err(|e| e.to_string())?;
        cfg.seed = get(&file, "seed", common.seed)?.unwrap_or(cfg.seed);
        cfg.density = get(&file, "density", common.density)?.unwrap_or(cfg.density);
        cfg.noise = get(&file, "noise", common.noise)?.unwrap_or(cfg.noise);
        if !(cfg.density > 0.0 && cfg.density <= 1.0) {
            return Err(format!("density must be in (0, 1], got {}", cfg.density));
        }
        if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
            return Err(format!("noise must be >= 0, got {}", cfg.noise));
        }
        let fb = get(&file, "fb_threshold", common.fb_threshold)?.unwrap_or(ConsistencyConfig::default().threshold());
        let mut ego = EgoHintsConfig { consistency: ConsistencyConfig::new(fb).map_err(|e| e.to_string())?, ..Default::default() };
        ego.ransac.seed = cfg.seed;
        ego.ransac.iters = get(&file, "ransac_iters", None)?.unwrap_or(ego.ransac.iters);
        ego.ransac.inlier_px = get(&file, "ransac_inlier_px", None)?.unwrap_or(ego.ransac.inlier_px);
        cfg.ego = ego;
        cfg.known_pose = common.known_pose || get(&file, "known_pose", None)?.unwrap_or(false);
        let pooled = common.pooled || matches!(file.get("aggregation").map(String::as_str), Some("pooled"));
        if let Some(a) = file.get("aggregation") {
            if a != "pooled" && a != "mean" {
                return Err(format!("config: aggregation must be mean or pooled, got {a:?}"));
            }
        }
        cfg.aggregation = if pooled { Aggregation::PooledPixels } else { Aggregation::MeanOverImages };
        let jobs = get(&file, "jobs", common.jobs)?;
        if jobs == Some(0) {
            return Err("jobs must be >= 1".into());
        }
        Ok(Self { pipeline: cfg, jobs })
    }

    /// Runs `f` on a pool bounded by `--jobs` (the global pool otherwise).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, String> {
        match self.jobs {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| e.to_string())?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }
}

fn load(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_kv(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let m = parse_kv("# header\nseed = 4\nfb-threshold=2.5 # inline\n\n").unwrap();
        assert_eq!(m["seed"], "4");
        assert_eq!(m["fb_threshold"], "2.5");
        assert!(parse_kv("oops").is_err());
    }
}
