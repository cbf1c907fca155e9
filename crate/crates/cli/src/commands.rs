//! Subcommand implementations. Each returns the number of per-scene errors.

use std::fs;
use std::path::Path;

use guideflow::dataset::{list_scenes, read_scene, scene_dir_name, write_manifest, write_scene, SceneInput};
use guideflow::eval::{flow_metrics, run_benchmark, EvalReport, ImageRecord};
use guideflow::fusion::HintStats;
use guideflow::io;
use guideflow::pipeline::{
    gt_hints, guided_flow, hint_source_stats, sensor_hints, unguided_flow, PipelineConfig, Variant, HINT_SOURCES,
};
use guideflow::scene::{make_scene, preset_spec, Preset, SceneSpec};
use guideflow::{FlowField, Mask, SegmentationMask, SparseHints};
use rayon::prelude::*;

use crate::settings::Settings;
use crate::spec_file::parse_spec;
use crate::Common;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Res<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

fn provenance_header(cfg: &PipelineConfig) -> String {
    cfg.provenance().iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn write_errors(out: &Path, errors: &[(String, String)]) -> Res<()> {
    let mut text = csv_line(&["scene".into(), "error".into()]);
    for (s, e) in errors {
        text.push_str(&csv_line(&[s.clone(), e.clone()]));
        eprintln!("{s}: {e}");
    }
    write(&out.join("errors.csv"), text)
}

fn scene_names(root: &Path) -> Res<Vec<String>> {
    let names = list_scenes(root).map_err(|e| format!("{}: {e}", root.display()))?;
    if names.is_empty() {
        eprintln!("warning: no data in {}", root.display());
    }
    Ok(names)
}

pub fn generate(preset: Option<&str>, spec: Option<&Path>, count: usize, out: &Path, common: &Common) -> Res<usize> {
    let settings = Settings::resolve(common)?;
    let seed = settings.pipeline.seed;
    let specs: Vec<SceneSpec> = match (preset, spec) {
        (Some(p), None) => {
            let p: Preset = p.parse().map_err(err)?;
            (0..count).map(|i| preset_spec(p, i, seed)).collect()
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let base = parse_spec(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            (0..count as u64)
                .map(|i| SceneSpec {
                    texture_seed: base.texture_seed.wrapping_add(i).wrapping_add(seed),
                    seed: base.seed.wrapping_add(i).wrapping_add(seed),
                    ..base.clone()
                })
                .collect()
        }
        _ => return Err("generate needs exactly one of --preset or --spec".into()),
    };
    if count == 0 {
        eprintln!("warning: --count 0, writing an empty manifest");
    }
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let names: Vec<String> = (0..specs.len()).map(scene_dir_name).collect();
    settings.install(|| {
        specs.par_iter().zip(&names).try_for_each(|(spec, name)| -> Res<()> {
            let scene = make_scene(spec).map_err(|e| format!("{name}: {e}"))?;
            write_scene(&out.join(name), &scene).map_err(|e| format!("{name}: {e}"))
        })
    })??;
    write_manifest(out, &names).map_err(err)?;
    println!("wrote {} scene(s) to {}", names.len(), out.display());
    Ok(0)
}

fn sparse_to_png(h: &SparseHints) -> Res<Vec<u8>> {
    io::write_kitti_png(&h.to_flow()).map_err(err)
}

fn mask_to_png(m: &Mask) -> Res<Vec<u8>> {
    let (w, hgt) = m.dims();
    let ids = SegmentationMask::new(w, hgt, m.data().iter().map(|&b| b as u32).collect()).map_err(err)?;
    io::write_mask(&ids).map_err(err)
}

type SceneStats = Vec<Option<HintStats>>;

fn hints_for_scene(input: &SceneInput, cfg: &PipelineConfig, out: &Path) -> Res<SceneStats> {
    let sensor = sensor_hints(input, cfg, None).map_err(err)?;
    let sampled = gt_hints(input, cfg).map_err(err)?;
    let dir = out.join(&input.name);
    write(&dir.join("ego_raw.png"), sparse_to_png(&sensor.ego_raw)?)?;
    write(&dir.join("ego.png"), sparse_to_png(&sensor.ego)?)?;
    write(&dir.join("estimator.flo"), io::write_flo(&sensor.estimator))?;
    write(&dir.join("estimator_fb.png"), mask_to_png(&sensor.estimator_fb)?)?;
    write(&dir.join("fused.png"), sparse_to_png(&sensor.fused)?)?;
    write(&dir.join("gt_sampled.png"), sparse_to_png(&sampled)?)?;
    write(&dir.join("pose.txt"), io::write_pose(&sensor.pose))?;
    Ok(hint_source_stats(input, &sensor, &sampled).into_iter().map(Result::ok).collect())
}

pub fn hints(scenes: &Path, out: &Path, common: &Common) -> Res<usize> {
    let settings = Settings::resolve(common)?;
    let cfg = &settings.pipeline;
    let names = scene_names(scenes)?;
    let results: Vec<(String, Res<SceneStats>)> = settings.install(|| {
        names
            .par_iter()
            .map(|n| {
                let r = read_scene(&scenes.join(n), n).map_err(err).and_then(|input| hints_for_scene(&input, cfg, out));
                (n.clone(), r)
            })
            .collect()
    })?;
    let mut reports: Vec<EvalReport> = HINT_SOURCES.iter().map(|_| EvalReport::with_aggregation(cfg.aggregation)).collect();
    let mut errors = Vec::new();
    for (name, r) in results {
        match r {
            Ok(stats) => {
                for (report, s) in reports.iter_mut().zip(stats) {
                    // A source with no overlap with the ground truth has no row.
                    if let Some(s) = s {
                        report.push_metrics(name.clone(), &s.metrics, s.density);
                    }
                }
            }
            Err(e) => errors.push((name, e)),
        }
    }
    let prov = cfg.provenance();
    let mut summary = provenance_header(cfg);
    summary.push_str(&csv_line(&["source", "epe", "fl", "density"].map(String::from)));
    for (src, report) in HINT_SOURCES.iter().zip(&reports) {
        write(&out.join(format!("hints_{src}.csv")), io::write_report_csv(report, &prov))?;
        if let Some(agg) = report.aggregate() {
            summary.push_str(&csv_line(&[
                src.to_string(),
                format!("{:.6}", agg.epe),
                format!("{:.6}", agg.fl),
                format!("{:.6}", agg.density),
            ]));
        }
    }
    write(&out.join("hints_summary.csv"), summary)?;
    write_errors(out, &errors)?;
    Ok(errors.len())
}

fn parse_variants(list: &[String], default: &[Variant]) -> Res<Vec<Variant>> {
    if list.is_empty() {
        return Ok(default.to_vec());
    }
    list.iter().map(|s| Variant::parse(s.trim()).map_err(err)).collect()
}

fn hint_file(v: Variant) -> Option<&'static str> {
    match v {
        Variant::Unguided => None,
        Variant::GtSampled => Some("gt_sampled.png"),
        Variant::Sensor => Some("fused.png"),
    }
}

fn load_hints(hints: Option<&Path>, scene: &str, v: Variant) -> Res<Option<SparseHints>> {
    let Some(file) = hint_file(v) else { return Ok(None) };
    let root = hints.ok_or_else(|| format!("variant {} needs --hints", v.name()))?;
    let path = root.join(scene).join(file);
    let bytes = fs::read(&path).map_err(|e| format!("missing hints for {}: {}: {e}", v.name(), path.display()))?;
    Ok(Some(io::read_kitti_png(&bytes).map_err(|e| format!("{}: {e}", path.display()))?.to_hints()))
}

pub fn flow(scenes: &Path, hints: Option<&Path>, variants: &[String], out: &Path, common: &Common) -> Res<usize> {
    let settings = Settings::resolve(common)?;
    let cfg = &settings.pipeline;
    let default: &[Variant] = if hints.is_some() { &Variant::ALL } else { &[Variant::Unguided] };
    let variants = parse_variants(variants, default)?;
    let names = scene_names(scenes)?;
    let errors: Vec<Vec<(String, String)>> = settings.install(|| {
        names
            .par_iter()
            .map(|n| {
                let input = match read_scene(&scenes.join(n), n) {
                    Ok(i) => i,
                    Err(e) => return vec![(n.clone(), e.to_string())],
                };
                let mut errs = Vec::new();
                for &v in &variants {
                    let r = load_hints(hints, n, v).and_then(|h| {
                        let f = match &h {
                            None => unguided_flow(&input, cfg),
                            Some(h) => guided_flow(&input, h, cfg),
                        }
                        .map_err(err)?;
                        write(&out.join(n).join(format!("{}.flo", v.name())), io::write_flo(&f))
                    });
                    if let Err(e) = r {
                        errs.push((n.clone(), format!("{}: {e}", v.name())));
                    }
                }
                errs
            })
            .collect()
    })?;
    let errors: Vec<(String, String)> = errors.into_iter().flatten().collect();
    fs::create_dir_all(out).map_err(err)?;
    write_errors(out, &errors)?;
    Ok(errors.len())
}

struct EvalRow {
    variant: Variant,
    metrics: guideflow::eval::FlowMetrics,
    density: f64,
    error_map: Option<FlowField>,
}

fn error_field(pred: &FlowField, gt: &FlowField) -> FlowField {
    let (w, h) = gt.dims();
    FlowField::from_fn(w, h, |x, y| match (pred.get(x, y), gt.get(x, y)) {
        (Some(p), Some(g)) => Some([(p[0] - g[0]) as f64, (p[1] - g[1]) as f64]),
        _ => None,
    })
}

fn write_eval_outputs(
    out: &Path,
    cfg: &PipelineConfig,
    variants: &[(Variant, EvalReport)],
    errors: &[(String, String)],
) -> Res<()> {
    let prov = cfg.provenance();
    let mut summary = provenance_header(cfg);
    summary.push_str(&csv_line(&["variant", "epe", "fl", "density"].map(String::from)));
    for (v, report) in variants {
        write(&out.join(format!("eval_{}.csv", v.name())), io::write_report_csv(report, &prov))?;
        if let Some(agg) = report.aggregate() {
            summary.push_str(&csv_line(&[
                v.name().to_string(),
                format!("{:.6}", agg.epe),
                format!("{:.6}", agg.fl),
                format!("{:.6}", agg.density),
            ]));
        }
    }
    write(&out.join("eval_summary.csv"), summary)?;

    // One row per image with every variant side by side.
    let mut images: Vec<&str> = variants.iter().flat_map(|(_, r)| r.records().iter().map(|x| x.name.as_str())).collect();
    images.sort_unstable();
    images.dedup();
    let mut paired = provenance_header(cfg);
    let mut header = vec!["image".to_string()];
    for (v, _) in variants {
        header.push(format!("{}_epe", v.name()));
        header.push(format!("{}_fl", v.name()));
    }
    paired.push_str(&csv_line(&header));
    let rows: Vec<(String, Vec<Option<ImageRecord>>)> = images
        .iter()
        .map(|&img| (img.to_string(), variants.iter().map(|(_, r)| r.records().iter().find(|x| x.name == img).cloned()).collect()))
        .chain(std::iter::once(("mean".to_string(), variants.iter().map(|(_, r)| r.aggregate()).collect())))
        .collect();
    for (name, recs) in rows {
        let mut line = vec![name];
        for r in recs {
            match r {
                Some(r) => line.extend([format!("{:.6}", r.epe), format!("{:.6}", r.fl)]),
                None => line.extend([String::new(), String::new()]),
            }
        }
        paired.push_str(&csv_line(&line));
    }
    write(&out.join("eval_paired.csv"), paired)?;
    write_errors(out, errors)
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    scenes: &Path,
    flows: &Path,
    hints: Option<&Path>,
    variants: &[String],
    out: &Path,
    error_maps: bool,
    common: &Common,
) -> Res<usize> {
    let settings = Settings::resolve(common)?;
    let cfg = &settings.pipeline;
    let names = scene_names(scenes)?;
    let variants = if variants.is_empty() {
        // Every variant with at least one flow file on disk.
        Variant::ALL
            .into_iter()
            .filter(|v| names.iter().any(|n| flows.join(n).join(format!("{}.flo", v.name())).exists()))
            .collect()
    } else {
        parse_variants(variants, &[])?
    };
    let results: Vec<(String, Vec<Res<EvalRow>>)> = settings.install(|| {
        names
            .par_iter()
            .map(|n| {
                let rows = match read_scene(&scenes.join(n), n) {
                    Err(e) => vec![Err(e.to_string())],
                    Ok(input) => variants
                        .iter()
                        .map(|&v| {
                            let path = flows.join(n).join(format!("{}.flo", v.name()));
                            let bytes = fs::read(&path).map_err(|e| format!("{}: {}: {e}", v.name(), path.display()))?;
                            let pred = io::read_flo(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
                            let metrics = flow_metrics(&pred, &input.gt).map_err(|e| format!("{}: {e}", v.name()))?;
                            let density = match (hints, hint_file(v)) {
                                (Some(_), Some(_)) => load_hints(hints, n, v)?.map(|h| 100.0 * h.density()).unwrap_or(0.0),
                                _ => 0.0,
                            };
                            let error_map = error_maps.then(|| error_field(&pred, &input.gt));
                            Ok(EvalRow { variant: v, metrics, density, error_map })
                        })
                        .collect(),
                };
                (n.clone(), rows)
            })
            .collect()
    })?;
    let mut reports: Vec<(Variant, EvalReport)> = variants.iter().map(|&v| (v, EvalReport::with_aggregation(cfg.aggregation))).collect();
    let mut errors = Vec::new();
    for (name, rows) in results {
        for row in rows {
            match row {
                Ok(r) => {
                    if let Some(map) = &r.error_map {
                        let path = out.join(&name).join(format!("{}_error.png", r.variant.name()));
                        match io::write_kitti_png(map) {
                            Ok(bytes) => write(&path, bytes)?,
                            Err(e) => errors.push((name.clone(), format!("error map: {e}"))),
                        }
                    }
                    let slot = reports.iter_mut().find(|(v, _)| *v == r.variant).expect("variant listed");
                    slot.1.push_metrics(name.clone(), &r.metrics, r.density);
                }
                Err(e) => errors.push((name.clone(), e)),
            }
        }
    }
    write_eval_outputs(out, cfg, &reports, &errors)?;
    Ok(errors.len())
}

pub fn bench(scenes: &Path, out: &Path, common: &Common) -> Res<usize> {
    let settings = Settings::resolve(common)?;
    let cfg = &settings.pipeline;
    scene_names(scenes)?;
    let report = settings.install(|| run_benchmark(scenes, cfg))?.map_err(err)?;
    write_eval_outputs(out, cfg, &report.variants, &report.errors)?;
    Ok(report.errors.len())
}
