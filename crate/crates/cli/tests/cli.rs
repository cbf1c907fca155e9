use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guideflow"))
        .args(args)
        .env_remove("GUIDED_FLOW_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL_SPEC: &str = "width=96\nheight=96\nfx=90\nlayout=ground-wall:1.5,10\nrotation=0,0.01,0\ntranslation=0.05,0,-0.2\ntexture_seed=5\nobject=30,20,24,20,3,8,-4,3\n";

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["generate", "--preset", "static-suite", "--count", "2", "--seed", "7", "--out", p(&a)]);
    ok(&["generate", "--preset", "static-suite", "--count", "2", "--seed", "7", "--out", p(&b), "--jobs", "1"]);
    let ta = tree(&a);
    assert_eq!(ta.len(), 1 + 2 * 10);
    assert_eq!(ta, tree(&b));
}

#[test]
fn count_zero_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["generate", "--preset", "dynamic-suite", "--count", "0", "--out", p(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(fs::read_to_string(tmp.path().join("manifest.txt")).unwrap(), "");
}

#[test]
fn unknown_preset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--preset", "cubes", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn static_scene_fuses_to_ego_hints() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.txt");
    fs::write(&spec, SMALL_SPEC.replace("object=30,20,24,20,3,8,-4,3\n", "")).unwrap();
    let scenes = tmp.path().join("s");
    let hints = tmp.path().join("h");
    ok(&["generate", "--spec", p(&spec), "--count", "1", "--out", p(&scenes)]);
    ok(&["hints", "--scenes", p(&scenes), "--out", p(&hints)]);
    let dir = hints.join("scene_0000");
    assert_eq!(fs::read(dir.join("fused.png")).unwrap(), fs::read(dir.join("ego.png")).unwrap());
    let summary = fs::read_to_string(hints.join("hints_summary.csv")).unwrap();
    assert!(summary.contains("\nsource,epe,fl,density\n"));
    assert!(summary.contains("# fb_threshold=3\n"));
}

#[test]
fn identical_frames_give_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("still.txt");
    fs::write(&spec, "width=64\nheight=64\nlayout=plane:5\ntexture_seed=2\n").unwrap();
    let (scenes, flows, evals) = (tmp.path().join("s"), tmp.path().join("f"), tmp.path().join("e"));
    ok(&["generate", "--spec", p(&spec), "--count", "1", "--out", p(&scenes)]);
    ok(&["flow", "--scenes", p(&scenes), "--out", p(&flows)]);
    ok(&["eval", "--scenes", p(&scenes), "--flows", p(&flows), "--out", p(&evals)]);
    let csv = fs::read_to_string(evals.join("eval_unguided.csv")).unwrap();
    assert!(csv.contains("\nscene_0000,0.000000,0.000000,0.000000\n"), "{csv}");
}

#[test]
fn corrupt_depth_skips_only_that_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.txt");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let (scenes, hints) = (tmp.path().join("s"), tmp.path().join("h"));
    ok(&["generate", "--spec", p(&spec), "--count", "2", "--out", p(&scenes)]);
    fs::write(scenes.join("scene_0001").join("d0.png"), b"not a png").unwrap();
    let out = run(&["hints", "--scenes", p(&scenes), "--out", p(&hints)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(hints.join("scene_0000").join("fused.png").exists());
    assert!(!hints.join("scene_0001").exists());
    let errors = fs::read_to_string(hints.join("errors.csv")).unwrap();
    assert!(errors.contains("scene_0001") && errors.contains("d0.png"), "{errors}");
}

#[test]
fn guided_variant_without_hints_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.txt");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let (scenes, flows) = (tmp.path().join("s"), tmp.path().join("f"));
    ok(&["generate", "--spec", p(&spec), "--count", "1", "--out", p(&scenes)]);
    let out = run(&["flow", "--scenes", p(&scenes), "--variants", "unguided,sensor", "--out", p(&flows)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(flows.join("scene_0000").join("unguided.flo").exists());
    assert!(fs::read_to_string(flows.join("errors.csv")).unwrap().contains("sensor"));
}

#[test]
fn empty_directory_has_no_data() {
    let tmp = tempfile::tempdir().unwrap();
    let (scenes, out_dir) = (tmp.path().join("s"), tmp.path().join("b"));
    fs::create_dir_all(&scenes).unwrap();
    let out = ok(&["bench", "--scenes", p(&scenes), "--out", p(&out_dir)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data"));
    let csv = fs::read_to_string(out_dir.join("eval_unguided.csv")).unwrap();
    assert!(csv.ends_with("image,epe,fl,density\n"));
}

#[test]
fn pipeline_is_deterministic_across_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = tmp.path().join("s");
    ok(&["generate", "--preset", "dynamic-suite", "--count", "2", "--seed", "3", "--out", p(&scenes)]);
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "3", "3"].iter().enumerate() {
        let h = tmp.path().join(format!("h{i}"));
        let f = tmp.path().join(format!("f{i}"));
        let e = tmp.path().join(format!("e{i}"));
        let b = tmp.path().join(format!("b{i}"));
        let common = ["--seed", "11", "--jobs", jobs];
        ok(&[&["hints", "--scenes", p(&scenes), "--out", p(&h)][..], &common].concat());
        ok(&[&["flow", "--scenes", p(&scenes), "--hints", p(&h), "--out", p(&f)][..], &common].concat());
        ok(&[&["eval", "--scenes", p(&scenes), "--flows", p(&f), "--hints", p(&h), "--out", p(&e)][..], &common].concat());
        ok(&[&["bench", "--scenes", p(&scenes), "--out", p(&b)][..], &common].concat());
        outputs.push((tree(&h), tree(&e), tree(&b)));
    }
    assert!(outputs[0] == outputs[1] && outputs[1] == outputs[2]);
    let eval = String::from_utf8(outputs[0].1.iter().find(|(n, _)| n == "eval_paired.csv").unwrap().1.clone()).unwrap();
    assert!(eval.contains("# seed=11\n"));
    assert!(eval.contains("image,unguided_epe,unguided_fl,gt_sampled_epe,gt_sampled_fl,sensor_epe,sensor_fl\n"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("still.txt");
    fs::write(&spec, "width=48\nheight=48\nlayout=plane:5\n").unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "seed=4\nfb-threshold=2.5\nk=6\n").unwrap();
    let (scenes, evals) = (tmp.path().join("s"), tmp.path().join("b"));
    ok(&["generate", "--spec", p(&spec), "--count", "1", "--out", p(&scenes)]);
    ok(&["bench", "--scenes", p(&scenes), "--out", p(&evals), "--config", p(&cfg), "--k", "8"]);
    let csv = fs::read_to_string(evals.join("eval_summary.csv")).unwrap();
    assert!(csv.contains("# seed=4\n") && csv.contains("# fb_threshold=2.5\n") && csv.contains("# k=8\n"), "{csv}");
    fs::write(&cfg, "sed=4\n").unwrap();
    assert_eq!(run(&["bench", "--scenes", p(&scenes), "--out", p(&evals), "--config", p(&cfg)]).status.code(), Some(2));
}
