//! On-disk scene layout shared by the generator, the hint/flow pipeline and
//! the benchmark.
//!
//! ```text
//! root/manifest.txt      one scene directory name per line
//! root/<scene>/i0.png    i1.png       16-bit gray frames
//!              gt.flo    gt_kitti.png ground-truth flow
//!              d0.png    d1.png       sparse depth (value / 256 m)
//!              seg.png   occ.png      object ids, occlusion mask
//!              K.txt     pose.txt     intrinsics, relative pose
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::scene::Scene;
use crate::types::{CameraIntrinsics, DepthMap, FlowField, ImageGray, RigidPose, SegmentationMask};

pub const MANIFEST: &str = "manifest.txt";

/// Everything the pipeline reads for one frame pair.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub name: String,
    pub i0: ImageGray,
    pub i1: ImageGray,
    pub gt: FlowField,
    pub d0: DepthMap,
    pub d1: DepthMap,
    pub seg: SegmentationMask,
    pub k: CameraIntrinsics,
    /// Relative pose when known (used only if the pipeline asks for it).
    pub pose: Option<RigidPose>,
}

impl Scene {
    pub fn input(&self, name: impl Into<String>) -> SceneInput {
        SceneInput {
            name: name.into(),
            i0: self.i0.clone(),
            i1: self.i1.clone(),
            gt: self.gt.clone(),
            d0: self.d0.clone(),
            d1: self.d1.clone(),
            seg: self.seg.clone(),
            k: self.k,
            pose: Some(self.pose),
        }
    }
}

fn occlusion_ids(scene: &Scene) -> SegmentationMask {
    let (w, h) = scene.occlusion.dims();
    SegmentationMask::new(w, h, scene.occlusion.data().iter().map(|&o| o as u32).collect()).expect("same dims")
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("i0.png"), io::write_image(&scene.i0))?;
    fs::write(dir.join("i1.png"), io::write_image(&scene.i1))?;
    fs::write(dir.join("gt.flo"), io::write_flo(&scene.gt))?;
    fs::write(dir.join("gt_kitti.png"), io::write_kitti_png(&scene.gt)?)?;
    fs::write(dir.join("d0.png"), io::write_depth(&scene.d0)?)?;
    fs::write(dir.join("d1.png"), io::write_depth(&scene.d1)?)?;
    fs::write(dir.join("seg.png"), io::write_mask(&scene.seg)?)?;
    fs::write(dir.join("occ.png"), io::write_mask(&occlusion_ids(scene))?)?;
    fs::write(dir.join("K.txt"), io::write_intrinsics(&scene.k))?;
    fs::write(dir.join("pose.txt"), io::write_pose(&scene.pose))?;
    Ok(())
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(file)).map_err(|e| Error::Format(format!("{}: {e}", dir.join(file).display())))
}

fn in_file<T>(file: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{file}: {m}")),
        Error::Shape(m) => Error::Shape(format!("{file}: {m}")),
        other => other,
    })
}

/// Reads one scene directory. Missing `seg.png` means an all-background
/// mask; missing `pose.txt` means an unknown pose.
pub fn read_scene(dir: &Path, name: &str) -> Result<SceneInput> {
    let i0 = in_file("i0.png", io::read_image(&read(dir, "i0.png")?))?;
    let i1 = in_file("i1.png", io::read_image(&read(dir, "i1.png")?))?;
    let gt = in_file("gt.flo", io::read_flo(&read(dir, "gt.flo")?))?;
    let d0 = in_file("d0.png", io::read_depth(&read(dir, "d0.png")?))?;
    let d1 = in_file("d1.png", io::read_depth(&read(dir, "d1.png")?))?;
    let k_text = String::from_utf8_lossy(&read(dir, "K.txt")?).into_owned();
    let k = in_file("K.txt", io::read_intrinsics(&k_text))?;
    let seg = if dir.join("seg.png").exists() {
        in_file("seg.png", io::read_mask(&read(dir, "seg.png")?))?
    } else {
        SegmentationMask::background(i0.width(), i0.height())
    };
    let pose = if dir.join("pose.txt").exists() {
        let text = String::from_utf8_lossy(&read(dir, "pose.txt")?).into_owned();
        Some(in_file("pose.txt", io::read_pose(&text))?)
    } else {
        None
    };
    let dims = i0.dims();
    for (what, d) in [("i1", i1.dims()), ("gt", gt.dims()), ("d0", d0.dims()), ("d1", d1.dims()), ("seg", seg.dims())] {
        if d != dims {
            return Err(Error::Shape(format!("{what} is {}x{}, i0 is {}x{}", d.0, d.1, dims.0, dims.1)));
        }
    }
    Ok(SceneInput { name: name.to_string(), i0, i1, gt, d0, d1, seg, k, pose })
}

pub fn write_manifest(root: &Path, names: &[String]) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut text = String::new();
    for n in names {
        text.push_str(n);
        text.push('\n');
    }
    fs::write(root.join(MANIFEST), text)?;
    Ok(())
}

/// Scene names from the manifest, or every subdirectory (sorted) when there
/// is no manifest.
pub fn list_scenes(root: &Path) -> Result<Vec<String>> {
    let manifest = root.join(MANIFEST);
    if manifest.exists() {
        let text = fs::read_to_string(manifest)?;
        return Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}
