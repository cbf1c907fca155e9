//! Scene description files for `generate --spec`.
//!
//! ```text
//! width=128
//! height=128
//! fx=120  fy=120  cx=63.5  cy=63.5      (one key per line)
//! layout=plane:8                       or ground-wall:1.5,10
//! rotation=0,0.01,0                    axis-angle, radians
//! translation=0.05,0,-0.2
//! texture_seed=3
//! depth_density=0.05
//! depth_noise=0.01
//! sampling=scanlines:4                 or uniform
//! seed=0
//! object=40,30,36,30,2.0,14,-6,17      x,y,w,h,depth,mx,my,texture_seed (repeatable)
//! ```

use guideflow::scene::{DepthSampling, Layout, ObjectSpec, SceneSpec};
use guideflow::{CameraIntrinsics, RigidPose};
use nalgebra::Vector3;

fn nums(v: &str, n: usize, key: &str) -> Result<Vec<f64>, String> {
    let out: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("{key}: bad number {s:?}")))
        .collect::<Result<_, _>>()?;
    if out.len() != n {
        return Err(format!("{key}: expected {n} values, got {}", out.len()));
    }
    Ok(out)
}

fn uint(v: f64, key: &str) -> Result<usize, String> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(format!("{key}: expected a non-negative integer, got {v}"))
    }
}

pub fn parse_spec(text: &str) -> Result<SceneSpec, String> {
    let mut width = None;
    let mut height = None;
    let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
    let mut spec_layout = None;
    let mut rotation = Vector3::zeros();
    let mut translation = Vector3::zeros();
    let mut objects = Vec::new();
    let mut texture_seed = 0;
    let mut depth_density = 0.05;
    let mut depth_noise = 0.01;
    let mut sampling = DepthSampling::Scanlines { row_step: 4 };
    let mut seed = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |key: &str| v.parse::<f64>().map_err(|_| format!("{key}: bad number {v:?}"));
        let int = |key: &str| v.parse::<u64>().map_err(|_| format!("{key}: bad integer {v:?}"));
        match k {
            "width" => width = Some(int(k)? as usize),
            "height" => height = Some(int(k)? as usize),
            "fx" => fx = Some(num(k)?),
            "fy" => fy = Some(num(k)?),
            "cx" => cx = Some(num(k)?),
            "cy" => cy = Some(num(k)?),
            "layout" => {
                spec_layout = Some(match v.split_once(':') {
                    Some(("plane", d)) => Layout::Plane { depth: nums(d, 1, k)?[0] },
                    Some(("ground-wall", d)) => {
                        let d = nums(d, 2, k)?;
                        Layout::GroundWall { camera_height: d[0], wall_depth: d[1] }
                    }
                    _ => return Err(format!("layout: expected plane:<depth> or ground-wall:<height>,<depth>, got {v:?}")),
                })
            }
            "rotation" => rotation = Vector3::from_vec(nums(v, 3, k)?),
            "translation" => translation = Vector3::from_vec(nums(v, 3, k)?),
            "texture_seed" => texture_seed = int(k)?,
            "depth_density" => depth_density = num(k)?,
            "depth_noise" => depth_noise = num(k)?,
            "sampling" => {
                sampling = match v.split_once(':') {
                    Some(("scanlines", s)) => DepthSampling::Scanlines { row_step: uint(nums(s, 1, k)?[0], k)? },
                    None if v == "uniform" => DepthSampling::Uniform,
                    _ => return Err(format!("sampling: expected scanlines:<step> or uniform, got {v:?}")),
                }
            }
            "seed" => seed = int(k)?,
            "object" => {
                let o = nums(v, 8, k)?;
                objects.push(ObjectSpec {
                    rect: [uint(o[0], k)?, uint(o[1], k)?, uint(o[2], k)?, uint(o[3], k)?],
                    depth: o[4],
                    motion: [o[5], o[6]],
                    texture_seed: uint(o[7], k)? as u64,
                });
            }
            other => return Err(format!("line {}: unknown key {other:?}", n + 1)),
        }
    }
    let width = width.ok_or("missing width")?;
    let height = height.ok_or("missing height")?;
    let f = fx.unwrap_or(width as f64);
    let k = CameraIntrinsics::new(
        f,
        fy.unwrap_or(f),
        cx.unwrap_or((width as f64 - 1.0) / 2.0),
        cy.unwrap_or((height as f64 - 1.0) / 2.0),
    )
    .map_err(|e| e.to_string())?;
    Ok(SceneSpec {
        width,
        height,
        k,
        pose: RigidPose::from_axis_angle(rotation, translation),
        layout: spec_layout.ok_or("missing layout")?,
        texture_seed,
        objects,
        depth_density,
        depth_noise,
        sampling,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_spec() {
        let s = parse_spec(
            "width=64\nheight=48\nfx=100\nlayout=ground-wall:1.5,10\ntranslation=0.1,0,-0.2\nobject=4,5,10,8,2,3,-1,7\nsampling=uniform\n",
        )
        .unwrap();
        assert_eq!((s.width, s.height), (64, 48));
        assert_eq!(s.k.fy, 100.0);
        assert_eq!(s.k.cx, 31.5);
        assert_eq!(s.objects[0].rect, [4, 5, 10, 8]);
        assert_eq!(s.sampling, DepthSampling::Uniform);
        assert_eq!(s.layout, Layout::GroundWall { camera_height: 1.5, wall_depth: 10.0 });
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(parse_spec("width=64\n").is_err());
        assert!(parse_spec("width=64\nheight=64\nlayout=cube:1\n").is_err());
        assert!(parse_spec("width=64\nheight=64\nlayout=plane:3\nobject=1,2,3\n").is_err());
        assert!(parse_spec("width=64\nheight=64\nlayout=plane:3\ncolour=red\n").is_err());
    }
}
