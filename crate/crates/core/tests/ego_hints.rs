use guideflow::egoflow::{ego_hints, ego_hints_detailed, EgoHintsConfig};
use guideflow::fusion::hint_stats;
use guideflow::scene::{make_scene, Layout, ObjectSpec, SceneSpec};
use guideflow::{CameraIntrinsics, DepthMap, RigidPose};
use nalgebra::Vector3;

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(120.0, 120.0, 63.5, 63.5).unwrap()
}

fn moving_camera_spec() -> SceneSpec {
    let mut spec = SceneSpec::plane(128, 128, camera(), 8.0);
    spec.layout = Layout::GroundWall { camera_height: 1.5, wall_depth: 10.0 };
    spec.pose = RigidPose::from_axis_angle(Vector3::new(0.0, 0.01, 0.0), Vector3::new(0.05, 0.0, -0.2));
    spec.depth_noise = 0.0;
    spec.texture_seed = 3;
    spec
}

/// Exact sparse depth, limited to a central window so every sample's target
/// stays inside the image.
fn central(d: &DepthMap, border: usize) -> DepthMap {
    let (w, h) = d.dims();
    let mut out = DepthMap::empty(w, h);
    for y in border..h - border {
        for x in border..w - border {
            out.set(x, y, d.get(x, y));
        }
    }
    out
}

#[test]
fn static_scene_hints_are_exact() {
    let s = make_scene(&moving_camera_spec()).unwrap();
    let d0 = central(&s.d0, 24);
    let cfg = EgoHintsConfig { pose: Some(s.pose), ..Default::default() };
    let hints = ego_hints(&d0, &s.d1, &s.k, &s.i0, &s.i1, &cfg).unwrap();
    assert_eq!(hints.count(), d0.valid_count());
    assert!(hint_stats(&hints, &s.gt).unwrap().epe < 1e-3);
}

#[test]
fn static_scene_hints_with_estimated_pose() {
    let s = make_scene(&moving_camera_spec()).unwrap();
    let e = ego_hints_detailed(&s.d0, &s.d1, &s.k, &s.i0, &s.i1, &EgoHintsConfig::default()).unwrap();
    assert!(e.pose.rotation_distance(&s.pose).to_degrees() < 0.1);
    assert!(hint_stats(&e.filtered, &s.gt).unwrap().epe < 0.1);
}

#[test]
fn identity_motion_gives_zero_hints() {
    let mut spec = moving_camera_spec();
    spec.pose = RigidPose::identity();
    let s = make_scene(&spec).unwrap();
    let cfg = EgoHintsConfig { pose: Some(RigidPose::identity()), ..Default::default() };
    let hints = ego_hints(&s.d0, &s.d1, &s.k, &s.i0, &s.i1, &cfg).unwrap();
    assert_eq!(hints.count(), s.d0.valid_count());
    assert!(hints.hx().iter().chain(hints.hy()).all(|&f| f == 0.0));
}

#[test]
fn moving_object_hints_are_filtered() {
    let mut spec = moving_camera_spec();
    spec.depth_noise = 0.01;
    spec.objects.push(ObjectSpec { rect: [40, 30, 36, 30], depth: 2.0, motion: [14.0, -6.0], texture_seed: 17 });
    let s = make_scene(&spec).unwrap();
    let cfg = EgoHintsConfig { pose: Some(s.pose), ..Default::default() };
    let e = ego_hints_detailed(&s.d0, &s.d1, &s.k, &s.i0, &s.i1, &cfg).unwrap();
    let on_object = |valid: &[bool]| (0..valid.len()).filter(|&p| valid[p] && s.seg.ids()[p] != 0).count();
    let before = on_object(e.raw.valid());
    let after = on_object(e.filtered.valid());
    assert!(before > 0);
    assert!(after < before, "{after} vs {before}");
}
