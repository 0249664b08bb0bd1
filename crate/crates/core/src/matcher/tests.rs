use ndarray::{s, Array2, Array3};

use super::*;
use crate::rng::uniform_grid;
use crate::scenesim::{generate_toy_scene, synthesize_stereo, CaptureConfig, Rect, SceneDescriptor};
use crate::wavefield::IlluminationPattern;

fn raw(mode: FeatureMode, dmax: usize) -> MatcherParams<f64> {
    MatcherParams { standardize: false, ..MatcherParams::new(mode, dmax) }
}

fn fmap(channels: Array3<f64>, source: FeatureSource) -> FeatureMap<f64> {
    FeatureMap { channels, source }
}

#[test]
fn identity_features_equal_input() {
    let img: Array2<f64> = uniform_grid((6, 9), 0.0, 1.0, 1);
    let f = extract_features(&img, &raw(FeatureMode::Identity, 4), FeatureSource::Left).unwrap();
    assert_eq!(f.channels.index_axis(ndarray::Axis(0), 0), img);
}

#[test]
fn patch_features_vanish_on_constant_image() {
    let img = Array2::from_elem((7, 7), 0.4);
    let f = extract_features(&img, &raw(FeatureMode::Patch, 4), FeatureSource::Left).unwrap();
    assert_eq!(f.channels.shape(), &[9, 7, 7]);
    assert!(f.channels.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn delta_kernels_reproduce_identity() {
    let img: Array2<f64> = uniform_grid((6, 9), 0.0, 1.0, 2);
    let mut p = raw(FeatureMode::LearnedLinear, 4);
    p.camera.layers = vec![ConvLayer::near_delta(1, 1, 3, 0.0, 0)];
    let f = extract_features(&img, &p, FeatureSource::Right).unwrap();
    assert_eq!(f.channels.index_axis(ndarray::Axis(0), 0), img);
}

#[test]
fn shifted_features_argmin_at_shift() {
    let other: Array3<f64> = Array3::from_shape_fn((2, 5, 30), |(c, y, x)| {
        let g: Array2<f64> = uniform_grid((5, 30), 0.0, 1.0, 7 + c as u64);
        g[[y, x]]
    });
    let d0 = 4;
    let reference = Array3::from_shape_fn((2, 5, 30), |(c, y, x)| other[[c, y, x.saturating_sub(d0)]]);
    let vol = build_cost_volume(&fmap(reference, FeatureSource::Left), &fmap(other, FeatureSource::Right), 10, 1).unwrap();
    let best = argmin_axis0(&vol.cost);
    for y in 0..5 {
        for x in (d0 + 10)..30 {
            assert_eq!(best[[y, x]], d0 as f64);
        }
    }
}

#[test]
fn identical_features_zero_cost_at_zero() {
    let f: Array3<f64> = Array3::from_shape_fn((1, 4, 12), |(_, y, x)| ((x * 7 + y * 3) % 5) as f64);
    let vol = build_cost_volume(&fmap(f.clone(), FeatureSource::Left), &fmap(f, FeatureSource::Right), 5, 3).unwrap();
    assert!(vol.cost.slice(s![0, .., ..]).iter().all(|&c| c == 0.0));
}

#[test]
fn constant_features_are_ambiguous() {
    let f = Array3::from_elem((1, 4, 12), 0.5);
    let g = Array3::from_elem((1, 4, 12), 0.2);
    let vol = build_cost_volume(&fmap(f, FeatureSource::Left), &fmap(g, FeatureSource::Right), 6, 3).unwrap();
    let first = vol.cost.slice(s![0, .., ..]).to_owned();
    for d in 1..6 {
        assert_eq!(vol.cost.slice(s![d, .., ..]), first);
    }
    let disp = regress_disparity(&vol, 1.0).unwrap();
    assert!(disp.iter().all(|&v| (v - 2.5).abs() < 1e-12));
}

#[test]
fn cost_volume_range_error() {
    let f = Array3::from_elem((1, 4, 12), 0.5);
    let r = build_cost_volume(&fmap(f.clone(), FeatureSource::Left), &fmap(f, FeatureSource::Right), 12, 1);
    assert!(matches!(r, Err(Error::Range(_))));
}

#[test]
fn fusion_cases() {
    let wide = CostVolume { cost: uniform_grid::<f64>((9, 12), 0.0, 5.0, 3).into_shape_with_order((9, 3, 4)).unwrap(), kind: BaselineKind::Wide };
    let zero = CostVolume { cost: Array3::zeros((5, 3, 4)), kind: BaselineKind::Narrow };
    assert_eq!(fuse_volumes(&wide, &zero, 2.0).unwrap().cost, wide.cost);
    assert!(matches!(fuse_volumes(&wide, &zero, 0.0), Err(Error::InvalidConfig(_))));

    // narrow slice k holds k, so wide candidate 4 reads narrow index 2
    let ramp = CostVolume { cost: Array3::from_shape_fn((5, 3, 4), |(k, _, _)| k as f64), kind: BaselineKind::Narrow };
    let zw = CostVolume { cost: Array3::zeros((9, 3, 4)), kind: BaselineKind::Wide };
    let f = fuse_volumes(&zw, &ramp, 2.0).unwrap();
    assert_eq!(f.cost[[4, 1, 1]], 2.0);
    assert_eq!(f.kind, BaselineKind::Fused(2.0));

    // consistent minima: wide at 6, narrow at 3
    let w = CostVolume { cost: Array3::from_shape_fn((9, 2, 2), |(d, _, _)| (d as f64 - 6.0).abs()), kind: BaselineKind::Wide };
    let n = CostVolume { cost: Array3::from_shape_fn((5, 2, 2), |(d, _, _)| (d as f64 - 3.0).abs()), kind: BaselineKind::Narrow };
    let fused = fuse_volumes(&w, &n, 2.0).unwrap();
    assert_eq!(argmin_axis0(&fused.cost), argmin_axis0(&w.cost));
}

#[test]
fn regression_limits() {
    let d0 = 3;
    let one_hot = CostVolume {
        cost: Array3::from_shape_fn((8, 2, 2), |(d, _, _)| if d == d0 { 0.0 } else { 20.0 }),
        kind: BaselineKind::Wide,
    };
    let out = regress_disparity(&one_hot, 1.0).unwrap();
    assert!(out.iter().all(|&v| (v - d0 as f64).abs() < 1e-3));

    let distinct = CostVolume { cost: Array3::from_shape_fn((6, 1, 1), |(d, _, _)| ((d as f64) - 4.2).powi(2)), kind: BaselineKind::Wide };
    let out = regress_disparity(&distinct, 1e-3).unwrap();
    assert!((out[[0, 0]] - 4.0).abs() < 1e-9);
    assert!(matches!(regress_disparity(&distinct, 0.0), Err(Error::InvalidConfig(_))));
}

fn plane_setup(n: usize, z: f64, baseline: f64, seed: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>, CameraRig<f64>, Array2<f64>) {
    let rig = CameraRig::centered(6e-3, 5.3e-6, baseline);
    let pattern = IlluminationPattern::on_camera_grid(uniform_grid((n, n), 0.0, 1.0, seed)).unwrap();
    let scene = generate_toy_scene(&SceneDescriptor::full_frame_plane(z, 1.0, n, n), &rig, n, n).unwrap();
    let cap = synthesize_stereo(&pattern, &scene, &rig, &CaptureConfig::ideal()).unwrap();
    (cap.left, cap.right, cap.illum, rig, scene.disp_l)
}

#[test]
fn fronto_plane_recovered() {
    let (l, r, i, rig, gt) = plane_setup(48, 1.025, 0.02, 4);
    let d0 = gt[[24, 24]];
    assert!((d0 - rig.disparity_at(1.025)).abs() < 1e-9, "{d0}");
    for params in [MatcherParams::new(FeatureMode::Identity, 32), MatcherParams::new(FeatureMode::Patch, 32)] {
        let est = reconstruct(&l, &r, Some(&i), &params, &rig).unwrap();
        let region = s![4..44, 30..44];
        let mae = (&est.slice(region) - &gt.slice(region)).mapv(f64::abs).mean().unwrap();
        assert!(mae < 0.5, "{:?}: MAE {mae}", params.mode);
    }
}

#[test]
fn right_view_reconstruction_is_consistent() {
    let (l, r, i, rig, _) = plane_setup(48, 1.0, 0.02, 5);
    let params = MatcherParams::new(FeatureMode::Identity, 32);
    let dl = reconstruct(&l, &r, Some(&i), &params, &rig).unwrap();
    let dr = reconstruct_right(&l, &r, Some(&i), &params, &rig).unwrap();
    let mask = consistency_mask(&dl, &dr);
    let frac = mask.slice(s![4..44, 30..44]).iter().filter(|&&m| m).count() as f64 / (40.0 * 14.0);
    assert!(frac > 0.95, "{frac}");
}

#[test]
fn blank_illumination_matches_binocular() {
    let (l, r, i, rig, _) = plane_setup(40, 1.2, 0.02, 6);
    let params = MatcherParams::new(FeatureMode::Patch, 24);
    let bino = reconstruct(&l, &r, None, &params.clone().binocular(), &rig).unwrap();
    let dark = Array2::zeros(i.dim());
    let tri = reconstruct(&l, &r, Some(&dark), &params, &rig).unwrap();
    for (a, b) in bino.iter().zip(tri.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(reconstruct(&l, &r, None, &params, &rig).is_err());
}

#[test]
fn unknown_mode_rejected() {
    assert!("cnn".parse::<FeatureMode>().is_err());
    assert_eq!("learned-linear".parse::<FeatureMode>().unwrap(), FeatureMode::LearnedLinear);
}

#[test]
fn plane_with_occluder() {
    // a box in front of a background plane; estimates stay inside the candidate range
    let n = 64;
    let rig = CameraRig::centered(6e-3, 5.3e-6, 0.02);
    let desc = SceneDescriptor::full_frame_plane(1.5, 0.8, n, n).push(Rect::fronto(24.0, 8.0, 40.0, 56.0, 0.8, 0.9));
    let scene = generate_toy_scene::<f64>(&desc, &rig, n, n).unwrap();
    let pattern = IlluminationPattern::on_camera_grid(uniform_grid((n, n), 0.0, 1.0, 9)).unwrap();
    let cap = synthesize_stereo(&pattern, &scene, &rig, &CaptureConfig::ideal()).unwrap();
    let params = MatcherParams::new(FeatureMode::Identity, 40);
    let tri = reconstruct(&cap.left, &cap.right, Some(&cap.illum), &params, &rig).unwrap();
    assert!(tri.iter().all(|&d| (0.0..=39.0).contains(&d)));
}
