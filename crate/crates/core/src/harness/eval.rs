//! Disparity and depth error statistics.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::PatternMetrics;
use crate::scalar::Real;
use crate::scenesim::{CameraRig, SceneSample};

/// Disparities at or below this many pixels have no usable depth.
pub const MIN_DEPTH_DISPARITY: f64 = 0.5;

/// Bad-pixel thresholds in pixels; an error counts when strictly greater.
pub const BAD_THRESHOLDS: [f64; 3] = [1.0, 2.0, 4.0];

/// Raw sums of one scene, kept so aggregates are exact weighted means.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorSums {
    pub pixels: usize,
    pub valid: usize,
    pub abs_disp: f64,
    pub depth_pixels: usize,
    pub abs_depth: f64,
    pub bad: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneEval {
    pub name: String,
    pub sums: ErrorSums,
    pub mae_px: f64,
    pub depth_mae_m: f64,
    pub bad: [f64; 3],
    pub valid_fraction: f64,
    /// No valid pixels; every rate is reported as 0.
    pub degenerate: bool,
}

impl SceneEval {
    fn from_sums(name: String, s: ErrorSums) -> Self {
        let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
        Self {
            name,
            mae_px: ratio(s.abs_disp, s.valid),
            depth_mae_m: ratio(s.abs_depth, s.depth_pixels),
            bad: s.bad.map(|b| ratio(b as f64, s.valid)),
            valid_fraction: ratio(s.valid as f64, s.pixels),
            degenerate: s.valid == 0,
            sums: s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneEval>,
    /// Valid-pixel-weighted over all scenes.
    pub aggregate: SceneEval,
    pub pattern: Option<PatternMetrics>,
}

/// Sums for one disparity map. Depth uses `z = f·b/(p·d)` on pixels where
/// both estimate and ground truth exceed [`MIN_DEPTH_DISPARITY`].
pub fn error_sums<T: Real>(
    est: &Array2<T>,
    gt: &Array2<T>,
    valid: &Array2<bool>,
    rig: &CameraRig<T>,
) -> Result<ErrorSums> {
    if est.dim() != gt.dim() || valid.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "estimate {:?}, ground truth {:?}, mask {:?}",
            est.dim(),
            gt.dim(),
            valid.dim()
        )));
    }
    let mut s = ErrorSums { pixels: gt.len(), ..Default::default() };
    let fb = rig.focal_f.as_f64() * rig.baseline_wide.as_f64() / rig.pixel_p.as_f64();
    for ((e, g), m) in est.iter().zip(gt.iter()).zip(valid.iter()) {
        if !m {
            continue;
        }
        let (e, g) = (e.as_f64(), g.as_f64());
        let err = (e - g).abs();
        s.valid += 1;
        s.abs_disp += err;
        for (k, t) in BAD_THRESHOLDS.iter().enumerate() {
            s.bad[k] += (err > *t) as usize;
        }
        if e > MIN_DEPTH_DISPARITY && g > MIN_DEPTH_DISPARITY {
            s.depth_pixels += 1;
            s.abs_depth += (fb / e - fb / g).abs();
        }
    }
    Ok(s)
}

/// Single-scene report.
pub fn compute_eval<T: Real>(
    est: &Array2<T>,
    gt: &Array2<T>,
    valid: &Array2<bool>,
    rig: &CameraRig<T>,
) -> Result<EvalReport> {
    compute_eval_many(&[("scene".to_string(), est.clone(), gt.clone(), valid.clone())], rig)
}

/// Per-scene and aggregate report. The aggregate does not depend on the
/// order of `scenes`.
pub fn compute_eval_many<T: Real>(
    scenes: &[(String, Array2<T>, Array2<T>, Array2<bool>)],
    rig: &CameraRig<T>,
) -> Result<EvalReport> {
    let mut per = Vec::with_capacity(scenes.len());
    for (name, est, gt, valid) in scenes {
        per.push(SceneEval::from_sums(name.clone(), error_sums(est, gt, valid, rig)?));
    }
    // sum floating totals in a canonical order so permutations agree bit for bit
    let mut sums: Vec<ErrorSums> = per.iter().map(|p| p.sums).collect();
    sums.sort_by(|a, b| a.abs_disp.total_cmp(&b.abs_disp).then(a.abs_depth.total_cmp(&b.abs_depth)));
    let total = sums.iter().fold(ErrorSums::default(), |acc, s| ErrorSums {
        pixels: acc.pixels + s.pixels,
        valid: acc.valid + s.valid,
        abs_disp: acc.abs_disp + s.abs_disp,
        depth_pixels: acc.depth_pixels + s.depth_pixels,
        abs_depth: acc.abs_depth + s.abs_depth,
        bad: [acc.bad[0] + s.bad[0], acc.bad[1] + s.bad[1], acc.bad[2] + s.bad[2]],
    });
    Ok(EvalReport { scenes: per, aggregate: SceneEval::from_sums("aggregate".into(), total), pattern: None })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in self.scenes.iter().chain(std::iter::once(&self.aggregate)) {
            let _ = writeln!(
                out,
                "{:<12} mae {:.4} px  depth {:.4} m  bad>1 {:.4}  bad>2 {:.4}  bad>4 {:.4}  valid {:.4}{}",
                s.name,
                s.mae_px,
                s.depth_mae_m,
                s.bad[0],
                s.bad[1],
                s.bad[2],
                s.valid_fraction,
                if s.degenerate { "  DEGENERATE" } else { "" }
            );
        }
        if let Some(p) = &self.pattern {
            let _ = writeln!(
                out,
                "pattern      dots {}  peak/mean {:.4}  gini {:.4}  top1% {:.4}",
                p.dot_count, p.peak_to_mean, p.gini, p.top1_energy
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,mae_px,depth_mae_m,bad1,bad2,bad4,valid_fraction,degenerate\n");
        for s in self.scenes.iter().chain(std::iter::once(&self.aggregate)) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.name, s.mae_px, s.depth_mae_m, s.bad[0], s.bad[1], s.bad[2], s.valid_fraction, s.degenerate
            );
        }
        out
    }
}

/// Left-view pixels next to regions the right camera cannot see: occluded
/// pixels plus everything within `radius` columns of one. Pixels without a
/// surface or whose match falls off the right image are excluded.
pub fn occlusion_band<T: Real>(scene: &SceneSample<T>, radius: usize) -> Array2<bool> {
    let valid = scene.valid_mask(T::one());
    let (h, w) = scene.dim();
    let inside = |y: usize, x: usize| {
        let d = scene.disp_l[[y, x]].as_f64();
        d > 0.0 && x as f64 - d >= 0.0
    };
    let occluded = Array2::from_shape_fn((h, w), |(y, x)| !valid[[y, x]] && inside(y, x));
    Array2::from_shape_fn((h, w), |(y, x)| {
        inside(y, x) && (x.saturating_sub(radius)..(x + radius + 1).min(w)).any(|c| occluded[[y, c]])
    })
}

/// Mean absolute error over `mask`; `None` when the mask is empty.
pub fn masked_mae<T: Real>(est: &Array2<T>, gt: &Array2<T>, mask: &Array2<bool>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for ((e, g), m) in est.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            sum += (e.as_f64() - g.as_f64()).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenesim::{generate_toy_scene, random_two_plane};

    fn rig() -> CameraRig<f64> {
        CameraRig::prototype()
    }

    #[test]
    fn perfect_estimate() {
        let gt = Array2::from_shape_fn((5, 7), |(y, x)| 10.0 + (x + y) as f64);
        let r = compute_eval(&gt, &gt, &Array2::from_elem((5, 7), true), &rig()).unwrap();
        assert_eq!(r.aggregate.mae_px, 0.0);
        assert_eq!(r.aggregate.bad, [0.0; 3]);
        assert_eq!(r.aggregate.depth_mae_m, 0.0);
    }

    #[test]
    fn unit_offset_is_not_bad_at_one() {
        let gt = Array2::from_elem((4, 4), 30.0);
        let est = &gt + 1.0;
        let r = compute_eval(&est, &gt, &Array2::from_elem((4, 4), true), &rig()).unwrap();
        assert_eq!(r.aggregate.mae_px, 1.0);
        assert_eq!(r.aggregate.bad[0], 0.0);
        let s = error_sums(&est, &gt, &Array2::from_elem((4, 4), true), &rig()).unwrap();
        let at_half = est.iter().zip(gt.iter()).filter(|(e, g)| (*e - *g).abs() > 0.5).count() as f64 / 16.0;
        assert_eq!(at_half, 1.0);
        assert_eq!(s.valid, 16);
    }

    #[test]
    fn depth_error_one_pixel_at_one_meter() {
        let r = rig();
        let d = r.disparity_at(1.0);
        let gt = Array2::from_elem((2, 2), d);
        let rep = compute_eval(&(&gt + 1.0), &gt, &Array2::from_elem((2, 2), true), &r).unwrap();
        let first_order = 1.0 * 5.3e-6 / (6e-3 * 55e-3);
        assert!((rep.aggregate.depth_mae_m - 0.016).abs() < 1e-3, "{}", rep.aggregate.depth_mae_m);
        assert!((rep.aggregate.depth_mae_m - first_order).abs() < 0.02 * first_order);
    }

    #[test]
    fn small_disparities_have_no_depth() {
        let gt = Array2::from_elem((1, 2), 0.4);
        let s = error_sums(&Array2::from_elem((1, 2), 0.3), &gt, &Array2::from_elem((1, 2), true), &rig()).unwrap();
        assert_eq!(s.depth_pixels, 0);
        assert_eq!(s.valid, 2);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let g = Array2::from_elem((3, 3), 5.0);
        let r = compute_eval(&g, &g, &Array2::from_elem((3, 3), false), &rig()).unwrap();
        assert!(r.aggregate.degenerate);
        assert_eq!(r.aggregate.mae_px, 0.0);
        assert!(r.to_text().contains("DEGENERATE"));
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::<f64>::zeros((3, 3));
        let b = Array2::<f64>::zeros((3, 4));
        assert!(compute_eval(&a, &b, &Array2::from_elem((3, 3), true), &rig()).is_err());
    }

    #[test]
    fn band_borders_occlusions() {
        let r = CameraRig::centered(6e-3, 5.3e-6, 8e-3);
        let s = generate_toy_scene::<f64>(&random_two_plane(32, 32, 1), &r, 32, 32).unwrap();
        let band = occlusion_band(&s, 2);
        let valid = s.valid_mask(1.0);
        assert!(band.iter().any(|&b| b));
        for ((y, x), &b) in band.indexed_iter() {
            if !valid[[y, x]] && s.disp_l[[y, x]] > 0.0 && x as f64 >= s.disp_l[[y, x]] {
                assert!(b);
            }
        }
    }
}
