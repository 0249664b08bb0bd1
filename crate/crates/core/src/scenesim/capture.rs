use ndarray::{Array2, Zip};

use crate::error::Result;
use crate::rng::{derive_seed, gaussian_grid};
use crate::scalar::Real;
use crate::scenesim::warp::{check_same, warp_pattern, View};
use crate::scenesim::{CameraRig, CaptureConfig, SceneSample};
use crate::wavefield::IlluminationPattern;

/// Pre-clip sensor signal `γ(α + βP)·I + n`.
pub(crate) fn radiometry<T: Real>(p_view: &Array2<T>, refl: &Array2<T>, noise: &Array2<T>, cfg: &CaptureConfig<T>) -> Array2<T> {
    let mut out = Array2::zeros(p_view.dim());
    Zip::from(&mut out)
        .and(p_view)
        .and(refl)
        .and(noise)
        .for_each(|o, &p, &i, &n| *o = cfg.gamma * (cfg.alpha + cfg.beta * p) * i + n);
    out
}

/// Sensor image from a warped pattern and reflectance, with a given noise
/// realization: `clip(γ(α + βP)·I + n)`.
pub fn capture_with_noise<T: Real>(
    p_view: &Array2<T>,
    refl: &Array2<T>,
    noise: &Array2<T>,
    cfg: &CaptureConfig<T>,
) -> Result<Array2<T>> {
    check_same(refl, p_view.dim(), "reflectance vs pattern")?;
    check_same(noise, p_view.dim(), "noise vs pattern")?;
    Ok(radiometry(p_view, refl, noise, cfg).mapv(|v| v.max(cfg.clip_lo).min(cfg.clip_hi)))
}

/// Sensor image with Gaussian noise drawn from `cfg.rng_seed`.
pub fn capture<T: Real>(p_view: &Array2<T>, refl: &Array2<T>, cfg: &CaptureConfig<T>) -> Result<Array2<T>> {
    let noise = gaussian_grid(p_view.dim(), cfg.noise_sigma, cfg.rng_seed);
    capture_with_noise(p_view, refl, &noise, cfg)
}

/// Seeds used for the left and right noise draws of one capture.
pub fn view_noise_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, 0x4c), derive_seed(seed, 0x52))
}

/// Trinocular input: two simulated captures plus the clean illumination
/// image.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoCapture<T: Real> {
    pub left: Array2<T>,
    pub right: Array2<T>,
    pub illum: Array2<T>,
}

pub fn synthesize_stereo<T: Real>(
    pattern: &IlluminationPattern<T>,
    scene: &SceneSample<T>,
    rig: &CameraRig<T>,
    cfg: &CaptureConfig<T>,
) -> Result<StereoCapture<T>> {
    check_same(&scene.disp_l, pattern.dim(), "scene vs pattern")?;
    let (seed_l, seed_r) = view_noise_seeds(cfg.rng_seed);
    let p_l = warp_pattern(pattern, &scene.disp_l, &scene.occ_l, View::Left, rig)?;
    let p_r = warp_pattern(pattern, &scene.disp_r, &scene.occ_r, View::Right, rig)?;
    let left = capture(&p_l, &scene.refl_l, &CaptureConfig { rng_seed: seed_l, ..*cfg })?;
    let right = capture(&p_r, &scene.refl_r, &CaptureConfig { rng_seed: seed_r, ..*cfg })?;
    Ok(StereoCapture {
        left,
        right,
        illum: pattern.intensity().clone(),
    })
}
