//! The imaging chain as recorded tape operations: DOE heights → camera-grid
//! pattern → stereo captures → disparity → loss.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffengine::{AdjointTape, DiffValue};
use crate::error::{Error, Result};
use crate::matcher::{reconstruct_on, EncoderValues, MatcherParams};
use crate::rng::{gaussian_grid, uniform_grid};
use crate::scalar::Real;
use crate::scenesim::{mask_to_real, view_noise_seeds, CameraRig, CaptureConfig, SceneSample, View};
use crate::wavefield::{
    add_zeroth_order, apply_doe, camera_scale_factor, field_intensity, propagate_far_field, CenteredDft, ComplexField,
    DOEProfile, IlluminationPattern, Resampler,
};

/// Wave-optics parameters of the illumination module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    /// DOE samples per side.
    pub n: usize,
    /// DOE sample pitch, meters.
    pub pitch_u: f64,
    pub wavelength: f64,
    /// DOE refractive index at `wavelength`. No default.
    pub eta: f64,
    /// Fabrication height levels.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Share of the laser power left in the undiffracted spot.
    #[serde(default)]
    pub zeroth_order: f64,
    /// Mean pattern value on the camera grid (laser power knob).
    #[serde(default = "default_mean_intensity")]
    pub mean_intensity: f64,
    #[serde(default)]
    pub circular_aperture: bool,
}

fn default_levels() -> usize {
    16
}

fn default_mean_intensity() -> f64 {
    0.5
}

impl OpticsConfig {
    /// 850 nm laser with a 1 mm beam sampled on `n×n`.
    pub fn new(n: usize, eta: f64) -> Self {
        Self {
            n,
            pitch_u: 1e-3 / n as f64,
            wavelength: 850e-9,
            eta,
            levels: default_levels(),
            zeroth_order: 0.0,
            mean_intensity: default_mean_intensity(),
            circular_aperture: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("DOE grid must be at least 2x2, got n={}", self.n)));
        }
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return Err(Error::InvalidMaterial(self.eta));
        }
        for (name, v) in [("pitch_u", self.pitch_u), ("wavelength", self.wavelength), ("mean_intensity", self.mean_intensity)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.zeroth_order) {
            return Err(Error::InvalidConfig(format!("zeroth_order must lie in [0, 1], got {}", self.zeroth_order)));
        }
        if self.levels < 2 {
            return Err(Error::InvalidConfig("need at least 2 height levels".into()));
        }
        Ok(())
    }
}

/// Laser, transforms and gain shared by every forward pass.
///
/// The laser carries unit total power, so the far-field pattern sums to one;
/// `gain = N²·mean_intensity` rescales it to the configured mean brightness.
#[derive(Clone)]
pub struct Optics<T: Real> {
    pub config: OpticsConfig,
    laser: ComplexField<T>,
    dft: Arc<CenteredDft<T>>,
    resampler: Arc<Resampler<T>>,
    gain: T,
}

impl<T: Real> Optics<T> {
    pub fn new(config: OpticsConfig, rig: &CameraRig<T>) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let laser = ComplexField::collimated(
            n,
            T::of(config.pitch_u),
            T::of(config.wavelength),
            T::one() / T::of_usize(n),
            config.circular_aperture,
        )?;
        let power = laser.power();
        let laser = ComplexField::new(
            laser.re().mapv(|v| v / power.sqrt()),
            laser.im().clone(),
            laser.pitch_u(),
            laser.wavelength(),
        )?;
        let scale = camera_scale_factor(T::of(config.pitch_u), n, T::of(config.wavelength), rig);
        Ok(Self {
            config,
            laser,
            dft: Arc::new(CenteredDft::new(n)),
            resampler: Arc::new(Resampler::new(n, scale)?),
            gain: T::of((n * n) as f64 * config.mean_intensity),
        })
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn laser(&self) -> &ComplexField<T> {
        &self.laser
    }

    pub fn gain(&self) -> T {
        self.gain
    }

    /// Uniform random normalized heights in `[0, 1)`.
    pub fn random_heights(&self, seed: u64) -> Array2<T> {
        uniform_grid((self.n(), self.n()), 0.0, 1.0, seed)
    }

    /// Physical profile of normalized heights.
    pub fn doe(&self, heights: &Array2<T>) -> Result<DOEProfile<T>> {
        DOEProfile::from_normalized(
            heights,
            T::of(self.config.eta),
            T::of(self.config.wavelength),
            T::of(self.config.pitch_u),
            self.config.levels,
        )
    }

    /// Camera-grid pattern without gradients.
    pub fn pattern(&self, heights: &Array2<T>) -> Result<IlluminationPattern<T>> {
        self.pattern_of(&self.doe(heights)?)
    }

    pub fn pattern_of(&self, doe: &DOEProfile<T>) -> Result<IlluminationPattern<T>> {
        let far = propagate_far_field(&apply_doe(&self.laser, doe)?)?;
        let native = add_zeroth_order(&field_intensity(&far), T::of(self.config.zeroth_order));
        let gain = self.gain;
        let out = self.resampler.forward(native.intensity()).mapv(|v| v.max(T::zero()) * gain);
        IlluminationPattern::new(out, native.pitch_u(), native.wavelength(), true)
    }

    /// Differentiable camera-grid pattern of normalized heights.
    pub fn pattern_on(&self, tape: &AdjointTape<T>, heights: &DiffValue<T>) -> Result<DiffValue<T>> {
        let u = tape.phase_modulate(heights, &self.laser)?;
        let far = tape.dft2c(&u, &self.dft)?;
        let mut p = tape.sq_magnitude(&far)?;
        if self.config.zeroth_order > 0.0 {
            p = tape.zeroth_order(&p, T::of(self.config.zeroth_order))?;
        }
        let p = tape.resample(&p, &self.resampler)?;
        // cubic overshoot can dip below zero next to bright dots
        let p = tape.clamp_min(&p, T::zero())?;
        tape.scale(&p, self.gain)
    }
}

/// Noise realizations of the left and right captures for one seed, as used by
/// [`crate::scenesim::synthesize_stereo`].
pub fn view_noise<T: Real>(dim: (usize, usize), sigma: T, seed: u64) -> (Array2<T>, Array2<T>) {
    let (l, r) = view_noise_seeds(seed);
    (gaussian_grid(dim, sigma, l), gaussian_grid(dim, sigma, r))
}

/// Left and right sensor images of a scene under a recorded pattern.
pub fn capture_on<T: Real>(
    tape: &AdjointTape<T>,
    pattern: &DiffValue<T>,
    scene: &SceneSample<T>,
    rig: &CameraRig<T>,
    cfg: &CaptureConfig<T>,
) -> Result<(DiffValue<T>, DiffValue<T>)> {
    let dim = scene.dim();
    let (noise_l, noise_r) = view_noise(dim, cfg.noise_sigma, cfg.rng_seed);
    let disp_l = DiffValue::constant(scene.disp_l.clone().into_dyn());
    let disp_r = DiffValue::constant(scene.disp_r.clone().into_dyn());
    let p_l = tape.warp(pattern, &disp_l, &mask_to_real(&scene.occ_l), View::Left.shift(rig))?;
    let p_r = tape.warp(pattern, &disp_r, &mask_to_real(&scene.occ_r), View::Right.shift(rig))?;
    let left = tape.capture(&p_l, &scene.refl_l, &noise_l, cfg)?;
    let right = tape.capture(&p_r, &scene.refl_r, &noise_r, cfg)?;
    Ok((left, right))
}

/// Everything one scene contributes to the training loss.
pub struct SceneTerm<'a, T: Real> {
    pub scene: &'a SceneSample<T>,
    /// Pixels the loss is averaged over.
    pub mask: &'a Array2<bool>,
    pub capture: CaptureConfig<T>,
}

/// Masked disparity MAE of one scene, recorded end to end from the heights
/// and encoder weights.
pub fn scene_loss_on<T: Real>(
    tape: &AdjointTape<T>,
    heights: &DiffValue<T>,
    camera: &EncoderValues<T>,
    illumination: &EncoderValues<T>,
    optics: &Optics<T>,
    params: &MatcherParams<T>,
    rig: &CameraRig<T>,
    term: &SceneTerm<'_, T>,
) -> Result<DiffValue<T>> {
    let pattern = optics.pattern_on(tape, heights)?;
    if pattern.shape() != [term.scene.dim().0, term.scene.dim().1] {
        return Err(Error::Shape(format!(
            "pattern {:?} vs scene {:?}",
            pattern.shape(),
            term.scene.dim()
        )));
    }
    let (left, right) = capture_on(tape, &pattern, term.scene, rig, &term.capture)?;
    let est = reconstruct_on(tape, &left, &right, Some(&pattern), params, camera, illumination, rig.narrow_fraction())?;
    tape.masked_mae(&est, &term.scene.disp_l, term.mask)
}
