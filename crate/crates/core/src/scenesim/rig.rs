use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Stereo camera pair with the illuminator on the baseline between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig<T> {
    /// Focal length, meters.
    pub focal_f: T,
    /// Pixel pitch, meters.
    pub pixel_p: T,
    /// Left ↔ right camera distance, meters.
    pub baseline_wide: T,
    /// Left camera ↔ illuminator distance, meters.
    pub baseline_narrow: T,
}

impl<T: Real> CameraRig<T> {
    pub fn new(focal_f: T, pixel_p: T, baseline_wide: T, baseline_narrow: T) -> Result<Self> {
        let rig = Self { focal_f, pixel_p, baseline_wide, baseline_narrow };
        rig.validate()?;
        Ok(rig)
    }

    /// 6 mm lenses, 5.3 µm pixels, 55 mm baseline, illuminator centered.
    pub fn prototype() -> Self {
        Self::centered(T::of(6e-3), T::of(5.3e-6), T::of(55e-3))
    }

    /// Rig with the illuminator halfway between the cameras.
    pub fn centered(focal_f: T, pixel_p: T, baseline_wide: T) -> Self {
        Self {
            focal_f,
            pixel_p,
            baseline_wide,
            baseline_narrow: baseline_wide * T::of(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.focal_f, self.pixel_p, self.baseline_wide, self.baseline_narrow];
        if all.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidConfig("rig lengths must be positive and finite".into()));
        }
        if self.baseline_narrow >= self.baseline_wide {
            return Err(Error::InvalidConfig(
                "the illuminator must sit strictly between the cameras".into(),
            ));
        }
        Ok(())
    }

    /// Wide-baseline disparity (pixels) of a point at depth `z`.
    pub fn disparity_at(&self, z: T) -> T {
        self.focal_f * self.baseline_wide / (self.pixel_p * z)
    }

    /// Depth of a wide-baseline disparity.
    pub fn depth_at(&self, disparity: T) -> T {
        self.focal_f * self.baseline_wide / (self.pixel_p * disparity)
    }

    /// `b_narrow / b_wide`: fraction of the wide disparity seen between the
    /// left camera and the illuminator.
    pub fn narrow_fraction(&self) -> T {
        self.baseline_narrow / self.baseline_wide
    }

    /// `b_wide / b_narrow`.
    pub fn baseline_ratio(&self) -> T {
        self.baseline_wide / self.baseline_narrow
    }
}

/// Sensor and illumination parameters of one imaging environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig<T> {
    pub gamma: T,
    pub alpha: T,
    pub beta: T,
    pub noise_sigma: T,
    pub clip_lo: T,
    pub clip_hi: T,
    pub rng_seed: u64,
}

impl<T: Real> CaptureConfig<T> {
    pub fn new(gamma: T, alpha: T, beta: T, noise_sigma: T, rng_seed: u64) -> Result<Self> {
        let cfg = Self {
            gamma,
            alpha,
            beta,
            noise_sigma,
            clip_lo: T::zero(),
            clip_hi: T::one(),
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Noiseless pass-through: `J = P` for unit reflectance.
    pub fn ideal() -> Self {
        Self {
            gamma: T::one(),
            alpha: T::zero(),
            beta: T::one(),
            noise_sigma: T::zero(),
            clip_lo: T::zero(),
            clip_hi: T::one(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.alpha, self.beta, self.noise_sigma, self.clip_lo, self.clip_hi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("capture parameters must be finite".into()));
        }
        if !(self.gamma > T::zero()) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        if self.alpha < T::zero() || self.beta < T::zero() || self.noise_sigma < T::zero() {
            return Err(Error::InvalidConfig("alpha, beta and noise_sigma must be non-negative".into()));
        }
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::InvalidConfig("clip_lo must be below clip_hi".into()));
        }
        Ok(())
    }
}
