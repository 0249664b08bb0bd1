//! Bicubic (Catmull–Rom) rescaling of the far-field pattern onto the camera
//! pixel grid.
//!
//! The operator is linear in the pattern, so it is stored as per-axis tap
//! lists and applied separably; the adjoint scatters through the same taps.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scenesim::CameraRig;
use crate::wavefield::field::IlluminationPattern;

/// Ratio of the camera pixel footprint to the native pattern pitch,
/// `p·u·N / (f·λ)`. Depth cancels out.
pub fn camera_scale_factor<T: Real>(pitch_u: T, n: usize, wavelength: T, rig: &CameraRig<T>) -> T {
    rig.pixel_p * pitch_u * T::of_usize(n) / (rig.focal_f * wavelength)
}

/// Same ratio written with the depth-dependent footprints left in; used to
/// show that `z` cancels.
pub fn camera_scale_factor_at_depth<T: Real>(
    pitch_u: T,
    n: usize,
    wavelength: T,
    rig: &CameraRig<T>,
    z: T,
) -> T {
    let camera_footprint = rig.pixel_p / rig.focal_f * z;
    let pattern_pitch = wavelength * z / (pitch_u * T::of_usize(n));
    camera_footprint / pattern_pitch
}

fn catmull_rom<T: Real>(t: T) -> T {
    let a = T::of(-0.5);
    let t = t.abs();
    let two = T::of(2.0);
    let three = T::of(3.0);
    if t <= T::one() {
        (a + two) * t * t * t - (a + three) * t * t + T::one()
    } else if t < two {
        a * t * t * t - T::of(5.0) * a * t * t + T::of(8.0) * a * t - T::of(4.0) * a
    } else {
        T::zero()
    }
}

/// Source taps for each output index along one axis.
#[derive(Debug, Clone)]
struct AxisTaps<T> {
    taps: Vec<Vec<(usize, T)>>,
}

impl<T: Real> AxisTaps<T> {
    fn new(n: usize, scale: T) -> Self {
        let c = T::of_usize(n / 2);
        let taps = (0..n)
            .map(|j| {
                let src = c + scale * (T::of_usize(j) - c);
                let base = src.floor();
                let mut row = Vec::with_capacity(4);
                for k in -1i64..=2 {
                    let idx = base.to_i64().unwrap_or(i64::MIN / 2) + k;
                    if idx < 0 || idx >= n as i64 {
                        continue;
                    }
                    let w = catmull_rom(src - T::of(idx as f64));
                    if w != T::zero() {
                        row.push((idx as usize, w));
                    }
                }
                row
            })
            .collect();
        Self { taps }
    }
}

/// Separable Catmull–Rom rescaling about the grid center `(N/2, N/2)` with
/// zero padding outside the source.
#[derive(Debug, Clone)]
pub struct Resampler<T> {
    n: usize,
    axis: AxisTaps<T>,
}

impl<T: Real> Resampler<T> {
    pub fn new(n: usize, scale: T) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!("resampling scale must be positive and finite, got {scale}")));
        }
        Ok(Self { n, axis: AxisTaps::new(n, scale) })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, src: &Array2<T>) -> Array2<T> {
        let n = self.n;
        assert_eq!(src.dim(), (n, n));
        let mut tmp = Array2::zeros((n, n));
        for y in 0..n {
            for (x, taps) in self.axis.taps.iter().enumerate() {
                tmp[[y, x]] = taps.iter().map(|&(s, w)| w * src[[y, s]]).sum();
            }
        }
        let mut out = Array2::zeros((n, n));
        for (y, taps) in self.axis.taps.iter().enumerate() {
            for &(s, w) in taps {
                for x in 0..n {
                    out[[y, x]] += w * tmp[[s, x]];
                }
            }
        }
        out
    }

    /// Transpose of [`forward`](Self::forward).
    pub fn adjoint(&self, cot: &Array2<T>) -> Array2<T> {
        let n = self.n;
        assert_eq!(cot.dim(), (n, n));
        let mut tmp = Array2::zeros((n, n));
        for (y, taps) in self.axis.taps.iter().enumerate() {
            for &(s, w) in taps {
                for x in 0..n {
                    tmp[[s, x]] += w * cot[[y, x]];
                }
            }
        }
        let mut out = Array2::zeros((n, n));
        for y in 0..n {
            for (x, taps) in self.axis.taps.iter().enumerate() {
                let g = tmp[[y, x]];
                for &(s, w) in taps {
                    out[[y, s]] += w * g;
                }
            }
        }
        out
    }
}

/// Rescales the native far-field pattern so one sample equals one camera
/// pixel. Because the scale factor is depth independent the result applies to
/// every scene depth.
pub fn resample_to_camera<T: Real>(pattern: &IlluminationPattern<T>, rig: &CameraRig<T>) -> Result<IlluminationPattern<T>> {
    if pattern.is_camera_resampled() {
        return Err(Error::InvalidConfig("pattern is already on the camera grid".into()));
    }
    let (h, w) = pattern.dim();
    if h != w {
        return Err(Error::Shape(format!("pattern must be square, got {h}x{w}")));
    }
    let s = camera_scale_factor(pattern.pitch_u(), w, pattern.wavelength(), rig);
    let resampler = Resampler::new(w, s)?;
    // Catmull-Rom overshoot can dip slightly below zero next to sharp peaks.
    let out = resampler.forward(pattern.intensity()).mapv(|v| v.max(T::zero()));
    IlluminationPattern::new(out, pattern.pitch_u(), pattern.wavelength(), true)
}
