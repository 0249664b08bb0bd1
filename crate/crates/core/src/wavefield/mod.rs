//! Wave-optics model of the illumination module: DOE phase delay, Fraunhofer
//! propagation, intensity formation, camera-grid resampling and fabrication
//! quantization.

mod doe_io;
mod fft;
mod field;
mod resample;

pub use doe_io::{read_doe, write_doe, write_doe_to, write_level_preview, DOE_MAGIC};
pub use fft::{fftshift2, ifftshift2, CenteredDft};
pub use field::{
    add_zeroth_order, apply_doe, field_intensity, propagate_far_field, quantize_heights, ComplexField, DOEProfile,
    IlluminationPattern,
};
pub use resample::{camera_scale_factor, camera_scale_factor_at_depth, resample_to_camera, Resampler};

use crate::error::Result;
use crate::scalar::Real;
use crate::scenesim::CameraRig;

/// Laser → DOE → far field → intensity → camera grid, without gradients.
pub fn simulate_pattern<T: Real>(
    laser: &ComplexField<T>,
    doe: &DOEProfile<T>,
    rig: &CameraRig<T>,
    zeroth_order: T,
) -> Result<IlluminationPattern<T>> {
    let far = propagate_far_field(&apply_doe(laser, doe)?)?;
    let pattern = add_zeroth_order(&field_intensity(&far), zeroth_order);
    resample_to_camera(&pattern, rig)
}
