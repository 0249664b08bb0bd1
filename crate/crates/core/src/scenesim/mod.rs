//! Geometric-optics synthesis of the stereo captures: pattern warping,
//! radiometry, noise and clipping, plus scene sources (procedural planes and
//! converted passive-stereo datasets).

mod capture;
mod dataset;
mod occlusion;
mod rig;
mod toy;
mod warp;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use capture::{capture, capture_with_noise, synthesize_stereo, view_noise_seeds, StereoCapture};
pub(crate) use capture::radiometry;
pub use dataset::{convert_sample, illumination_masks, ingest_dataset, nir_proxy, DatasetOptions, DatasetReader};
pub use occlusion::{cross_check_occlusion, lr_consistency, shrink_runs};
pub use rig::{CameraRig, CaptureConfig};
pub use toy::{generate_toy_scene, random_two_plane, Hit, Rect, SceneDescriptor, ToyRenderer, VALID_DEPTH_RANGE};
pub use warp::{warp_linear, warp_linear_adjoint_disp, warp_linear_adjoint_src, warp_pattern, View};
pub(crate) use warp::{mask_to_real, source_pos};

/// Per-view ground truth of one scene: wide-baseline disparity, reflectance
/// and illumination visibility (`true` = lit).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample<T: Real> {
    pub disp_l: Array2<T>,
    pub disp_r: Array2<T>,
    pub refl_l: Array2<T>,
    pub refl_r: Array2<T>,
    pub occ_l: Array2<bool>,
    pub occ_r: Array2<bool>,
}

impl<T: Real> SceneSample<T> {
    pub fn dim(&self) -> (usize, usize) {
        self.disp_l.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let dims = [
            self.disp_r.dim(),
            self.refl_l.dim(),
            self.refl_r.dim(),
            self.occ_l.dim(),
            self.occ_r.dim(),
        ];
        if dims.iter().any(|d| *d != dim) {
            return Err(Error::Shape("scene grids differ in size".into()));
        }
        let w = T::of_usize(dim.1);
        for d in self.disp_l.iter().chain(self.disp_r.iter()) {
            if !d.is_finite() || *d < T::zero() || *d >= w {
                return Err(Error::InvalidScene(format!("disparity {d} outside [0, {w})")));
            }
        }
        if self
            .refl_l
            .iter()
            .chain(self.refl_r.iter())
            .any(|r| !(*r >= T::zero() && *r <= T::one()))
        {
            return Err(Error::InvalidScene("reflectance outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Left pixels whose ground-truth disparity passes the left/right check.
    pub fn valid_mask(&self, threshold: T) -> Array2<bool> {
        lr_consistency(&self.disp_l, &self.disp_r, threshold)
    }
}
