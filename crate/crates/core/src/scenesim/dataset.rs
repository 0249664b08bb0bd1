//! Conversion of a passive RGB stereo dataset into active-stereo samples.
//!
//! Directory layout, per sample id:
//!
//! ```text
//! <id>_left.pfm   <id>_right.pfm    wide-baseline disparity, pixels
//! <id>_left.png   <id>_right.png    colour (or gray) images
//! ```
//!
//! Reflectance is an NIR proxy: `clamp(gain · luma + offset, 0, 1)` with
//! Rec. 601 luma. Illumination visibility comes from a left/right disparity
//! cross-check whose occluded runs are shrunk toward the illuminator by the
//! narrow/wide baseline fraction.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::io::{read_pfm_gray, read_rgb};
use crate::scalar::Real;
use crate::scenesim::occlusion::{cross_check_occlusion, shrink_runs};
use crate::scenesim::SceneSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    /// Output height and width; `None` keeps the source resolution.
    pub size: Option<(usize, usize)>,
    pub nir_gain: f64,
    pub nir_offset: f64,
    /// Disparity disagreement (pixels) beyond which a pixel is occluded.
    pub consistency_threshold: f64,
    /// `b_narrow / b_wide`.
    pub narrow_fraction: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            size: None,
            nir_gain: 1.0,
            nir_offset: 0.0,
            consistency_threshold: 1.0,
            narrow_fraction: 0.5,
        }
    }
}

/// NIR reflectance proxy from an RGB image `[3, h, w]` in `[0, 1]`.
pub fn nir_proxy<T: Real>(rgb: &Array3<f64>, gain: f64, offset: f64) -> Array2<T> {
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let luma = 0.299 * rgb[[0, y, x]] + 0.587 * rgb[[1, y, x]] + 0.114 * rgb[[2, y, x]];
        T::of((gain * luma + offset).clamp(0.0, 1.0))
    })
}

/// Illumination visibility (`true` = lit) for both views from disparities.
pub fn illumination_masks<T: Real>(
    disp_l: &Array2<T>,
    disp_r: &Array2<T>,
    threshold: T,
    narrow_fraction: f64,
) -> (Array2<bool>, Array2<bool>) {
    let stereo_l = cross_check_occlusion(disp_l, disp_r, true, threshold);
    let stereo_r = cross_check_occlusion(disp_r, disp_l, false, threshold);
    let shadow_l = shrink_runs(&stereo_l, narrow_fraction, true);
    let shadow_r = shrink_runs(&stereo_r, 1.0 - narrow_fraction, false);
    (shadow_l.mapv(|s| !s), shadow_r.mapv(|s| !s))
}

fn resize_real<T: Real>(grid: &Array2<T>, h: usize, w: usize) -> Array2<T> {
    let (gh, gw) = grid.dim();
    if (gh, gw) == (h, w) {
        return grid.clone();
    }
    let img = ImageBuffer::<Luma<f32>, Vec<f32>>::from_fn(gw as u32, gh as u32, |x, y| {
        Luma([grid[[y as usize, x as usize]].as_f64() as f32])
    });
    let out = imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
    Array2::from_shape_fn((h, w), |(y, x)| T::of(out.get_pixel(x as u32, y as u32)[0] as f64))
}

fn resize_mask(mask: &Array2<bool>, h: usize, w: usize) -> Array2<bool> {
    let (mh, mw) = mask.dim();
    if (mh, mw) == (h, w) {
        return mask.clone();
    }
    let img = ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(mw as u32, mh as u32, |x, y| {
        Luma([mask[[y as usize, x as usize]] as u8])
    });
    let out = imageops::resize(&img, w as u32, h as u32, FilterType::Nearest);
    Array2::from_shape_fn((h, w), |(y, x)| out.get_pixel(x as u32, y as u32)[0] != 0)
}

/// Builds one sample from in-memory disparities and colour images.
pub fn convert_sample<T: Real>(
    disp_l: Array2<T>,
    disp_r: Array2<T>,
    rgb_l: &Array3<f64>,
    rgb_r: &Array3<f64>,
    opts: &DatasetOptions,
) -> Result<SceneSample<T>> {
    let dim = disp_l.dim();
    if disp_r.dim() != dim || (rgb_l.shape()[1], rgb_l.shape()[2]) != dim || (rgb_r.shape()[1], rgb_r.shape()[2]) != dim {
        return Err(Error::Shape("disparity and colour images differ in size".into()));
    }
    if disp_l.iter().chain(disp_r.iter()).any(|d| !d.is_finite() || *d < T::zero()) {
        return Err(Error::NonFinite("disparities must be finite and non-negative".into()));
    }
    let refl_l = nir_proxy(rgb_l, opts.nir_gain, opts.nir_offset);
    let refl_r = nir_proxy(rgb_r, opts.nir_gain, opts.nir_offset);
    let (occ_l, occ_r) = illumination_masks(&disp_l, &disp_r, T::of(opts.consistency_threshold), opts.narrow_fraction);
    let (h, w) = opts.size.unwrap_or(dim);
    let disp_scale = T::of(w as f64 / dim.1 as f64);
    let sample = SceneSample {
        disp_l: resize_real(&disp_l, h, w).mapv(|d| d * disp_scale),
        disp_r: resize_real(&disp_r, h, w).mapv(|d| d * disp_scale),
        refl_l: resize_real(&refl_l, h, w),
        refl_r: resize_real(&refl_r, h, w),
        occ_l: resize_mask(&occ_l, h, w),
        occ_r: resize_mask(&occ_r, h, w),
    };
    sample.validate()?;
    Ok(sample)
}

fn load_sample<T: Real>(dir: &Path, id: &str, opts: &DatasetOptions) -> Result<SceneSample<T>> {
    let f = |suffix: &str| dir.join(format!("{id}_{suffix}"));
    let disp_l = read_pfm_gray(f("left.pfm"))?;
    let disp_r = read_pfm_gray(f("right.pfm"))?;
    let rgb_l = read_rgb(f("left.png"))?;
    let rgb_r = read_rgb(f("right.png"))?;
    convert_sample(disp_l, disp_r, &rgb_l, &rgb_r, opts)
}

/// Streams samples from a dataset directory in sorted id order. Samples that
/// fail to load are skipped with a logged diagnostic.
pub struct DatasetReader<T> {
    dir: PathBuf,
    ids: std::vec::IntoIter<String>,
    opts: DatasetOptions,
    skipped: Vec<(String, String)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> DatasetReader<T> {
    /// Ids that failed so far with their diagnostics.
    pub fn skipped(&self) -> &[(String, String)] {
        &self.skipped
    }
}

impl<T: Real> Iterator for DatasetReader<T> {
    type Item = SceneSample<T>;

    fn next(&mut self) -> Option<Self::Item> {
        for id in self.ids.by_ref() {
            match load_sample(&self.dir, &id, &self.opts) {
                Ok(s) => return Some(s),
                Err(e) => {
                    log::warn!("skipping sample `{id}`: {e}");
                    self.skipped.push((id, e.to_string()));
                }
            }
        }
        None
    }
}

pub fn ingest_dataset<T: Real>(dir: impl AsRef<Path>, opts: DatasetOptions) -> Result<DatasetReader<T>> {
    let dir = dir.as_ref().to_path_buf();
    let mut ids: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix("_left.pfm").map(str::to_string)
        })
        .collect();
    ids.sort();
    Ok(DatasetReader {
        dir,
        ids: ids.into_iter(),
        opts,
        skipped: Vec::new(),
        _marker: std::marker::PhantomData,
    })
}
