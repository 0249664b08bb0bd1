//! Trinocular disparity estimation: feature extraction, wide and narrow
//! matching costs, baseline-ratio fusion and soft-argmin regression, plus a
//! block-matching baseline.
//!
//! Every stage is expressed through [`AdjointTape`] primitives, so the same
//! code serves inference (all inputs constant) and joint optimization (pattern
//! and encoder weights as leaves).

mod baseline;
pub(crate) mod kernels;

use ndarray::{s, Array1, Array2, Array3, Array4};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffengine::{as_grid, as_volume, AdjointTape, DiffValue};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Real;
use crate::scenesim::{lr_consistency, CameraRig};

pub use baseline::block_match_baseline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// The image itself as one channel.
    Identity,
    /// Mean-removed `k×k` neighbourhood, one channel per offset.
    Patch,
    /// Convolution stacks with trainable weights.
    LearnedLinear,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "patch" => Ok(Self::Patch),
            "learned-linear" => Ok(Self::LearnedLinear),
            other => Err(Error::InvalidConfig(format!("unknown feature mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Left,
    Right,
    Illumination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    pub channels: Array3<T>,
    pub source: FeatureSource,
}

/// One linear convolution layer, kernel `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Real> {
    pub kernel: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ConvLayer<T> {
    /// Centered delta on every output channel for input channel 0, plus
    /// Gaussian perturbation of standard deviation `jitter`.
    pub fn near_delta(out_ch: usize, in_ch: usize, size: usize, jitter: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed);
        let normal = Normal::new(0.0, jitter.max(0.0)).expect("finite std");
        let c = size / 2;
        let kernel = Array4::from_shape_fn((out_ch, in_ch, size, size), |(o, i, y, x)| {
            let base = if i == o.min(in_ch - 1) && y == c && x == c { 1.0 } else { 0.0 };
            T::of(base + if jitter > 0.0 { normal.sample(&mut rng) } else { 0.0 })
        });
        Self { kernel, bias: Array1::zeros(out_ch) }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }
}

/// Encoder weights for one feature extractor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Encoder<T: Real> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> Encoder<T> {
    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(1, ConvLayer::out_channels)
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ch = 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (o, c, kh, kw) = l.kernel.dim();
            if c != ch || l.bias.len() != o || kh % 2 == 0 || kh != kw || o == 0 {
                return Err(Error::InvalidConfig(format!(
                    "encoder layer {i}: kernel {:?} does not follow {ch} input channels",
                    l.kernel.shape()
                )));
            }
            ch = o;
        }
        Ok(())
    }

    /// Flattened weights, kernel then bias per layer.
    pub fn to_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.kernel.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat) for an encoder of the same shape.
    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::Shape(format!("expected {} encoder values, got {}", self.num_values(), values.len())));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.kernel.iter_mut().for_each(|v| *v = it.next().expect("counted"));
            l.bias.iter_mut().for_each(|v| *v = it.next().expect("counted"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherParams<T: Real> {
    pub mode: FeatureMode,
    /// Side of the neighbourhood in patch mode.
    pub patch_size: usize,
    /// Shared by both cameras.
    pub camera: Encoder<T>,
    pub illumination: Encoder<T>,
    /// Side of the cost aggregation window (odd).
    pub window: usize,
    pub temperature: T,
    /// Number of wide-baseline disparity candidates `0..max_disparity`.
    pub max_disparity: usize,
    /// Normalize each input image to zero mean and unit variance first.
    pub standardize: bool,
    /// Use the illumination image as a third view.
    pub trinocular: bool,
}

impl<T: Real> MatcherParams<T> {
    pub fn new(mode: FeatureMode, max_disparity: usize) -> Self {
        Self {
            mode,
            patch_size: 3,
            camera: Encoder::default(),
            illumination: Encoder::default(),
            window: 7,
            temperature: T::one(),
            max_disparity,
            standardize: true,
            trinocular: true,
        }
    }

    /// Learned-linear encoders with `channels` outputs and `k×k` kernels,
    /// initialized near the identity.
    pub fn learned(max_disparity: usize, channels: usize, k: usize, seed: u64) -> Self {
        let mut p = Self::new(FeatureMode::LearnedLinear, max_disparity);
        p.camera.layers = vec![ConvLayer::near_delta(channels, 1, k, 0.1, seed)];
        p.illumination.layers = vec![ConvLayer::near_delta(channels, 1, k, 0.1, seed ^ 0x1111)];
        p
    }

    pub fn binocular(mut self) -> Self {
        self.trinocular = false;
        self
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!("aggregation window must be odd, got {}", self.window)));
        }
        if !(self.temperature > T::zero()) {
            return Err(Error::InvalidConfig("softmax temperature must be positive".into()));
        }
        if self.max_disparity == 0 || self.max_disparity >= width {
            return Err(Error::Range(format!(
                "need 1 <= D_max < W, got D_max={} for W={width}",
                self.max_disparity
            )));
        }
        if self.mode == FeatureMode::Patch && self.patch_size % 2 == 0 {
            return Err(Error::InvalidConfig("patch size must be odd".into()));
        }
        if self.mode == FeatureMode::LearnedLinear {
            self.camera.validate()?;
            self.illumination.validate()?;
            if self.camera.layers.is_empty() || self.illumination.layers.is_empty() {
                return Err(Error::InvalidConfig("learned-linear mode needs encoder layers".into()));
            }
            if self.camera.out_channels() != self.illumination.out_channels() {
                return Err(Error::InvalidConfig("camera and illumination encoders differ in width".into()));
            }
        }
        Ok(())
    }
}

/// Encoder weights placed on a tape (as leaves or constants).
pub struct EncoderValues<T: Real> {
    pub layers: Vec<(DiffValue<T>, DiffValue<T>)>,
}

impl<T: Real> EncoderValues<T> {
    pub fn constant(enc: &Encoder<T>) -> Self {
        Self {
            layers: enc
                .layers
                .iter()
                .map(|l| {
                    (
                        DiffValue::constant(l.kernel.clone().into_dyn()),
                        DiffValue::constant(l.bias.clone().into_dyn()),
                    )
                })
                .collect(),
        }
    }

    pub fn leaves(tape: &AdjointTape<T>, enc: &Encoder<T>) -> Result<Self> {
        let layers = enc
            .layers
            .iter()
            .map(|l| Ok((tape.leaf(l.kernel.clone().into_dyn())?, tape.leaf(l.bias.clone().into_dyn())?)))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn values(&self) -> impl Iterator<Item = &DiffValue<T>> {
        self.layers.iter().flat_map(|(k, b)| [k, b])
    }
}

fn patch_kernel<T: Real>(size: usize) -> Array4<T> {
    let n = size * size;
    let inv = T::one() / T::of_usize(n);
    Array4::from_shape_fn((n, 1, size, size), |(o, _, y, x)| {
        let delta = if o == y * size + x { T::one() } else { T::zero() };
        delta - inv
    })
}

/// Differentiable feature extraction of an `H×W` image into `[C, H, W]`.
pub fn extract_features_on<T: Real>(
    tape: &AdjointTape<T>,
    image: &DiffValue<T>,
    params: &MatcherParams<T>,
    encoder: &EncoderValues<T>,
) -> Result<DiffValue<T>> {
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::Shape(format!("image must be 2-D, got {other:?}"))),
    };
    let x = if params.standardize { tape.standardize(image)? } else { image.clone() };
    let x = tape.reshape(&x, &[1, h, w])?;
    match params.mode {
        FeatureMode::Identity => Ok(x),
        FeatureMode::Patch => {
            let k = patch_kernel::<T>(params.patch_size);
            let bias = Array1::<T>::zeros(k.shape()[0]);
            tape.conv2d(&x, &DiffValue::constant(k.into_dyn()), &DiffValue::constant(bias.into_dyn()))
        }
        FeatureMode::LearnedLinear => {
            let mut y = x;
            for (k, b) in &encoder.layers {
                y = tape.conv2d(&y, k, b)?;
            }
            Ok(y)
        }
    }
}

/// Number of narrow-volume slices needed to cover `max_disparity` wide
/// candidates.
pub fn narrow_candidates<T: Real>(max_disparity: usize, narrow_per_wide: T) -> usize {
    (T::of_usize(max_disparity.saturating_sub(1)) * narrow_per_wide)
        .ceil()
        .to_usize()
        .unwrap_or(0)
        + 1
}

/// Differentiable reconstruction of the reference-view disparity.
///
/// `narrow_per_wide` is the illuminator's baseline to the reference camera
/// divided by the camera baseline. With `illum = None` or a binocular
/// configuration only the wide volume is used.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_on<T: Real>(
    tape: &AdjointTape<T>,
    reference: &DiffValue<T>,
    other: &DiffValue<T>,
    illum: Option<&DiffValue<T>>,
    params: &MatcherParams<T>,
    camera: &EncoderValues<T>,
    illumination: &EncoderValues<T>,
    narrow_per_wide: T,
) -> Result<DiffValue<T>> {
    let w = *reference.shape().last().unwrap_or(&0);
    params.validate(w)?;
    let radius = params.window / 2;
    let f_ref = extract_features_on(tape, reference, params, camera)?;
    let f_other = extract_features_on(tape, other, params, camera)?;
    let wide = tape.cost_volume(&f_ref, &f_other, params.max_disparity, radius)?;
    let volume = match illum {
        Some(illum) if params.trinocular => {
            let f_illum = extract_features_on(tape, illum, params, illumination)?;
            let dn = narrow_candidates(params.max_disparity, narrow_per_wide);
            let narrow = tape.cost_volume(&f_ref, &f_illum, dn, radius)?;
            tape.fuse(&wide, &narrow, narrow_per_wide)?
        }
        _ => wide,
    };
    tape.soft_argmin(&volume, params.temperature)
}

fn check_image<T: Real>(image: &Array2<T>) -> Result<()> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input image".into()));
    }
    Ok(())
}

/// Feature map of one image.
pub fn extract_features<T: Real>(image: &Array2<T>, params: &MatcherParams<T>, source: FeatureSource) -> Result<FeatureMap<T>> {
    check_image(image)?;
    let tape = AdjointTape::new();
    let enc = match source {
        FeatureSource::Illumination => EncoderValues::constant(&params.illumination),
        _ => EncoderValues::constant(&params.camera),
    };
    let f = extract_features_on(&tape, &DiffValue::constant(image.clone().into_dyn()), params, &enc)?;
    Ok(FeatureMap { channels: as_volume(&f)?, source })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    Wide,
    Narrow,
    /// Fused with the given `b_wide / b_narrow`.
    Fused(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume<T: Real> {
    /// `[D, H, W]`, candidate disparities `0..D`.
    pub cost: Array3<T>,
    pub kind: BaselineKind,
}

pub fn build_cost_volume<T: Real>(
    f_ref: &FeatureMap<T>,
    f_other: &FeatureMap<T>,
    max_disparity: usize,
    window: usize,
) -> Result<CostVolume<T>> {
    if window % 2 == 0 {
        return Err(Error::InvalidConfig("aggregation window must be odd".into()));
    }
    let tape = AdjointTape::new();
    let c = tape.cost_volume(
        &DiffValue::constant(f_ref.channels.clone().into_dyn()),
        &DiffValue::constant(f_other.channels.clone().into_dyn()),
        max_disparity,
        window / 2,
    )?;
    let kind = if f_other.source == FeatureSource::Illumination { BaselineKind::Narrow } else { BaselineKind::Wide };
    Ok(CostVolume { cost: as_volume(&c)?, kind })
}

/// Adds the narrow volume, looked up at `d · b_narrow / b_wide`, to the wide
/// volume. `ratio` is `b_wide / b_narrow`.
pub fn fuse_volumes<T: Real>(wide: &CostVolume<T>, narrow: &CostVolume<T>, ratio: T) -> Result<CostVolume<T>> {
    if !(ratio > T::zero()) || !ratio.is_finite() {
        return Err(Error::InvalidConfig(format!("baseline ratio must be positive, got {ratio}")));
    }
    let tape = AdjointTape::new();
    let f = tape.fuse(
        &DiffValue::constant(wide.cost.clone().into_dyn()),
        &DiffValue::constant(narrow.cost.clone().into_dyn()),
        T::one() / ratio,
    )?;
    Ok(CostVolume { cost: as_volume(&f)?, kind: BaselineKind::Fused(ratio.as_f64()) })
}

pub fn regress_disparity<T: Real>(volume: &CostVolume<T>, temperature: T) -> Result<Array2<T>> {
    let tape = AdjointTape::new();
    let d = tape.soft_argmin(&DiffValue::constant(volume.cost.clone().into_dyn()), temperature)?;
    as_grid(&d)
}

/// Left-view disparity from the two captures and (in trinocular mode) the
/// illumination image.
pub fn reconstruct<T: Real>(
    left: &Array2<T>,
    right: &Array2<T>,
    illum: Option<&Array2<T>>,
    params: &MatcherParams<T>,
    rig: &CameraRig<T>,
) -> Result<Array2<T>> {
    reconstruct_view(left, right, illum, params, rig.narrow_fraction())
}

/// Right-view disparity, by mirroring the images so the right camera becomes
/// the reference.
pub fn reconstruct_right<T: Real>(
    left: &Array2<T>,
    right: &Array2<T>,
    illum: Option<&Array2<T>>,
    params: &MatcherParams<T>,
    rig: &CameraRig<T>,
) -> Result<Array2<T>> {
    let flip = |a: &Array2<T>| a.slice(s![.., ..;-1]).to_owned();
    let illum = illum.map(flip);
    let d = reconstruct_view(&flip(right), &flip(left), illum.as_ref(), params, T::one() - rig.narrow_fraction())?;
    Ok(flip(&d))
}

fn reconstruct_view<T: Real>(
    reference: &Array2<T>,
    other: &Array2<T>,
    illum: Option<&Array2<T>>,
    params: &MatcherParams<T>,
    narrow_per_wide: T,
) -> Result<Array2<T>> {
    if reference.dim() != other.dim() || illum.is_some_and(|i| i.dim() != reference.dim()) {
        return Err(Error::Shape("captures and illumination image differ in size".into()));
    }
    check_image(reference)?;
    check_image(other)?;
    if params.trinocular && illum.is_none() {
        return Err(Error::InvalidConfig("trinocular mode needs the illumination image".into()));
    }
    let tape = AdjointTape::new();
    let c = |a: &Array2<T>| DiffValue::constant(a.clone().into_dyn());
    let illum = illum.map(c);
    let d = reconstruct_on(
        &tape,
        &c(reference),
        &c(other),
        illum.as_ref(),
        params,
        &EncoderValues::constant(&params.camera),
        &EncoderValues::constant(&params.illumination),
        narrow_per_wide,
    )?;
    as_grid(&d)
}

/// Pixels whose estimated left disparity is confirmed by the right estimate
/// within one pixel.
pub fn consistency_mask<T: Real>(disp_l: &Array2<T>, disp_r: &Array2<T>) -> Array2<bool> {
    lr_consistency(disp_l, disp_r, T::one())
}

/// Channel count of the features `params` produce.
pub fn feature_channels<T: Real>(params: &MatcherParams<T>) -> usize {
    match params.mode {
        FeatureMode::Identity => 1,
        FeatureMode::Patch => params.patch_size * params.patch_size,
        FeatureMode::LearnedLinear => params.camera.out_channels(),
    }
}

/// Argmin index along the first axis, smallest index on ties.
pub(crate) fn argmin_axis0<T: Real>(v: &Array3<T>) -> Array2<T> {
    let (_, h, w) = v.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let col = v.slice(s![.., y, x]);
        let mut best = 0;
        for (d, &c) in col.iter().enumerate() {
            if c < col[best] {
                best = d;
            }
        }
        T::of_usize(best)
    })
}

#[cfg(test)]
mod tests;
