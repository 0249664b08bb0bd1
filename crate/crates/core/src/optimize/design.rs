//! DOE design for a prescribed far-field intensity.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::diffengine::AdjointTape;
use crate::error::{Error, Result};
use crate::optimize::adam::Adam;
use crate::optimize::pipeline::OpticsConfig;
use crate::wavefield::{quantize_heights, CenteredDft, ComplexField, DOEProfile, IlluminationPattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    Gradient,
    IterativeFft,
}

impl FromStr for DesignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "iterative-fft" | "iterative_fft" => Ok(Self::IterativeFft),
            other => Err(Error::InvalidConfig(format!("unknown design method `{other}`"))),
        }
    }
}

impl fmt::Display for DesignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gradient => "gradient",
            Self::IterativeFft => "iterative-fft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub method: DesignMethod,
    pub iterations: usize,
    /// Seed of the random initial heights.
    pub seed: u64,
    /// Adam step on normalized heights (gradient method only).
    pub lr: f64,
    /// Snap the result to the fabrication levels.
    pub quantize: bool,
}

impl DesignOptions {
    pub fn new(method: DesignMethod, iterations: usize) -> Self {
        Self { method, iterations, seed: 0, lr: 0.02, quantize: false }
    }
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    pub doe: DOEProfile<f64>,
    /// Far-field error after each iteration, index 0 being the
    /// initialization. Amplitude error `Σ(|F| − √target)²` for the iterative
    /// method, intensity error `Σ(|F|² − target)²` for the gradient method.
    pub errors: Vec<f64>,
    /// Far-field intensity of the returned profile.
    pub pattern: Array2<f64>,
    /// Pearson correlation of `pattern` with the normalized target.
    pub correlation: f64,
}

/// Pearson correlation of two grids; 0 when either is constant.
pub fn normalized_cross_correlation(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let ma = a.mean().unwrap_or(0.0);
    let mb = b.mean().unwrap_or(0.0);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| {
        let (dx, dy) = (x - ma, y - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    });
    if aa <= 0.0 || bb <= 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

/// Rescales a non-negative target to unit total energy.
pub fn normalize_target(target: &Array2<f64>) -> Result<Array2<f64>> {
    if target.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidTarget("target must be finite and non-negative".into()));
    }
    let total: f64 = target.sum();
    if total <= 0.0 {
        return Err(Error::InvalidTarget("target has no energy".into()));
    }
    Ok(target / total)
}

fn unit_laser(cfg: &OpticsConfig) -> Result<ComplexField<f64>> {
    let n = cfg.n;
    let laser = ComplexField::collimated(n, cfg.pitch_u, cfg.wavelength, 1.0 / n as f64, cfg.circular_aperture)?;
    let k = laser.power().sqrt();
    ComplexField::new(laser.re() / k, laser.im().clone(), cfg.pitch_u, cfg.wavelength)
}

fn far_field(dft: &CenteredDft<f64>, amp: &Array2<f64>, heights: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let tau = std::f64::consts::TAU;
    let re = Zip::from(amp).and(heights).map_collect(|&a, &t| a * (tau * t).cos());
    let im = Zip::from(amp).and(heights).map_collect(|&a, &t| a * (tau * t).sin());
    dft.apply(&re, &im, true)
}

fn intensity(re: &Array2<f64>, im: &Array2<f64>) -> Array2<f64> {
    Zip::from(re).and(im).map_collect(|&r, &i| r * r + i * i)
}

/// One Gerchberg–Saxton pass: impose the target magnitude in the far field,
/// return to the DOE plane and keep only the phase. Returns the new heights
/// and the projected far field's energy.
fn gs_update(dft: &CenteredDft<f64>, amp: &Array2<f64>, heights: &Array2<f64>, sqrt_target: &Array2<f64>) -> (Array2<f64>, f64) {
    let (mut re, mut im) = far_field(dft, amp, heights);
    let mut energy = 0.0;
    Zip::from(&mut re).and(&mut im).and(sqrt_target).for_each(|r, i, &s| {
        let m = (*r * *r + *i * *i).sqrt();
        let (c, sn) = if m > 0.0 { (*r / m, *i / m) } else { (1.0, 0.0) };
        *r = s * c;
        *i = s * sn;
        energy += s * s;
    });
    let (bre, bim) = dft.apply(&re, &im, false);
    let tau = std::f64::consts::TAU;
    let h = Zip::from(&bre).and(&bim).map_collect(|&r, &i| (i.atan2(r) / tau).rem_euclid(1.0) % 1.0);
    (h, energy)
}

fn amplitude_error(re: &Array2<f64>, im: &Array2<f64>, sqrt_target: &Array2<f64>) -> f64 {
    Zip::from(re)
        .and(im)
        .and(sqrt_target)
        .fold(0.0, |acc, &r, &i, &s| acc + ((r * r + i * i).sqrt() - s).powi(2))
}

/// Phase-only DOE whose far field approximates `target`.
pub fn design_doe_for_target(
    target: &IlluminationPattern<f64>,
    optics: &OpticsConfig,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    optics.validate()?;
    let n = optics.n;
    if target.dim() != (n, n) {
        return Err(Error::Shape(format!("target {:?} vs DOE grid {n}x{n}", target.dim())));
    }
    let goal = normalize_target(target.intensity())?;
    let laser = unit_laser(optics)?;
    let amp = laser.amplitude();
    let dft = Arc::new(CenteredDft::<f64>::new(n));
    let mut heights: Array2<f64> = crate::rng::uniform_grid((n, n), 0.0, 1.0, opts.seed);
    let mut errors = Vec::with_capacity(opts.iterations + 1);

    match opts.method {
        DesignMethod::IterativeFft => {
            let sqrt_target = goal.mapv(f64::sqrt);
            let (re, im) = far_field(&dft, &amp, &heights);
            errors.push(amplitude_error(&re, &im, &sqrt_target));
            for _ in 0..opts.iterations {
                heights = gs_update(&dft, &amp, &heights, &sqrt_target).0;
                let (re, im) = far_field(&dft, &amp, &heights);
                errors.push(amplitude_error(&re, &im, &sqrt_target));
            }
        }
        DesignMethod::Gradient => {
            // errors are scaled by N² on the tape to keep gradients O(1)
            let scale = (n * n) as f64;
            let goal_scaled = goal.mapv(|v| v * scale).into_dyn();
            let mut adam = Adam::new(n * n, opts.lr);
            for it in 0..=opts.iterations {
                let tape = AdjointTape::new();
                let t = tape.leaf(heights.clone().into_dyn())?;
                let u = tape.phase_modulate(&t, &laser)?;
                let f = tape.dft2c(&u, &dft)?;
                let p = tape.scale(&tape.sq_magnitude(&f)?, scale)?;
                let loss = tape.squared_error(&p, &goal_scaled)?;
                let value = loss.scalar().expect("scalar");
                if !value.is_finite() {
                    return Err(Error::Diverged { iteration: it, reason: format!("design loss {value}") });
                }
                errors.push(value / (scale * scale));
                if it == opts.iterations {
                    break;
                }
                let g = tape.backward(&loss, &[&t])?.remove(0);
                let mut h: Vec<f64> = heights.iter().copied().collect();
                adam.step(&mut h, g.as_slice().expect("standard layout"));
                heights = Array2::from_shape_vec((n, n), h.into_iter().map(|v| v.rem_euclid(1.0) % 1.0).collect())
                    .expect("n*n values");
            }
        }
    }

    let mut doe = DOEProfile::from_normalized(&heights, optics.eta, optics.wavelength, optics.pitch_u, optics.levels)?;
    if opts.quantize {
        doe = quantize_heights(&doe);
    }
    let (re, im) = far_field(&dft, &amp, &doe.normalized());
    let pattern = intensity(&re, &im);
    let correlation = normalized_cross_correlation(&pattern, &goal);
    Ok(DesignResult { doe, errors, pattern, correlation })
}

/// Far-field intensity of a random phase-only DOE: a target the forward model
/// can reach exactly.
pub fn reachable_target(optics: &OpticsConfig, seed: u64) -> Result<IlluminationPattern<f64>> {
    let laser = unit_laser(optics)?;
    let dft = CenteredDft::<f64>::new(optics.n);
    let h = crate::rng::uniform_grid((optics.n, optics.n), 0.0, 1.0, seed);
    let (re, im) = far_field(&dft, &laser.amplitude(), &h);
    IlluminationPattern::new(intensity(&re, &im), optics.pitch_u, optics.wavelength, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> OpticsConfig {
        OpticsConfig::new(n, 1.5)
    }

    #[test]
    fn rejects_empty_and_negative_targets() {
        let c = cfg(8);
        let zero = IlluminationPattern::new(Array2::zeros((8, 8)), c.pitch_u, c.wavelength, false).unwrap();
        let opts = DesignOptions::new(DesignMethod::IterativeFft, 3);
        assert!(matches!(design_doe_for_target(&zero, &c, &opts), Err(Error::InvalidTarget(_))));
        let mut neg = Array2::from_elem((8, 8), 1.0);
        neg[[0, 0]] = -1.0;
        assert!(matches!(normalize_target(&neg), Err(Error::InvalidTarget(_))));
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let c = cfg(16);
        let target = reachable_target(&c, 1).unwrap();
        for method in [DesignMethod::IterativeFft, DesignMethod::Gradient] {
            let mut opts = DesignOptions::new(method, 0);
            opts.seed = 5;
            let r = design_doe_for_target(&target, &c, &opts).unwrap();
            let init: Array2<f64> = crate::rng::uniform_grid((16, 16), 0.0, 1.0, 5);
            for (a, b) in r.doe.normalized().iter().zip(init.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(r.errors.len(), 1);
        }
    }

    #[test]
    fn projection_keeps_unit_energy() {
        let c = cfg(16);
        let goal = normalize_target(reachable_target(&c, 2).unwrap().intensity()).unwrap();
        let amp = unit_laser(&c).unwrap().amplitude();
        let dft = CenteredDft::new(16);
        let mut h = crate::rng::uniform_grid((16, 16), 0.0, 1.0, 3);
        for _ in 0..5 {
            let (next, energy) = gs_update(&dft, &amp, &h, &goal.mapv(f64::sqrt));
            assert!((energy - 1.0).abs() < 1e-12);
            let (re, im) = far_field(&dft, &amp, &next);
            assert!((intensity(&re, &im).sum() - 1.0).abs() < 1e-12);
            h = next;
        }
    }

    #[test]
    fn iterative_error_never_increases() {
        let c = cfg(32);
        let target = reachable_target(&c, 4).unwrap();
        let r = design_doe_for_target(&target, &c, &DesignOptions::new(DesignMethod::IterativeFft, 40)).unwrap();
        for w in r.errors.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
    }

    #[test]
    fn gradient_reduces_error() {
        let c = cfg(16);
        let target = reachable_target(&c, 6).unwrap();
        let r = design_doe_for_target(&target, &c, &DesignOptions::new(DesignMethod::Gradient, 60)).unwrap();
        assert!(r.errors.last().unwrap() < &(0.5 * r.errors[0]));
    }

    #[test]
    fn quantized_output_on_levels() {
        let c = cfg(16);
        let target = reachable_target(&c, 7).unwrap();
        let mut opts = DesignOptions::new(DesignMethod::IterativeFft, 5);
        opts.quantize = true;
        let r = design_doe_for_target(&target, &c, &opts).unwrap();
        for t in r.doe.normalized().iter() {
            let k = t * c.levels as f64;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn ncc_limits() {
        let a = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64);
        assert!((normalized_cross_correlation(&a, &a) - 1.0).abs() < 1e-12);
        assert!((normalized_cross_correlation(&a, &(-&a)) + 1.0).abs() < 1e-12);
        assert_eq!(normalized_cross_correlation(&a, &Array2::ones((4, 4))), 0.0);
    }
}
