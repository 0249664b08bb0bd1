use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::wavefield::fft::CenteredDft;

/// Sampled complex wave on an `N×N` grid with pitch `pitch_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField<T: Real> {
    re: Array2<T>,
    im: Array2<T>,
    pitch_u: T,
    wavelength: T,
}

impl<T: Real> ComplexField<T> {
    pub fn new(re: Array2<T>, im: Array2<T>, pitch_u: T, wavelength: T) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::Shape(format!(
                "real part {:?} vs imaginary part {:?}",
                re.dim(),
                im.dim()
            )));
        }
        let (h, w) = re.dim();
        if h != w || h < 2 {
            return Err(Error::Shape(format!("field must be square with N >= 2, got {h}x{w}")));
        }
        if !(pitch_u > T::zero()) || !(wavelength > T::zero()) {
            return Err(Error::InvalidConfig(
                "pitch and wavelength must be positive".into(),
            ));
        }
        Ok(Self { re, im, pitch_u, wavelength })
    }

    pub fn from_polar(amplitude: &Array2<T>, phase: &Array2<T>, pitch_u: T, wavelength: T) -> Result<Self> {
        if amplitude.dim() != phase.dim() {
            return Err(Error::Shape("amplitude and phase differ in shape".into()));
        }
        let re = Zip::from(amplitude).and(phase).map_collect(|&a, &p| a * p.cos());
        let im = Zip::from(amplitude).and(phase).map_collect(|&a, &p| a * p.sin());
        Self::new(re, im, pitch_u, wavelength)
    }

    /// Collimated laser: uniform amplitude, zero phase. With `circular_aperture`
    /// the amplitude is zeroed outside the inscribed disc.
    pub fn collimated(n: usize, pitch_u: T, wavelength: T, amplitude: T, circular_aperture: bool) -> Result<Self> {
        let c = T::of(n as f64 / 2.0);
        let r2 = c * c;
        let re = Array2::from_shape_fn((n, n), |(y, x)| {
            if circular_aperture {
                let dy = T::of_usize(y) + T::of(0.5) - c;
                let dx = T::of_usize(x) + T::of(0.5) - c;
                if dx * dx + dy * dy > r2 {
                    return T::zero();
                }
            }
            amplitude
        });
        Self::new(re, Array2::zeros((n, n)), pitch_u, wavelength)
    }

    pub fn n(&self) -> usize {
        self.re.nrows()
    }
    pub fn re(&self) -> &Array2<T> {
        &self.re
    }
    pub fn im(&self) -> &Array2<T> {
        &self.im
    }
    pub fn pitch_u(&self) -> T {
        self.pitch_u
    }
    pub fn wavelength(&self) -> T {
        self.wavelength
    }

    pub fn amplitude(&self) -> Array2<T> {
        Zip::from(&self.re).and(&self.im).map_collect(|&r, &i| r.hypot(i))
    }

    pub fn phase(&self) -> Array2<T> {
        Zip::from(&self.re).and(&self.im).map_collect(|&r, &i| i.atan2(r))
    }

    pub fn power(&self) -> T {
        Zip::from(&self.re)
            .and(&self.im)
            .fold(T::zero(), |acc, &r, &i| acc + r * r + i * i)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }
}

/// Height map of a diffractive optical element.
///
/// Heights are stored wrapped into `[0, max_height)` with
/// `max_height = wavelength / (eta - 1)`, the height that delays the phase by
/// exactly one wave.
#[derive(Debug, Clone, PartialEq)]
pub struct DOEProfile<T: Real> {
    height: Array2<T>,
    eta: T,
    wavelength: T,
    pitch_u: T,
    levels: usize,
}

impl<T: Real> DOEProfile<T> {
    pub fn new(height: Array2<T>, eta: T, wavelength: T, pitch_u: T, levels: usize) -> Result<Self> {
        if !(eta > T::one()) {
            return Err(Error::InvalidMaterial(eta.as_f64()));
        }
        if !(wavelength > T::zero()) || !(pitch_u > T::zero()) {
            return Err(Error::InvalidConfig("wavelength and pitch must be positive".into()));
        }
        if levels < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 quantization levels, got {levels}")));
        }
        let (h, w) = height.dim();
        if h != w || h < 2 {
            return Err(Error::Shape(format!("DOE must be square with N >= 2, got {h}x{w}")));
        }
        if height.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DOE heights".into()));
        }
        let max = wavelength / (eta - T::one());
        let height = height.mapv(|v| wrap_into(v, max));
        Ok(Self { height, eta, wavelength, pitch_u, levels })
    }

    /// Builds a profile from heights expressed as fractions of `max_height`.
    pub fn from_normalized(t: &Array2<T>, eta: T, wavelength: T, pitch_u: T, levels: usize) -> Result<Self> {
        if !(eta > T::one()) {
            return Err(Error::InvalidMaterial(eta.as_f64()));
        }
        let max = wavelength / (eta - T::one());
        Self::new(t.mapv(|v| v * max), eta, wavelength, pitch_u, levels)
    }

    pub fn n(&self) -> usize {
        self.height.nrows()
    }
    pub fn height(&self) -> &Array2<T> {
        &self.height
    }
    pub fn eta(&self) -> T {
        self.eta
    }
    pub fn wavelength(&self) -> T {
        self.wavelength
    }
    pub fn pitch_u(&self) -> T {
        self.pitch_u
    }
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn max_height(&self) -> T {
        self.wavelength / (self.eta - T::one())
    }

    /// Heights as fractions of one wave of delay, in `[0, 1)`.
    pub fn normalized(&self) -> Array2<T> {
        let max = self.max_height();
        self.height.mapv(|h| h / max)
    }

    /// Phase delay `2π(η−1)h/λ` per sample.
    pub fn phase_delay(&self) -> Array2<T> {
        let k = T::TAU() * (self.eta - T::one()) / self.wavelength;
        self.height.mapv(|h| k * h)
    }

    pub fn with_levels(mut self, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 quantization levels, got {levels}")));
        }
        self.levels = levels;
        Ok(self)
    }
}

pub(crate) fn wrap_into<T: Real>(v: T, period: T) -> T {
    let mut r = v % period;
    if r < T::zero() {
        r += period;
    }
    if r >= period {
        r -= period;
    }
    r
}

/// Far-field intensity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationPattern<T: Real> {
    intensity: Array2<T>,
    pitch_u: T,
    wavelength: T,
    camera_resampled: bool,
}

impl<T: Real> IlluminationPattern<T> {
    pub fn new(intensity: Array2<T>, pitch_u: T, wavelength: T, camera_resampled: bool) -> Result<Self> {
        if intensity.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::NonFinite("pattern intensities must be finite and non-negative".into()));
        }
        Ok(Self { intensity, pitch_u, wavelength, camera_resampled })
    }

    /// A pattern already expressed on the camera grid, e.g. loaded from disk.
    pub fn on_camera_grid(intensity: Array2<T>) -> Result<Self> {
        Self::new(intensity, T::one(), T::one(), true)
    }

    pub fn intensity(&self) -> &Array2<T> {
        &self.intensity
    }
    pub fn into_intensity(self) -> Array2<T> {
        self.intensity
    }
    pub fn is_camera_resampled(&self) -> bool {
        self.camera_resampled
    }
    pub fn pitch_u(&self) -> T {
        self.pitch_u
    }
    pub fn wavelength(&self) -> T {
        self.wavelength
    }
    pub fn dim(&self) -> (usize, usize) {
        self.intensity.dim()
    }

    /// Physical sample pitch `v = λz/(uN)` of the native pattern at depth `z`.
    pub fn native_pitch_at(&self, z: T) -> T {
        let n = T::of_usize(self.intensity.ncols());
        self.wavelength * z / (self.pitch_u * n)
    }

    pub fn total(&self) -> T {
        self.intensity.sum()
    }
}

fn check_doe_matches<T: Real>(field: &ComplexField<T>, doe: &DOEProfile<T>) -> Result<()> {
    if field.n() != doe.n() {
        return Err(Error::Shape(format!("field is {0}x{0}, DOE is {1}x{1}", field.n(), doe.n())));
    }
    let rel = ((field.pitch_u() - doe.pitch_u()) / field.pitch_u()).abs();
    if rel > T::of(1e-9) {
        return Err(Error::Shape(format!(
            "pitch mismatch: field {} vs DOE {}",
            field.pitch_u(),
            doe.pitch_u()
        )));
    }
    Ok(())
}

/// Adds the DOE phase delay to the field; amplitudes are untouched.
pub fn apply_doe<T: Real>(field: &ComplexField<T>, doe: &DOEProfile<T>) -> Result<ComplexField<T>> {
    if !(doe.eta() > T::one()) {
        return Err(Error::InvalidMaterial(doe.eta().as_f64()));
    }
    check_doe_matches(field, doe)?;
    let k = T::TAU() * (doe.eta() - T::one()) / field.wavelength();
    let mut re = field.re().clone();
    let mut im = field.im().clone();
    Zip::from(&mut re)
        .and(&mut im)
        .and(doe.height())
        .for_each(|r, i, &h| {
            let (s, c) = (k * h).sin_cos();
            let (r0, i0) = (*r, *i);
            *r = r0 * c - i0 * s;
            *i = r0 * s + i0 * c;
        });
    ComplexField::new(re, im, field.pitch_u(), field.wavelength())
}

/// Fraunhofer propagation: centered unitary 2D DFT of the field.
pub fn propagate_far_field<T: Real>(field: &ComplexField<T>) -> Result<ComplexField<T>> {
    if !field.is_finite() {
        return Err(Error::NonFinite("input field to far-field propagation".into()));
    }
    let dft = CenteredDft::new(field.n());
    let (re, im) = dft.apply(field.re(), field.im(), true);
    ComplexField::new(re, im, field.pitch_u(), field.wavelength())
}

pub fn field_intensity<T: Real>(field: &ComplexField<T>) -> IlluminationPattern<T> {
    let intensity = Zip::from(field.re()).and(field.im()).map_collect(|&r, &i| r * r + i * i);
    IlluminationPattern {
        intensity,
        pitch_u: field.pitch_u(),
        wavelength: field.wavelength(),
        camera_resampled: false,
    }
}

/// Snaps every height to the nearest of `levels` uniform steps over
/// `[0, max_height)`. Heights closer to `max_height` than to the top level
/// wrap to 0, which is the same phase.
pub fn quantize_heights<T: Real>(doe: &DOEProfile<T>) -> DOEProfile<T> {
    let max = doe.max_height();
    let levels = T::of_usize(doe.levels());
    let step = max / levels;
    let height = doe.height().mapv(|h| {
        let k = (h / step).round();
        let k = if k >= levels { T::zero() } else { k };
        k * step
    });
    DOEProfile { height, ..doe.clone() }
}

/// Blends the diffracted pattern with an undiffracted center spot carrying the
/// same total energy: `(1-κ)·P + κ·E·δ_center`.
pub fn add_zeroth_order<T: Real>(pattern: &IlluminationPattern<T>, kappa: T) -> IlluminationPattern<T> {
    if kappa == T::zero() {
        return pattern.clone();
    }
    let total = pattern.total();
    let mut intensity = pattern.intensity.mapv(|v| (T::one() - kappa) * v);
    let (h, w) = intensity.dim();
    intensity[[h / 2, w / 2]] += kappa * total;
    IlluminationPattern { intensity, ..pattern.clone() }
}
