//! Imaging environments the pattern is optimized for.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar parameter: fixed, drawn uniformly from a range, or picked from a
/// set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Fixed(f64),
    Range([f64; 2]),
    Set(Vec<f64>),
}

impl ParamSpec {
    pub fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            ParamSpec::Fixed(v) => v.is_finite() && *v >= 0.0,
            ParamSpec::Range([lo, hi]) => lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi,
            ParamSpec::Set(vs) => !vs.is_empty() && vs.iter().all(|v| v.is_finite() && *v >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{what}: empty or invalid specification {self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ParamSpec::Fixed(v) => *v,
            ParamSpec::Range([lo, hi]) if lo == hi => *lo,
            ParamSpec::Range([lo, hi]) => rng.random_range(*lo..*hi),
            ParamSpec::Set(vs) => vs[rng.random_range(0..vs.len())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Indoor,
    Outdoor,
    Generic,
    Custom,
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(Self::Indoor),
            "outdoor" => Ok(Self::Outdoor),
            "generic" => Ok(Self::Generic),
            "custom" => Ok(Self::Custom),
            other => Err(Error::InvalidConfig(format!("unknown environment preset `{other}`"))),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Indoor => "indoor",
            Self::Outdoor => "outdoor",
            Self::Generic => "generic",
            Self::Custom => "custom",
        })
    }
}

/// Ambient level `alpha`, pattern gain `beta` and sensor noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPreset {
    pub name: PresetName,
    pub alpha: ParamSpec,
    pub beta: ParamSpec,
    pub noise_sigma: ParamSpec,
}

/// Noise level used by the named presets unless overridden.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.02;

impl EnvironmentPreset {
    pub fn named(name: PresetName) -> Result<Self> {
        let (alpha, beta) = match name {
            PresetName::Indoor => (ParamSpec::Fixed(0.0), ParamSpec::Fixed(1.5)),
            PresetName::Outdoor => (ParamSpec::Fixed(0.5), ParamSpec::Fixed(0.2)),
            PresetName::Generic => (ParamSpec::Range([0.0, 0.5]), ParamSpec::Range([0.2, 1.5])),
            PresetName::Custom => {
                return Err(Error::InvalidConfig("a custom environment needs explicit alpha/beta/noise".into()))
            }
        };
        Ok(Self { name, alpha, beta, noise_sigma: ParamSpec::Fixed(DEFAULT_NOISE_SIGMA) })
    }

    pub fn indoor() -> Self {
        Self::named(PresetName::Indoor).expect("named preset")
    }

    pub fn outdoor() -> Self {
        Self::named(PresetName::Outdoor).expect("named preset")
    }

    pub fn generic() -> Self {
        Self::named(PresetName::Generic).expect("named preset")
    }

    pub fn custom(alpha: ParamSpec, beta: ParamSpec, noise_sigma: ParamSpec) -> Result<Self> {
        let p = Self { name: PresetName::Custom, alpha, beta, noise_sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn with_noise(mut self, noise_sigma: ParamSpec) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        self.noise_sigma.validate("noise_sigma")
    }

    /// One draw of `(alpha, beta, noise_sigma)`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (f64, f64, f64) {
        (self.alpha.sample(rng), self.beta.sample(rng), self.noise_sigma.sample(rng))
    }
}
