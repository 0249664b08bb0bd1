//! Run configuration files.
//!
//! TOML with six sections plus two top-level keys. Unknown keys are
//! rejected. Example:
//!
//! ```toml
//! seed = 0
//! output_dir = "out"
//!
//! [rig]
//! focal_f = 6e-3
//! pixel_p = 5.3e-6
//! baseline_wide = 8e-3
//! baseline_narrow = 4e-3
//!
//! [optics]
//! n = 32
//! pitch_u = 3.125e-5
//! wavelength = 850e-9
//! eta = 1.5
//!
//! [environment]
//! preset = "indoor"        # indoor | outdoor | generic | custom
//! noise_sigma = 0.02       # scalar, or a list to draw from
//! # alpha = [0.0, 0.5]     # custom only: scalar or [lo, hi]
//! # beta = 1.0
//!
//! [matcher]
//! mode = "learned-linear"  # identity | patch | learned-linear
//! temperature = 8.0
//!
//! [optimizer]
//! iterations = 200
//! lr_doe = 0.02
//!
//! [scenes]
//! kind = "two-plane"       # or "dataset" with path = "..."
//! count = 5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{FeatureMode, MatcherParams};
use crate::optimize::{EnvironmentPreset, Hyper, OpticsConfig, ParamSpec, PresetName};
use crate::scenesim::{
    generate_toy_scene, ingest_dataset, random_two_plane, CameraRig, DatasetOptions, SceneSample, VALID_DEPTH_RANGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrRange {
    Scalar(f64),
    Range([f64; 2]),
}

impl From<ScalarOrRange> for ParamSpec {
    fn from(v: ScalarOrRange) -> Self {
        match v {
            ScalarOrRange::Scalar(x) => ParamSpec::Fixed(x),
            ScalarOrRange::Range(r) => ParamSpec::Range(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrSet {
    Scalar(f64),
    Set(Vec<f64>),
}

impl From<ScalarOrSet> for ParamSpec {
    fn from(v: ScalarOrSet) -> Self {
        match v {
            ScalarOrSet::Scalar(x) => ParamSpec::Fixed(x),
            ScalarOrSet::Set(s) => ParamSpec::Set(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub preset: PresetName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<ScalarOrRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<ScalarOrRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<ScalarOrSet>,
}

impl EnvironmentConfig {
    pub fn named(preset: PresetName, noise_sigma: f64) -> Self {
        Self { preset, alpha: None, beta: None, noise_sigma: Some(ScalarOrSet::Scalar(noise_sigma)) }
    }

    pub fn to_preset(&self) -> Result<EnvironmentPreset> {
        let preset = if self.preset == PresetName::Custom {
            match (self.alpha, self.beta) {
                (Some(a), Some(b)) => EnvironmentPreset::custom(
                    a.into(),
                    b.into(),
                    self.noise_sigma.clone().map_or(ParamSpec::Fixed(crate::optimize::DEFAULT_NOISE_SIGMA), Into::into),
                )?,
                _ => return Err(Error::InvalidConfig("a custom environment needs alpha and beta".into())),
            }
        } else {
            if self.alpha.is_some() || self.beta.is_some() {
                return Err(Error::InvalidConfig(format!(
                    "alpha/beta are fixed by the `{}` preset; use preset = \"custom\"",
                    self.preset
                )));
            }
            let p = EnvironmentPreset::named(self.preset)?;
            match &self.noise_sigma {
                Some(n) => p.with_noise(n.clone().into()),
                None => p,
            }
        };
        preset.validate()?;
        Ok(preset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    pub mode: FeatureMode,
    /// Wide-baseline candidates; derived from the rig when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_disparity: Option<usize>,
    pub window: usize,
    pub temperature: f64,
    pub patch_size: usize,
    /// Learned-linear encoder width and kernel size.
    pub channels: usize,
    pub kernel: usize,
    pub standardize: bool,
    pub trinocular: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::LearnedLinear,
            max_disparity: None,
            window: 7,
            temperature: 8.0,
            patch_size: 3,
            channels: 4,
            kernel: 3,
            standardize: true,
            trinocular: true,
        }
    }
}

/// Candidates covering the nearest depth the far-field model supports.
pub fn default_max_disparity(rig: &CameraRig<f64>) -> usize {
    rig.disparity_at(VALID_DEPTH_RANGE.0).ceil() as usize + 1
}

impl MatcherConfig {
    pub fn build(&self, rig: &CameraRig<f64>, seed: u64) -> MatcherParams<f64> {
        let dmax = self.max_disparity.unwrap_or_else(|| default_max_disparity(rig));
        let mut p = match self.mode {
            FeatureMode::LearnedLinear => MatcherParams::learned(dmax, self.channels, self.kernel, seed),
            mode => MatcherParams::new(mode, dmax),
        };
        p.window = self.window;
        p.temperature = self.temperature;
        p.patch_size = self.patch_size;
        p.standardize = self.standardize;
        p.trinocular = self.trinocular;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TwoPlane,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub count: usize,
    /// Seed of the first procedural scene; scene `i` uses `seed + i`.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { kind: SceneKind::TwoPlane, count: 5, seed: 0, path: None }
    }
}

impl SceneConfig {
    /// Scenes at `n×n` for `rig`.
    pub fn load(&self, rig: &CameraRig<f64>, n: usize) -> Result<Vec<SceneSample<f64>>> {
        match self.kind {
            SceneKind::TwoPlane => (0..self.count as u64)
                .map(|i| generate_toy_scene(&random_two_plane(n, n, self.seed + i), rig, n, n))
                .collect(),
            SceneKind::Dataset => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("scenes.kind = \"dataset\" needs scenes.path".into()))?;
                let opts = DatasetOptions { size: Some((n, n)), narrow_fraction: rig.narrow_fraction(), ..Default::default() };
                let scenes: Vec<_> = ingest_dataset(path, opts)?.take(self.count).collect();
                if scenes.is_empty() {
                    return Err(Error::Missing { path: path.clone(), hint: "no loadable <id>_left.pfm samples".into() });
                }
                Ok(scenes)
            }
        }
    }
}

/// Optimizer section; mirrors [`Hyper`] plus checkpoint cadence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_doe: f64,
    pub lr_matcher: f64,
    pub gamma: f64,
    /// Write a checkpoint every this many iterations; 0 only at the end.
    pub checkpoint_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            iterations: h.iterations,
            batch_size: h.batch_size,
            lr_doe: h.lr_doe,
            lr_matcher: h.lr_matcher,
            gamma: h.gamma,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub rig: CameraRig<f64>,
    pub optics: OpticsConfig,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub scenes: SceneConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Missing { path: path.to_path_buf(), hint: "configuration file not found".into() }
            }
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.optics.validate()?;
        self.environment.to_preset()?;
        self.hyper().validate()?;
        let m = self.matcher.build(&self.rig, self.seed);
        m.validate(self.optics.n)?;
        if self.scenes.count == 0 {
            return Err(Error::InvalidConfig("scenes.count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn hyper(&self) -> Hyper {
        let o = &self.optimizer;
        Hyper {
            iterations: o.iterations,
            batch_size: o.batch_size,
            lr_doe: o.lr_doe,
            lr_matcher: o.lr_matcher,
            seed: self.seed,
            gamma: o.gamma,
        }
    }

    pub fn matcher_params(&self) -> MatcherParams<f64> {
        self.matcher.build(&self.rig, derive_matcher_seed(self.seed))
    }
}

fn derive_matcher_seed(seed: u64) -> u64 {
    crate::rng::derive_seed(seed, 0x3a7c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[rig]
focal_f = 6e-3
pixel_p = 5.3e-6
baseline_wide = 8e-3
baseline_narrow = 4e-3

[optics]
n = 32
pitch_u = 3.125e-5
wavelength = 850e-9
eta = 1.5

[environment]
preset = "indoor"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.optics.levels, 16);
        assert_eq!(c.matcher.mode, FeatureMode::LearnedLinear);
        assert_eq!(c.matcher_params().max_disparity, 24);
        assert_eq!(c.scenes.count, 5);
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        for extra in ["colour = 1\n", "[optimizer]\nlearning_rate = 0.1\n", "[matcher]\nmode = \"cnn\"\n"] {
            let text = format!("{extra}{MINIMAL}");
            let text = if extra.starts_with('[') { format!("{MINIMAL}{extra}") } else { text };
            assert!(matches!(RunConfig::parse(&text), Err(Error::InvalidConfig(_))), "{extra}");
        }
    }

    #[test]
    fn eta_is_required() {
        let text = MINIMAL.replace("eta = 1.5\n", "");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn environment_specs() {
        let custom = MINIMAL.replace(
            "preset = \"indoor\"",
            "preset = \"custom\"\nalpha = [0.0, 0.3]\nbeta = 1.0\nnoise_sigma = [0.02, 0.1, 0.6]",
        );
        let p = RunConfig::parse(&custom).unwrap().environment.to_preset().unwrap();
        assert_eq!(p.alpha, ParamSpec::Range([0.0, 0.3]));
        assert_eq!(p.noise_sigma, ParamSpec::Set(vec![0.02, 0.1, 0.6]));
        let clash = MINIMAL.replace("preset = \"indoor\"", "preset = \"indoor\"\nalpha = 0.3");
        assert!(RunConfig::parse(&clash).is_err());
        let empty = MINIMAL.replace("preset = \"indoor\"", "preset = \"custom\"\nalpha = [0.5, 0.1]\nbeta = 1.0");
        assert!(RunConfig::parse(&empty).is_err());
    }

    #[test]
    fn physical_quantities_positive() {
        let bad = MINIMAL.replace("pixel_p = 5.3e-6", "pixel_p = -5.3e-6");
        assert!(RunConfig::parse(&bad).is_err());
    }
}
