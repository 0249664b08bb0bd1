//! End-to-end training of the DOE heights and the matcher encoders.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::AdjointTape;
use crate::error::{Error, Result};
use crate::io::write_pfm;
use crate::matcher::{EncoderValues, FeatureMode, MatcherParams};
use crate::optimize::adam::Adam;
use crate::optimize::pipeline::{scene_loss_on, Optics, SceneTerm};
use crate::optimize::presets::EnvironmentPreset;
use crate::rng::{derive_seed, rng_for};
use crate::scenesim::{CameraRig, CaptureConfig, SceneSample};

/// Seed stream of the initial DOE heights.
const INIT_STREAM: u64 = 0x1d0e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub iterations: usize,
    /// Scenes per iteration; the whole dataset when at least its size.
    pub batch_size: usize,
    pub lr_doe: f64,
    pub lr_matcher: f64,
    pub seed: u64,
    /// Sensor exposure, held fixed.
    pub gamma: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { iterations: 200, batch_size: 5, lr_doe: 0.02, lr_matcher: 0.03, seed: 0, gamma: 1.0 }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        for (name, v) in [("lr_doe", self.lr_doe), ("lr_matcher", self.lr_matcher)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// Loss of one iteration and the environment it was drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub noise_sigma: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    /// Normalized DOE heights in `[0, 1)`.
    pub heights: Array2<f64>,
    pub matcher: MatcherParams<f64>,
    pub doe_moments: Adam,
    pub matcher_moments: Adam,
    /// Completed iterations; equals `history.len()`.
    pub iteration: usize,
    pub history: Vec<LossRecord>,
    pub seed: u64,
}

impl OptimState {
    /// Moving average of the loss over `window` iterations, one value per
    /// full window.
    pub fn smoothed_losses(&self, window: usize) -> Vec<f64> {
        smooth(&self.history.iter().map(|r| r.loss).collect::<Vec<_>>(), window)
    }
}

pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    if values.len() < w {
        return Vec::new();
    }
    values.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn matcher_values(params: &MatcherParams<f64>) -> Vec<f64> {
    if params.mode == FeatureMode::LearnedLinear {
        let mut v = params.camera.to_flat();
        v.extend(params.illumination.to_flat());
        v
    } else {
        Vec::new()
    }
}

fn set_matcher_values(params: &mut MatcherParams<f64>, values: &[f64]) -> Result<()> {
    if params.mode != FeatureMode::LearnedLinear {
        return Ok(());
    }
    let split = params.camera.num_values();
    params.camera.set_flat(&values[..split])?;
    params.illumination.set_flat(&values[split..])
}

/// Dataset, optics, environment and hyperparameters of one training run.
pub struct Trainer<'a> {
    pub dataset: &'a [SceneSample<f64>],
    masks: Vec<Array2<bool>>,
    pub rig: CameraRig<f64>,
    pub optics: Optics<f64>,
    pub preset: EnvironmentPreset,
    pub hyper: Hyper,
    /// Where to write the diagnostic dump if the loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

struct SceneGrad {
    loss: f64,
    heights: ArrayD<f64>,
    matcher: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        dataset: &'a [SceneSample<f64>],
        rig: CameraRig<f64>,
        optics: Optics<f64>,
        preset: EnvironmentPreset,
        hyper: Hyper,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidScene("training set is empty".into()));
        }
        rig.validate()?;
        preset.validate()?;
        hyper.validate()?;
        let n = optics.n();
        let mut masks = Vec::with_capacity(dataset.len());
        for (i, s) in dataset.iter().enumerate() {
            s.validate()?;
            if s.dim() != (n, n) {
                return Err(Error::Shape(format!("scene {i} is {:?}, the DOE grid is {n}x{n}", s.dim())));
            }
            let m = s.valid_mask(1.0);
            if !m.iter().any(|&v| v) {
                return Err(Error::InvalidScene(format!("scene {i} has no valid pixels")));
            }
            masks.push(m);
        }
        Ok(Self { dataset, masks, rig, optics, preset, hyper, dump_dir: None })
    }

    pub fn with_dump_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dump_dir = Some(dir.into());
        self
    }

    /// Random heights and fresh moment buffers.
    pub fn init_state(&self, matcher: MatcherParams<f64>) -> Result<OptimState> {
        matcher.validate(self.optics.n())?;
        let seed = self.hyper.seed;
        let heights = self.optics.random_heights(derive_seed(seed, INIT_STREAM));
        let n_doe = heights.len();
        let n_matcher = matcher_values(&matcher).len();
        Ok(OptimState {
            heights,
            matcher,
            doe_moments: Adam::new(n_doe, self.hyper.lr_doe),
            matcher_moments: Adam::new(n_matcher, self.hyper.lr_matcher),
            iteration: 0,
            history: Vec::new(),
            seed,
        })
    }

    fn scene_grad(&self, state: &OptimState, index: usize, capture: CaptureConfig<f64>) -> Result<SceneGrad> {
        let tape = AdjointTape::new();
        let t = tape.leaf(state.heights.clone().into_dyn())?;
        let learned = state.matcher.mode == FeatureMode::LearnedLinear;
        let (cam, ill) = if learned {
            (
                EncoderValues::leaves(&tape, &state.matcher.camera)?,
                EncoderValues::leaves(&tape, &state.matcher.illumination)?,
            )
        } else {
            (
                EncoderValues::constant(&state.matcher.camera),
                EncoderValues::constant(&state.matcher.illumination),
            )
        };
        let term = SceneTerm { scene: &self.dataset[index], mask: &self.masks[index], capture };
        let loss = scene_loss_on(&tape, &t, &cam, &ill, &self.optics, &state.matcher, &self.rig, &term)?;
        let mut leaves = vec![&t];
        if learned {
            leaves.extend(cam.values());
            leaves.extend(ill.values());
        }
        let mut grads = tape.backward(&loss, &leaves)?.into_iter();
        let heights = grads.next().expect("heights gradient");
        let matcher = grads.flat_map(|g| g.into_iter()).collect();
        Ok(SceneGrad { loss: loss.scalar().expect("scalar loss"), heights, matcher })
    }

    /// One iteration: sample environment and batch, accumulate gradients in
    /// batch order, update both parameter groups.
    pub fn step(&self, state: &mut OptimState) -> Result<()> {
        let it = state.iteration;
        let mut rng = rng_for(derive_seed(state.seed, it as u64));
        let (alpha, beta, noise_sigma) = self.preset.sample(&mut rng);
        let batch: Vec<usize> = if self.hyper.batch_size >= self.dataset.len() {
            (0..self.dataset.len()).collect()
        } else {
            sample(&mut rng, self.dataset.len(), self.hyper.batch_size).into_vec()
        };
        let captures: Vec<CaptureConfig<f64>> = batch
            .iter()
            .map(|_| CaptureConfig::new(self.hyper.gamma, alpha, beta, noise_sigma, rng.random()))
            .collect::<Result<_>>()?;

        let results: Vec<Result<SceneGrad>> = batch
            .par_iter()
            .zip(captures.par_iter())
            .map(|(&i, &c)| self.scene_grad(state, i, c))
            .collect();
        let k = batch.len() as f64;
        let mut loss = 0.0;
        let mut g_doe = vec![0.0; state.heights.len()];
        let mut g_matcher = vec![0.0; state.matcher_moments.len()];
        let mut scene_losses = Vec::with_capacity(batch.len());
        for r in results {
            let r = match r {
                Ok(r) => r,
                // a non-finite forward value counts as a diverged loss
                Err(Error::NonFinite(_)) => SceneGrad { loss: f64::NAN, heights: ArrayD::zeros(vec![0]), matcher: Vec::new() },
                Err(e) => return Err(e),
            };
            loss += r.loss / k;
            scene_losses.push(r.loss);
            g_doe.iter_mut().zip(r.heights.iter()).for_each(|(a, b)| *a += b / k);
            g_matcher.iter_mut().zip(r.matcher.iter()).for_each(|(a, b)| *a += b / k);
        }
        let finite = loss.is_finite() && g_doe.iter().chain(g_matcher.iter()).all(|v| v.is_finite());
        if !finite {
            let reason = format!("loss {loss} on scenes {batch:?}");
            if let Some(dir) = &self.dump_dir {
                dump_divergence(dir, state, &batch, &scene_losses, (alpha, beta, noise_sigma))?;
            }
            return Err(Error::Diverged { iteration: it, reason });
        }

        state.history.push(LossRecord { iteration: it, loss, alpha, beta, noise_sigma });
        let mut h: Vec<f64> = state.heights.iter().copied().collect();
        state.doe_moments.step(&mut h, &g_doe);
        for (dst, v) in state.heights.iter_mut().zip(h) {
            *dst = v.rem_euclid(1.0);
            if *dst >= 1.0 {
                *dst = 0.0;
            }
        }
        if !g_matcher.is_empty() {
            let mut m = matcher_values(&state.matcher);
            state.matcher_moments.step(&mut m, &g_matcher);
            set_matcher_values(&mut state.matcher, &m)?;
        }
        state.iteration += 1;
        Ok(())
    }

    /// Runs until `state.iteration == until`.
    pub fn run_until(&self, state: &mut OptimState, until: usize) -> Result<()> {
        while state.iteration < until {
            self.step(state)?;
            if state.iteration % 20 == 0 {
                log::info!("iteration {} loss {:.4}", state.iteration, state.history.last().map_or(f64::NAN, |r| r.loss));
            }
        }
        Ok(())
    }
}

fn dump_divergence(
    dir: &Path,
    state: &OptimState,
    batch: &[usize],
    losses: &[f64],
    env: (f64, f64, f64),
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_pfm(dir.join("diverged_doe.pfm"), &state.heights)?;
    let mut text = String::new();
    let _ = writeln!(text, "iteration {}", state.iteration);
    let _ = writeln!(text, "alpha {} beta {} noise_sigma {}", env.0, env.1, env.2);
    for (i, l) in batch.iter().zip(losses) {
        let _ = writeln!(text, "scene {i} loss {l}");
    }
    std::fs::write(dir.join("diverged_batch.txt"), text)?;
    Ok(())
}

/// Trains from a fresh state for `hyper.iterations` iterations.
pub fn joint_optimize(
    dataset: &[SceneSample<f64>],
    rig: CameraRig<f64>,
    optics: Optics<f64>,
    preset: EnvironmentPreset,
    matcher: MatcherParams<f64>,
    hyper: Hyper,
) -> Result<OptimState> {
    let trainer = Trainer::new(dataset, rig, optics, preset, hyper)?;
    let mut state = trainer.init_state(matcher)?;
    trainer.run_until(&mut state, hyper.iterations)?;
    Ok(state)
}

/// Writes `iteration,loss,alpha,beta,noise_sigma` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let mut text = String::from("iteration,loss,alpha,beta,noise_sigma\n");
    for r in history {
        let _ = writeln!(text, "{},{:e},{},{},{}", r.iteration, r.loss, r.alpha, r.beta, r.noise_sigma);
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("iteration,loss,alpha,beta,noise_sigma") {
        return Err(Error::format(path, "missing loss CSV header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::format(path, format!("malformed row `{l}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                iteration: f[0].trim().parse().map_err(|_| bad())?,
                loss: num(f[1])?,
                alpha: num(f[2])?,
                beta: num(f[3])?,
                noise_sigma: num(f[4])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::pipeline::OpticsConfig;
    use crate::optimize::presets::ParamSpec;
    use crate::scenesim::{generate_toy_scene, random_two_plane};

    fn setup(n: usize, k: u64) -> (Vec<SceneSample<f64>>, CameraRig<f64>, Optics<f64>) {
        let rig = CameraRig::centered(6e-3, 5.3e-6, 6e-3);
        let data = (0..k).map(|s| generate_toy_scene(&random_two_plane(n, n, s), &rig, n, n).unwrap()).collect();
        let optics = Optics::new(OpticsConfig::new(n, 1.5), &rig).unwrap();
        (data, rig, optics)
    }

    fn matcher() -> MatcherParams<f64> {
        let mut m = MatcherParams::learned(10, 2, 3, 3);
        m.window = 5;
        m
    }

    #[test]
    fn zero_rate_keeps_everything_constant() {
        let (data, rig, optics) = setup(16, 2);
        let preset = EnvironmentPreset::indoor().with_noise(ParamSpec::Fixed(0.0));
        let hyper = Hyper { iterations: 4, batch_size: 8, lr_doe: 0.0, lr_matcher: 0.0, ..Default::default() };
        let trainer = Trainer::new(&data, rig, optics, preset, hyper).unwrap();
        let mut s = trainer.init_state(matcher()).unwrap();
        let h0 = s.heights.clone();
        let m0 = s.matcher.clone();
        trainer.run_until(&mut s, 4).unwrap();
        assert_eq!(s.heights, h0);
        assert_eq!(s.matcher, m0);
        let l0 = s.history[0].loss;
        assert!(s.history.iter().all(|r| r.loss == l0));
        assert_eq!(s.history.len(), s.iteration);
    }

    #[test]
    fn replay_and_resume_are_bit_identical() {
        let (data, rig, optics) = setup(16, 3);
        let hyper = Hyper { iterations: 6, batch_size: 2, seed: 11, ..Default::default() };
        let trainer = Trainer::new(&data, rig, optics, EnvironmentPreset::generic(), hyper).unwrap();
        let mut a = trainer.init_state(matcher()).unwrap();
        trainer.run_until(&mut a, 6).unwrap();
        let mut b = trainer.init_state(matcher()).unwrap();
        trainer.run_until(&mut b, 3).unwrap();
        let mut c = b.clone();
        trainer.run_until(&mut c, 6).unwrap();
        assert_eq!(a, c);
        assert!(a.heights.iter().all(|&h| (0.0..1.0).contains(&h)));
        assert!(a.history.windows(2).any(|w| w[0].alpha != w[1].alpha));
    }

    #[test]
    fn non_finite_loss_dumps_and_aborts() {
        let (data, rig, optics) = setup(16, 1);
        let dir = tempfile::tempdir().unwrap();
        let trainer = Trainer::new(&data, rig, optics, EnvironmentPreset::indoor(), Hyper::default())
            .unwrap()
            .with_dump_dir(dir.path());
        let mut s = trainer.init_state(matcher()).unwrap();
        s.heights[[3, 4]] = f64::NAN;
        let err = trainer.step(&mut s).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0, .. }), "{err}");
        assert!(dir.path().join("diverged_doe.pfm").exists());
        assert!(std::fs::read_to_string(dir.path().join("diverged_batch.txt")).unwrap().contains("scene 0"));
        assert!(s.history.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (data, rig, optics) = setup(16, 1);
        assert!(Trainer::new(&[], rig, optics.clone(), EnvironmentPreset::indoor(), Hyper::default()).is_err());
        let bad = Hyper { batch_size: 0, ..Default::default() };
        assert!(Trainer::new(&data, rig, optics.clone(), EnvironmentPreset::indoor(), bad).is_err());
        let (big, _, _) = setup(20, 1);
        assert!(matches!(
            Trainer::new(&big, rig, optics, EnvironmentPreset::indoor(), Hyper::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = vec![
            LossRecord { iteration: 0, loss: 0.1 + 0.2, alpha: 0.25, beta: 1.5, noise_sigma: 0.02 },
            LossRecord { iteration: 1, loss: 1.0 / 3.0, alpha: 0.0, beta: 0.2, noise_sigma: 0.6 },
        ];
        write_loss_csv(&p, &h).unwrap();
        assert_eq!(read_loss_csv(&p).unwrap(), h);
    }
}
