//! Desk-scale reference experiments shared by the CLI, the figure generator
//! and the acceptance suite.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::Result;
use crate::harness::config::{EnvironmentConfig, MatcherConfig, OptimizerConfig, RunConfig, SceneConfig, SceneKind};
use crate::harness::eval::{masked_mae, occlusion_band};
use crate::matcher::{reconstruct, FeatureMode, MatcherParams};
use crate::optimize::{
    design_doe_for_target, reachable_target, save_checkpoint, DesignMethod, DesignOptions, DesignResult, Optics,
    OpticsConfig, OptimState, PresetName, Trainer,
};
use crate::scenesim::{generate_toy_scene, random_two_plane, synthesize_stereo, CameraRig, CaptureConfig};

/// 6 mm lenses, 5.3 µm pixels and an 8 mm baseline: disparities of the
/// 0.4–3 m range fit a 32-pixel-wide image.
pub fn desk_rig() -> CameraRig<f64> {
    CameraRig::centered(6e-3, 5.3e-6, 8e-3)
}

/// DOE refractive index used by every reference run.
pub const REFERENCE_ETA: f64 = 1.5;

/// Loss smoothing window for progress checks.
pub const SMOOTHING_WINDOW: usize = 20;

/// Joint-optimization run on five procedural two-plane scenes with a 32×32
/// DOE.
pub fn reference_config(preset: PresetName, noise_sigma: f64) -> RunConfig {
    RunConfig {
        seed: 0,
        output_dir: None,
        rig: desk_rig(),
        optics: OpticsConfig::new(32, REFERENCE_ETA),
        environment: EnvironmentConfig::named(preset, noise_sigma),
        matcher: MatcherConfig::default(),
        optimizer: OptimizerConfig::default(),
        scenes: SceneConfig { kind: SceneKind::TwoPlane, count: 5, seed: 0, path: None },
    }
}

/// Trainer inputs built from a config.
pub struct Prepared {
    pub scenes: Vec<crate::scenesim::SceneSample<f64>>,
    pub optics: Optics<f64>,
    pub matcher: MatcherParams<f64>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let optics = Optics::new(cfg.optics, &cfg.rig)?;
    let scenes = cfg.scenes.load(&cfg.rig, cfg.optics.n)?;
    Ok(Prepared { scenes, optics, matcher: cfg.matcher_params() })
}

/// Runs (or continues from `resume`) the optimization `cfg` describes.
/// With `checkpoint` set, the state is saved there every
/// `optimizer.checkpoint_every` iterations and at the end.
pub fn train(cfg: &RunConfig, resume: Option<OptimState>, checkpoint: Option<&Path>) -> Result<(OptimState, Optics<f64>)> {
    let prep = prepare(cfg)?;
    let preset = cfg.environment.to_preset()?;
    let mut trainer = Trainer::new(&prep.scenes, cfg.rig, prep.optics.clone(), preset, cfg.hyper())?;
    if let Some(dir) = checkpoint.and_then(Path::parent) {
        trainer = trainer.with_dump_dir(dir);
    }
    let mut state = match resume {
        Some(s) => s,
        None => trainer.init_state(prep.matcher)?,
    };
    let total = cfg.optimizer.iterations;
    let every = match cfg.optimizer.checkpoint_every {
        0 => total.max(1),
        k => k,
    };
    while state.iteration < total {
        let until = ((state.iteration / every + 1) * every).min(total);
        trainer.run_until(&mut state, until)?;
        if let Some(path) = checkpoint {
            save_checkpoint(path, &state)?;
        }
    }
    Ok((state, prep.optics))
}

/// Band errors of one scene under both matcher modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandComparison {
    pub scene_seed: u64,
    pub band_pixels: usize,
    pub trinocular: f64,
    pub binocular: f64,
}

/// Maps of one comparison scene, for figures.
pub struct ComparisonMaps {
    pub gt: Array2<f64>,
    pub trinocular: Array2<f64>,
    pub binocular: Array2<f64>,
    pub band: Array2<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonSetup {
    pub n: usize,
    pub scenes: usize,
    pub noise_sigma: f64,
    pub band_radius: usize,
    pub mode: FeatureMode,
    pub pattern_seed: u64,
    pub scene_seed: u64,
    pub capture_seed: u64,
}

impl Default for ComparisonSetup {
    fn default() -> Self {
        Self {
            n: 64,
            scenes: 10,
            noise_sigma: 0.02,
            band_radius: 3,
            mode: FeatureMode::Patch,
            pattern_seed: 7,
            scene_seed: 1000,
            capture_seed: 500,
        }
    }
}

fn compare_scene(
    setup: &ComparisonSetup,
    rig: &CameraRig<f64>,
    pattern: &crate::wavefield::IlluminationPattern<f64>,
    i: u64,
) -> Result<(BandComparison, ComparisonMaps)> {
    let n = setup.n;
    let scene = generate_toy_scene(&random_two_plane(n, n, setup.scene_seed + i), rig, n, n)?;
    let cfg = CaptureConfig::new(1.0, 0.0, 1.5, setup.noise_sigma, setup.capture_seed + i)?;
    let cap = synthesize_stereo(pattern, &scene, rig, &cfg)?;
    let params = MatcherParams::new(setup.mode, crate::harness::config::default_max_disparity(rig).min(n - 1));
    let tri = reconstruct(&cap.left, &cap.right, Some(&cap.illum), &params, rig)?;
    let bi = reconstruct(&cap.left, &cap.right, None, &params.clone().binocular(), rig)?;
    let band = occlusion_band(&scene, setup.band_radius);
    let cmp = BandComparison {
        scene_seed: setup.scene_seed + i,
        band_pixels: band.iter().filter(|&&b| b).count(),
        trinocular: masked_mae(&tri, &scene.disp_l, &band).unwrap_or(0.0),
        binocular: masked_mae(&bi, &scene.disp_l, &band).unwrap_or(0.0),
    };
    Ok((cmp, ComparisonMaps { gt: scene.disp_l, trinocular: tri, binocular: bi, band }))
}

/// Trinocular versus binocular matching near occlusion boundaries on seeded
/// two-plane scenes, with a fixed random DOE on the desk rig.
pub fn trinocular_comparison(setup: &ComparisonSetup) -> Result<Vec<(BandComparison, ComparisonMaps)>> {
    let rig = desk_rig();
    let optics = Optics::new(OpticsConfig::new(setup.n, REFERENCE_ETA), &rig)?;
    let pattern = optics.pattern(&optics.random_heights(setup.pattern_seed))?;
    (0..setup.scenes as u64)
        .into_par_iter()
        .map(|i| compare_scene(setup, &rig, &pattern, i))
        .collect()
}

/// Target-mode reference: a forward-model target at N=64 recovered by both
/// design methods.
pub struct DesignComparison {
    pub target: Array2<f64>,
    pub iterative_fft: DesignResult,
    pub gradient: DesignResult,
}

pub fn design_comparison(iterations: usize) -> Result<DesignComparison> {
    let optics = OpticsConfig::new(64, REFERENCE_ETA);
    let target = reachable_target(&optics, 123)?;
    let (gs, grad) = rayon::join(
        || design_doe_for_target(&target, &optics, &DesignOptions::new(DesignMethod::IterativeFft, iterations)),
        || design_doe_for_target(&target, &optics, &DesignOptions::new(DesignMethod::Gradient, iterations)),
    );
    Ok(DesignComparison { target: target.into_intensity(), iterative_fft: gs?, gradient: grad? })
}

/// Run directories the pattern figures read, relative to a checkpoint root,
/// with the command producing each.
pub fn figure_runs(which: &str) -> Vec<(PathBuf, String)> {
    let runs: &[(&str, &str, f64)] = match which {
        "fig6" => &[("indoor", "indoor", 0.02), ("outdoor", "outdoor", 0.02)],
        "fig7" => &[("sigma-0.02", "generic", 0.02), ("sigma-0.6", "generic", 0.6)],
        _ => &[],
    };
    runs.iter()
        .map(|(dir, preset, sigma)| {
            (PathBuf::from(dir), format!("activestereo optimize --preset {preset} --noise {sigma} --out <root>/{dir}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_is_valid() {
        for p in [PresetName::Indoor, PresetName::Outdoor, PresetName::Generic] {
            let c = reference_config(p, 0.02);
            c.validate().unwrap();
            assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        }
    }

    #[test]
    fn checkpointed_training_matches_plain() {
        let mut cfg = reference_config(PresetName::Indoor, 0.02);
        cfg.optics = OpticsConfig::new(16, REFERENCE_ETA);
        cfg.scenes.count = 2;
        cfg.optimizer.iterations = 4;
        cfg.matcher.max_disparity = Some(12);
        let (plain, _) = train(&cfg, None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("run.ckpt");
        cfg.optimizer.checkpoint_every = 3;
        let (chunked, _) = train(&cfg, None, Some(&ck)).unwrap();
        assert_eq!(plain, chunked);
        assert_eq!(crate::optimize::load_checkpoint(&ck).unwrap(), chunked);
    }
}
