//! `activestereo` command line.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable, malformed or missing inputs), 3 numeric failure (non-finite
//! values, divergence, failed gradient check).

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::diffengine::GradCheckOptions;
use crate::error::{Error, Result};
use crate::harness::config::{default_max_disparity, RunConfig};
use crate::harness::eval::{compute_eval_many, EvalReport};
use crate::harness::figures::{reproduce_figures, Figure};
use crate::harness::gradcheck::{format_rows, gradcheck_all};
use crate::harness::reference::{desk_rig, reference_config, train, REFERENCE_ETA, SMOOTHING_WINDOW};
use crate::io::{read_mask_pgm, read_pfm_gray, save_color_preview, save_gray_preview, write_mask_pgm, write_pfm};
use crate::matcher::{reconstruct, FeatureMode, MatcherParams};
use crate::optimize::{
    design_doe_for_target, load_checkpoint, pattern_metrics, reachable_target, save_checkpoint, smooth,
    write_loss_csv, DesignMethod, DesignOptions, Optics, OpticsConfig, PresetName,
};
use crate::scenesim::{generate_toy_scene, random_two_plane, synthesize_stereo, CameraRig, CaptureConfig, SceneDescriptor};
use crate::wavefield::{read_doe, write_doe, IlluminationPattern};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ACTIVESTEREO_OUT";

#[derive(Debug, Parser)]
#[command(name = "activestereo", version, about = "Structured-illumination active stereo: simulation, matching and DOE optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene under a DOE pattern into stereo captures.
    Simulate(SimulateArgs),
    /// Jointly optimize the DOE and the matcher.
    Optimize(OptimizeArgs),
    /// Design a DOE whose far field matches a target intensity.
    DesignDoe(DesignArgs),
    /// Estimate left-view disparity from captures.
    Reconstruct(ReconstructArgs),
    /// Compare disparity estimates with ground truth.
    Eval(EvalArgs),
    /// Validate adjoint gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Sparsity metrics of an illumination pattern.
    Metrics(MetricsArgs),
    /// Regenerate figure analogues.
    Figures(FiguresArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RigChoice {
    /// 55 mm baseline.
    Prototype,
    /// 8 mm baseline.
    Desk,
}

impl RigChoice {
    fn rig(self) -> CameraRig<f64> {
        match self {
            Self::Prototype => CameraRig::prototype(),
            Self::Desk => desk_rig(),
        }
    }
}

#[derive(Debug, Args)]
struct RigArgs {
    /// Run configuration; its rig and optics override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "prototype")]
    rig: RigChoice,
}

impl RigArgs {
    fn load(&self) -> Result<(CameraRig<f64>, Option<RunConfig>)> {
        match &self.config {
            Some(p) => {
                let c = RunConfig::load(p)?;
                Ok((c.rig, Some(c)))
            }
            None => Ok((self.rig.rig(), None)),
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    rig: RigArgs,
    /// DOE and camera grid size.
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = REFERENCE_ETA)]
    eta: f64,
    /// DOE file; a random DOE from --doe-seed otherwise.
    #[arg(long)]
    doe: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    doe_seed: u64,
    /// Scene descriptor file (one `x0 y0 x1 y1 z reflectance [z_right]` rectangle per line).
    #[arg(long, conflicts_with_all = ["plane_depth", "two_plane"])]
    scene: Option<PathBuf>,
    /// Full-frame plane at this depth in meters (the default scene, at 1 m).
    #[arg(long)]
    plane_depth: Option<f64>,
    /// Random two-plane scene with this seed.
    #[arg(long)]
    two_plane: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    capture_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// Run configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Reference run for a named environment (indoor, outdoor, generic).
    #[arg(long)]
    preset: Option<PresetName>,
    /// Noise level of the reference run.
    #[arg(long, requires = "preset")]
    noise: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodChoice {
    Gradient,
    IterativeFft,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Target intensity PFM (N×N); a reachable target from --target-seed otherwise.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = 123)]
    target_seed: u64,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = REFERENCE_ETA)]
    eta: f64,
    #[arg(long, value_enum, default_value = "iterative-fft")]
    method: MethodChoice,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Snap heights to the configured fabrication levels.
    #[arg(long)]
    quantize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    rig: RigArgs,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Illumination image; required unless --binocular.
    #[arg(long)]
    illum: Option<PathBuf>,
    /// Use the matcher stored in a checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "patch")]
    mode: FeatureMode,
    #[arg(long)]
    max_disparity: Option<usize>,
    #[arg(long, default_value_t = 7)]
    window: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    binocular: bool,
    /// Output disparity PFM.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    rig: RigArgs,
    /// Estimated disparity PFM; repeat for several scenes.
    #[arg(long, required = true)]
    est: Vec<PathBuf>,
    /// Ground-truth disparity PFM, one per --est.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Valid-pixel PGM masks, one per --est; every pixel when absent.
    #[arg(long)]
    mask: Vec<PathBuf>,
    /// Illumination pattern PFM to add sparsity metrics.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 24)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Only checks whose name contains this.
    #[arg(long)]
    only: Option<String>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Pattern PFM.
    pattern: PathBuf,
}

#[derive(Debug, Args)]
struct FiguresArgs {
    /// fig5, fig6, fig7, fig8 or all.
    #[arg(default_value = "all")]
    which: Vec<String>,
    /// Root holding the optimization runs the pattern figures read.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status. Diagnostics go to standard error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidMaterial(_) | Error::Range(_) => 1,
        Error::Format { .. }
        | Error::Missing { .. }
        | Error::Io(_)
        | Error::Shape(_)
        | Error::InvalidScene(_)
        | Error::InvalidTarget(_)
        | Error::Image(_) => 2,
        Error::NonFinite(_) | Error::Diverged { .. } | Error::CheckInvalid(_) | Error::Contract(_) | Error::Lifecycle(_) => 3,
    }
}

fn out_dir(flag: Option<PathBuf>, config: Option<&RunConfig>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Optimize(a) => optimize(a),
        Command::DesignDoe(a) => design(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Metrics(a) => metrics(a),
        Command::Figures(a) => figures(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let (rig, cfg) = a.rig.load()?;
    let optics_cfg = cfg.as_ref().map_or(OpticsConfig::new(a.n, a.eta), |c| c.optics);
    let optics = Optics::new(optics_cfg, &rig)?;
    let n = optics.n();
    let doe = match &a.doe {
        Some(p) => {
            let d = read_doe(p)?;
            if d.n() != n {
                return Err(Error::Shape(format!("DOE is {}×{0}, optics expect {n}×{n}", d.n())));
            }
            d
        }
        None => optics.doe(&optics.random_heights(a.doe_seed))?,
    };
    let pattern = optics.pattern_of(&doe)?;
    let desc = if let Some(p) = &a.scene {
        let text = fs::read_to_string(p)?;
        text.parse::<SceneDescriptor>()?
    } else if let Some(seed) = a.two_plane {
        random_two_plane(n, n, seed)
    } else {
        SceneDescriptor::full_frame_plane(a.plane_depth.unwrap_or(1.0), 0.8, n, n)
    };
    for w in desc.depth_warnings() {
        log::warn!("{w}");
    }
    let scene = generate_toy_scene(&desc, &rig, n, n)?;
    let capture_cfg = CaptureConfig::new(a.gamma, a.alpha, a.beta, a.noise, a.capture_seed)?;
    let cap = synthesize_stereo(&pattern, &scene, &rig, &capture_cfg)?;
    let dir = out_dir(a.out, cfg.as_ref())?;
    write_pfm(dir.join("left.pfm"), &cap.left)?;
    write_pfm(dir.join("right.pfm"), &cap.right)?;
    write_pfm(dir.join("illum.pfm"), &cap.illum)?;
    write_pfm(dir.join("disp_left.pfm"), &scene.disp_l)?;
    write_pfm(dir.join("disp_right.pfm"), &scene.disp_r)?;
    write_mask_pgm(dir.join("valid.pgm"), &scene.valid_mask(1.0))?;
    write_doe(dir.join("doe.bin"), &doe)?;
    save_gray_preview(dir.join("left.png"), &cap.left, Some((0.0, 1.0)))?;
    save_gray_preview(dir.join("right.png"), &cap.right, Some((0.0, 1.0)))?;
    save_gray_preview(dir.join("illum.png"), &cap.illum, None)?;
    save_color_preview(dir.join("disp_left.png"), &scene.disp_l, None)?;
    eprintln!("wrote captures for a {n}×{n} scene to {}", dir.display());
    Ok(0)
}

fn optimize(a: OptimizeArgs) -> Result<i32> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(preset)) => reference_config(preset, a.noise.unwrap_or(crate::optimize::DEFAULT_NOISE_SIGMA)),
        (None, None) => return Err(Error::InvalidConfig("optimize needs --config or --preset".into())),
    };
    if let Some(k) = a.iterations {
        cfg.optimizer.iterations = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = out_dir(a.out, Some(&cfg))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let resume = a.resume.as_ref().map(load_checkpoint).transpose()?;
    let ckpt = dir.join("checkpoint.bin");
    let (state, optics) = train(&cfg, resume, Some(&ckpt))?;
    save_checkpoint(&ckpt, &state)?;
    write_loss_csv(dir.join("loss.csv"), &state.history)?;
    let doe = optics.doe(&state.heights)?;
    write_doe(dir.join("doe.bin"), &doe)?;
    let pattern = optics.pattern_of(&doe)?;
    write_pfm(dir.join("pattern.pfm"), pattern.intensity())?;
    save_gray_preview(dir.join("pattern.png"), pattern.intensity(), None)?;
    let losses: Vec<f64> = state.history.iter().map(|r| r.loss).collect();
    let sm = smooth(&losses, SMOOTHING_WINDOW.min(losses.len()));
    if let (Some(first), Some(last)) = (sm.first(), sm.last()) {
        eprintln!(
            "{} iterations, smoothed loss {first:.4} -> {last:.4}; outputs in {}",
            state.iteration,
            dir.display()
        );
    }
    Ok(0)
}

fn design(a: DesignArgs) -> Result<i32> {
    let target = match &a.target {
        Some(p) => {
            let t: Array2<f64> = read_pfm_gray(p)?;
            let c = OpticsConfig::new(t.nrows(), a.eta);
            if t.nrows() != t.ncols() {
                return Err(Error::Shape(format!("target must be square, got {:?}", t.dim())));
            }
            c.validate()?;
            IlluminationPattern::new(t, c.pitch_u, c.wavelength, false)?
        }
        None => reachable_target(&OpticsConfig::new(a.n, a.eta), a.target_seed)?,
    };
    let optics = OpticsConfig::new(target.dim().0, a.eta);
    let method = match a.method {
        MethodChoice::Gradient => DesignMethod::Gradient,
        MethodChoice::IterativeFft => DesignMethod::IterativeFft,
    };
    let mut opts = DesignOptions::new(method, a.iterations);
    opts.lr = a.lr;
    opts.seed = a.seed;
    opts.quantize = a.quantize;
    let r = design_doe_for_target(&target, &optics, &opts)?;
    let dir = out_dir(a.out, None)?;
    write_doe(dir.join("doe.bin"), &r.doe)?;
    write_pfm(dir.join("pattern.pfm"), &r.pattern)?;
    save_gray_preview(dir.join("pattern.png"), &r.pattern, None)?;
    let mut csv = String::from("iteration,error\n");
    for (i, e) in r.errors.iter().enumerate() {
        csv.push_str(&format!("{i},{e:e}\n"));
    }
    fs::write(dir.join("errors.csv"), csv)?;
    println!("correlation {:.6}", r.correlation);
    Ok(0)
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<i32> {
    let (rig, cfg) = a.rig.load()?;
    let left: Array2<f64> = read_pfm_gray(&a.left)?;
    let right: Array2<f64> = read_pfm_gray(&a.right)?;
    let illum: Option<Array2<f64>> = a.illum.as_ref().map(read_pfm_gray).transpose()?;
    let width = left.ncols();
    let mut params = if let Some(p) = &a.checkpoint {
        load_checkpoint(p)?.matcher
    } else if let Some(c) = &cfg {
        c.matcher_params()
    } else {
        let dmax = a.max_disparity.unwrap_or_else(|| default_max_disparity(&rig).min(width.saturating_sub(1)));
        let mut p = MatcherParams::new(a.mode, dmax);
        p.window = a.window;
        p.temperature = a.temperature;
        p
    };
    if let Some(d) = a.max_disparity {
        params.max_disparity = d;
    }
    if a.binocular {
        params.trinocular = false;
    }
    params.validate(width)?;
    let disp = reconstruct(&left, &right, illum.as_ref(), &params, &rig)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_pfm(&a.out, &disp)?;
    eprintln!("wrote {}", a.out.display());
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let (rig, _) = a.rig.load()?;
    if a.est.len() != a.gt.len() {
        return Err(Error::InvalidConfig(format!("{} estimates for {} ground truths", a.est.len(), a.gt.len())));
    }
    if !a.mask.is_empty() && a.mask.len() != a.est.len() {
        return Err(Error::InvalidConfig("give one --mask per --est or none".into()));
    }
    let mut scenes = Vec::with_capacity(a.est.len());
    for (i, (e, g)) in a.est.iter().zip(&a.gt).enumerate() {
        let est: Array2<f64> = read_pfm_gray(e)?;
        let gt: Array2<f64> = read_pfm_gray(g)?;
        let mask = match a.mask.get(i) {
            Some(m) => read_mask_pgm(m)?,
            None => Array2::from_elem(gt.dim(), true),
        };
        let name = e.file_stem().map_or_else(|| format!("scene{i}"), |s| s.to_string_lossy().into_owned());
        scenes.push((name, est, gt, mask));
    }
    let mut report: EvalReport = compute_eval_many(&scenes, &rig)?;
    if let Some(p) = &a.pattern {
        let pat: Array2<f64> = read_pfm_gray(p)?;
        report.pattern = Some(pattern_metrics(&pat));
    }
    print!("{}", report.to_text());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv())?;
    }
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let opts = GradCheckOptions { num_probes: a.probes, seed: a.seed, ..Default::default() };
    let rows = gradcheck_all(&opts, a.only.as_deref())?;
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("no check matches `{}`", a.only.unwrap_or_default())));
    }
    print!("{}", format_rows(&rows, a.tol));
    let failed = rows.iter().filter(|r| !r.report.passes(a.tol)).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks exceed relative error {:e}", rows.len(), a.tol);
        return Ok(3);
    }
    Ok(0)
}

fn metrics(a: MetricsArgs) -> Result<i32> {
    let p: Array2<f64> = read_pfm_gray(&a.pattern)?;
    let m = pattern_metrics(&p);
    println!("dot_count {}", m.dot_count);
    println!("peak_to_mean {}", m.peak_to_mean);
    println!("gini {}", m.gini);
    println!("top1_energy {}", m.top1_energy);
    Ok(0)
}

fn figures(a: FiguresArgs) -> Result<i32> {
    let which: Vec<Figure> = if a.which.iter().any(|w| w == "all") {
        Figure::ALL.to_vec()
    } else {
        a.which.iter().map(|w| w.parse()).collect::<Result<_>>()?
    };
    let dir = out_dir(a.out, None)?;
    let root = a.checkpoints.unwrap_or_else(|| dir.join("runs"));
    for p in reproduce_figures(&which, &dir, &root)? {
        println!("{}", p.display());
    }
    Ok(0)
}
