//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs without the libtest harness so the lines are always shown.

use std::path::Path;
use std::time::{Duration, Instant};

use activestereo::diffengine::GradCheckOptions;
use activestereo::harness::{
    compute_eval, design_comparison, error_sums, gradcheck_all, reference_config, train, trinocular_comparison,
    ComparisonSetup, SMOOTHING_WINDOW,
};
use activestereo::io::{read_pfm_gray, write_pfm};
use activestereo::matcher::{reconstruct, FeatureMode, MatcherParams};
use activestereo::optimize::{
    load_checkpoint, pattern_metrics, read_loss_csv, save_checkpoint, Optics, OpticsConfig, OptimState,
    PatternMetrics, PresetName,
};
use activestereo::scenesim::{generate_toy_scene, synthesize_stereo, CameraRig, CaptureConfig, SceneDescriptor};
use activestereo::wavefield::{
    apply_doe, camera_scale_factor, camera_scale_factor_at_depth, field_intensity, propagate_far_field, CenteredDft,
    ComplexField, DOEProfile,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid(h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random_range(lo..hi))
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let rows = match gradcheck_all(&GradCheckOptions::default(), None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("check failed to run: {e}")),
    };
    let elapsed = t0.elapsed();
    let worst = rows.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = rows.iter().filter(|r| !r.report.passes(1e-4)).map(|r| r.name.as_str()).collect();
    let kinks: usize = rows.iter().map(|r| r.report.kinks.len()).sum();
    outcome(
        failing.is_empty() && within(elapsed, 60),
        format!(
            "{} checks incl. full chain, max rel err {worst:.2e} (< 1e-4), {kinks} kink probes skipped, failing {failing:?}, {:.1?} (< 60 s)",
            rows.len(),
            elapsed
        ),
    )
}

/// Centered DFT by direct summation along both axes.
fn direct_dft(re: &Array2<f64>, im: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = re.nrows();
    let c = (n / 2) as f64;
    let tw = |k: usize, x: usize| {
        let a = -std::f64::consts::TAU * (k as f64 - c) * (x as f64 - c) / n as f64;
        (a.cos(), a.sin())
    };
    let mut out_re = Array2::zeros((n, n));
    let mut out_im = Array2::zeros((n, n));
    for ky in 0..n {
        for kx in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..n {
                let (cy, sy) = tw(ky, y);
                for x in 0..n {
                    let (cx, sx) = tw(kx, x);
                    let (wr, wi) = (cy * cx - sy * sx, cy * sx + sy * cx);
                    sr += re[[y, x]] * wr - im[[y, x]] * wi;
                    si += re[[y, x]] * wi + im[[y, x]] * wr;
                }
            }
            out_re[[ky, kx]] = sr / n as f64;
            out_im[[ky, kx]] = si / n as f64;
        }
    }
    (out_re, out_im)
}

fn wave_optics_invariants() -> Outcome {
    let mut parseval = 0.0f64;
    for (i, n) in [2usize, 3, 16, 63, 64, 128, 255, 256].into_iter().enumerate() {
        let u = ComplexField::new(grid(n, n, -1.0, 1.0, i as u64), grid(n, n, -1.0, 1.0, 99 + i as u64), 1e-5, 850e-9)
            .unwrap();
        let out = propagate_far_field(&u).unwrap();
        parseval = parseval.max((out.power() - u.power()).abs() / u.power());
    }
    let (re, im) = (grid(16, 16, -1.0, 1.0, 5), grid(16, 16, -1.0, 1.0, 6));
    let (fr, fi) = CenteredDft::new(16).apply(&re, &im, true);
    let (dr, di) = direct_dft(&re, &im);
    let dft_err = fr.iter().zip(dr.iter()).chain(fi.iter().zip(di.iter())).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let n = 64;
    let laser = ComplexField::collimated(n, 1e-3 / n as f64, 850e-9, 1.0 / n as f64, false).unwrap();
    let doe = DOEProfile::from_normalized(&grid(n, n, 0.0, 1.0, 7), 1.5, 850e-9, 1e-3 / n as f64, 16).unwrap();
    let base = field_intensity(&propagate_far_field(&apply_doe(&laser, &doe).unwrap()).unwrap());
    let phase = doe.phase_delay().mapv(|p| p + std::f64::consts::TAU);
    let shifted = ComplexField::from_polar(&laser.amplitude(), &phase, 1e-3 / n as f64, 850e-9).unwrap();
    let wrapped = field_intensity(&propagate_far_field(&shifted).unwrap());
    let wrap_err =
        base.intensity().iter().zip(wrapped.intensity().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        parseval < 1e-10 && dft_err < 1e-10 && wrap_err < 1e-9,
        format!(
            "Parseval rel err {parseval:.1e} (N<=256, < 1e-10), direct-sum DFT err {dft_err:.1e} (N=16, < 1e-10), phase-wrap err {wrap_err:.1e} (< 1e-9)"
        ),
    )
}

fn scale_factor() -> Outcome {
    let rig = CameraRig::<f64>::prototype();
    let n = 1000;
    let u = 1e-3 / n as f64;
    let s = camera_scale_factor(u, n, 850e-9, &rig);
    let spread = [0.4, 1.0, 3.0]
        .iter()
        .map(|&z| (camera_scale_factor_at_depth(u, n, 850e-9, &rig, z) - s).abs())
        .fold(0.0, f64::max);
    // the resampler uses the depth-free form; the written-out form only
    // cancels z up to rounding
    outcome(
        (s - 1.0392).abs() <= 1e-4 && spread <= 1e-12 * s,
        format!("s = {s:.6} (1.0392 +- 1e-4), depth-explicit form at z in {{0.4, 1, 3}} m differs by {spread:.1e} (<= 1e-12 rel)"),
    )
}

fn geometry_oracle() -> Outcome {
    let t0 = Instant::now();
    let rig = CameraRig::<f64>::prototype();
    let n = 128;
    let scene = generate_toy_scene(&SceneDescriptor::full_frame_plane(1.0, 0.8, n, n), &rig, n, n).unwrap();
    let gt = scene.disp_l[[n / 2, n / 2]];
    let optics = Optics::new(OpticsConfig::new(n, 1.5), &rig).unwrap();
    let pattern = optics.pattern(&optics.random_heights(0)).unwrap();
    let cap = synthesize_stereo(&pattern, &scene, &rig, &CaptureConfig::new(1.0, 0.0, 1.0, 0.0, 0).unwrap()).unwrap();
    let params = MatcherParams::new(FeatureMode::Patch, 72);
    let est = reconstruct(&cap.left, &cap.right, Some(&cap.illum), &params, &rig).unwrap();
    let report = compute_eval(&est, &scene.disp_l, &scene.valid_mask(1.0), &rig).unwrap();
    let elapsed = t0.elapsed();
    let mae = report.aggregate.mae_px;
    outcome(
        (gt - 62.26).abs() <= 0.01 && mae < 0.5 && within(elapsed, 30),
        format!("ground truth {gt:.4} px (62.26 +- 0.01), noiseless MAE {mae:.3} px (< 0.5), {elapsed:.1?} (< 30 s)"),
    )
}

fn trinocular_ordering() -> Outcome {
    let t0 = Instant::now();
    let runs = trinocular_comparison(&ComparisonSetup::default()).unwrap();
    let elapsed = t0.elapsed();
    let wins = runs.iter().filter(|(c, _)| c.trinocular <= c.binocular).count();
    let tri: f64 = runs.iter().map(|(c, _)| c.trinocular).sum::<f64>() / runs.len() as f64;
    let bi: f64 = runs.iter().map(|(c, _)| c.binocular).sum::<f64>() / runs.len() as f64;
    outcome(
        runs.len() >= 10 && wins >= 8 && bi - tri > 0.0 && within(elapsed, 300),
        format!(
            "trinocular <= binocular band MAE in {wins}/{} scenes (>= 8), mean {tri:.3} vs {bi:.3} px, {elapsed:.1?} (< 5 min)",
            runs.len()
        ),
    )
}

struct ReferenceRun {
    state: OptimState,
    metrics: PatternMetrics,
    elapsed: Duration,
}

fn reference_run(preset: PresetName, sigma: f64) -> ReferenceRun {
    let t0 = Instant::now();
    let (state, optics) = train(&reference_config(preset, sigma), None, None).unwrap();
    let metrics = pattern_metrics(optics.pattern(&state.heights).unwrap().intensity());
    ReferenceRun { state, metrics, elapsed: t0.elapsed() }
}

fn joint_progress(indoor: &ReferenceRun) -> Outcome {
    let sm = indoor.state.smoothed_losses(SMOOTHING_WINDOW);
    let ratio = sm[sm.len() - 1] / sm[0];
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/indoor_loss.csv");
    let golden = read_loss_csv(&golden_path).unwrap();
    let deviation = if golden.len() == indoor.state.history.len() {
        golden.iter().zip(&indoor.state.history).map(|(g, r)| (g.loss - r.loss).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    outcome(
        ratio <= 0.5 && deviation <= 1e-9 && within(indoor.elapsed, 600),
        format!(
            "smoothed loss {:.4} -> {:.4}, ratio {ratio:.3} (<= 0.5), max deviation from golden curve {deviation:.1e} (<= 1e-9), {:.1?} (< 10 min)",
            sm[0],
            sm[sm.len() - 1],
            indoor.elapsed
        ),
    )
}

fn environment_ordering(indoor: &ReferenceRun) -> Outcome {
    let outdoor = reference_run(PresetName::Outdoor, 0.02);
    let low = reference_run(PresetName::Generic, 0.02);
    let high = reference_run(PresetName::Generic, 0.6);
    let total = indoor.elapsed + outdoor.elapsed + low.elapsed + high.elapsed;
    let (i, o, l, h) = (&indoor.metrics, &outdoor.metrics, &low.metrics, &high.metrics);
    outcome(
        i.dot_count >= o.dot_count && h.peak_to_mean > l.peak_to_mean && h.gini > l.gini && within(total, 1200),
        format!(
            "dots indoor {} >= outdoor {}; sigma 0.6 vs 0.02: peak/mean {:.2} > {:.2}, Gini {:.3} > {:.3}; {total:.1?} (< 20 min)",
            i.dot_count, o.dot_count, h.peak_to_mean, l.peak_to_mean, h.gini, l.gini
        ),
    )
}

fn target_design() -> Outcome {
    let t0 = Instant::now();
    let d = design_comparison(200).unwrap();
    let elapsed = t0.elapsed();
    let e = &d.iterative_fft.errors;
    let monotone = e[3..].windows(2).all(|w| w[1] <= w[0]);
    let (gs, grad) = (d.iterative_fft.correlation, d.gradient.correlation);
    outcome(
        gs > 0.95 && monotone && grad >= gs - 0.05 && within(elapsed, 300),
        format!(
            "iterative-FFT NCC {gs:.4} (> 0.95), error nonincreasing after iteration 3: {monotone}, gradient NCC {grad:.4} (>= {:.4}), {elapsed:.1?} (< 5 min)",
            gs - 0.05
        ),
    )
}

fn io_and_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pfm = dir.path().join("a.pfm");
    let g = grid(17, 23, -50.0, 50.0, 3).mapv(|v| v as f32 as f64);
    write_pfm(&pfm, &g).unwrap();
    let back: Array2<f64> = read_pfm_gray(&pfm).unwrap();
    let pfm_ok = back == g;

    let mut cfg = reference_config(PresetName::Indoor, 0.02);
    cfg.optimizer.iterations = 20;
    let (straight, _) = train(&cfg, None, None).unwrap();
    let mut first = cfg.clone();
    first.optimizer.iterations = 10;
    let (half, _) = train(&first, None, None).unwrap();
    let ck = dir.path().join("half.ckpt");
    save_checkpoint(&ck, &half).unwrap();
    let (resumed, _) = train(&cfg, Some(load_checkpoint(&ck).unwrap()), None).unwrap();
    let resume_ok = resumed == straight;

    let rig = CameraRig::centered(6e-3, 5.3e-6, 8e-3);
    let (est, gt) = (grid(20, 20, 0.0, 25.0, 8), grid(20, 20, 0.0, 25.0, 9));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mask = Array2::from_shape_fn((20, 20), |_| rng.random_bool(0.7));
    let s = error_sums(&est, &gt, &mask, &rig).unwrap();
    let fb = 6e-3 * 8e-3 / 5.3e-6;
    let (mut abs, mut n, mut bad, mut dabs) = (0.0, 0usize, [0usize; 3], 0.0);
    for ((e, g), m) in est.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            n += 1;
            abs += (e - g).abs();
            for (k, t) in [1.0, 2.0, 4.0].iter().enumerate() {
                bad[k] += ((e - g).abs() > *t) as usize;
            }
            if *e > 0.5 && *g > 0.5 {
                dabs += (fb / e - fb / g).abs();
            }
        }
    }
    let eval_ok = s.valid == n && s.abs_disp == abs && s.bad == bad && s.abs_depth == dabs;
    outcome(
        pfm_ok && resume_ok && eval_ok,
        format!("PFM round trip lossless: {pfm_ok}; checkpoint resume bit-identical: {resume_ok}; eval equals brute force: {eval_ok}"),
    )
}

fn main() {
    // tests run by `cargo test` pass filter arguments; listing must not run the suite
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradient_correctness()),
        ("wave-optics invariants", wave_optics_invariants()),
        ("scale factor", scale_factor()),
        ("geometry oracle", geometry_oracle()),
        ("trinocular ordering", trinocular_ordering()),
    ];
    let indoor = reference_run(PresetName::Indoor, 0.02);
    results.push(("joint optimization progress", joint_progress(&indoor)));
    results.push(("environment specialization ordering", environment_ordering(&indoor)));
    results.push(("target-design self-consistency", target_design()));
    results.push(("I/O and determinism", io_and_determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {}/{} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
