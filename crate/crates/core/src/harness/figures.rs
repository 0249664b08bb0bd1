//! Desk-scale figure analogues: boundary error maps, pattern grids with
//! sparsity metrics, and target-design convergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::reference::{design_comparison, figure_runs, reference_config, trinocular_comparison, ComparisonSetup};
use crate::io::{color_preview, gray_preview, save_color_preview, save_gray_preview};
use crate::optimize::{load_checkpoint, pattern_metrics, Optics, PresetName};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig5" => Ok(Self::Fig5),
            "fig6" => Ok(Self::Fig6),
            "fig7" => Ok(Self::Fig7),
            "fig8" => Ok(Self::Fig8),
            other => Err(Error::InvalidConfig(format!("unknown figure `{other}` (fig5, fig6, fig7, fig8)"))),
        }
    }
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Fig5, Figure::Fig6, Figure::Fig7, Figure::Fig8];

    fn name(self) -> &'static str {
        match self {
            Self::Fig5 => "fig5",
            Self::Fig6 => "fig6",
            Self::Fig7 => "fig7",
            Self::Fig8 => "fig8",
        }
    }
}

/// Writes the artifacts of `which` into `outdir` and returns their paths.
/// Pattern figures read `<checkpoints>/<run>/checkpoint.bin`.
pub fn reproduce_figures(which: &[Figure], outdir: &Path, checkpoints: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    for fig in which {
        log::info!("generating {}", fig.name());
        match fig {
            Figure::Fig5 => written.extend(boundary_maps(outdir)?),
            Figure::Fig6 | Figure::Fig7 => written.extend(pattern_grid(fig.name(), outdir, checkpoints)?),
            Figure::Fig8 => written.extend(design_convergence(outdir)?),
        }
    }
    Ok(written)
}

fn boundary_maps(outdir: &Path) -> Result<Vec<PathBuf>> {
    let runs = trinocular_comparison(&ComparisonSetup::default())?;
    let mut csv = String::from("scene_seed,band_pixels,trinocular_mae_px,binocular_mae_px\n");
    for (c, _) in &runs {
        let _ = writeln!(csv, "{},{},{},{}", c.scene_seed, c.band_pixels, c.trinocular, c.binocular);
    }
    let csv_path = outdir.join("fig5_band_mae.csv");
    fs::write(&csv_path, csv)?;

    // the scene with the widest band shows the boundary behaviour best
    let (_, maps) = runs
        .iter()
        .max_by_key(|(c, _)| c.band_pixels)
        .ok_or_else(|| Error::InvalidConfig("comparison produced no scenes".into()))?;
    let err = |est: &Array2<f64>| (est - &maps.gt).mapv(f64::abs);
    let range = Some((0.0, 4.0));
    let tri = outdir.join("fig5_error_trinocular.png");
    let bi = outdir.join("fig5_error_binocular.png");
    save_color_preview(&tri, &upscale(&err(&maps.trinocular), 4), range)?;
    save_color_preview(&bi, &upscale(&err(&maps.binocular), 4), range)?;
    let band = outdir.join("fig5_band.png");
    save_gray_preview(&band, &upscale(&maps.band.mapv(|b| b as u8 as f64), 4), Some((0.0, 1.0)))?;
    Ok(vec![csv_path, tri, bi, band])
}

fn upscale(grid: &Array2<f64>, k: usize) -> Array2<f64> {
    let (h, w) = grid.dim();
    Array2::from_shape_fn((h * k, w * k), |(y, x)| grid[[y / k, x / k]])
}

fn pattern_grid(name: &str, outdir: &Path, root: &Path) -> Result<Vec<PathBuf>> {
    let mut patterns = Vec::new();
    for (dir, command) in figure_runs(name) {
        let path = root.join(&dir).join("checkpoint.bin");
        let state = load_checkpoint(&path).map_err(|e| match e {
            Error::Missing { path, .. } => Error::Missing {
                hint: format!("produce it with `{}`", command.replace("<root>", &root.display().to_string())),
                path,
            },
            other => other,
        })?;
        let cfg = run_config_for(root, &dir)?;
        let optics = Optics::new(cfg.optics, &cfg.rig)?;
        let pattern = optics.pattern(&state.heights)?.into_intensity();
        patterns.push((dir.display().to_string(), pattern));
    }
    let mut csv = String::from("run,dot_count,peak_to_mean,gini,top1_energy\n");
    let mut written = Vec::new();
    let mut tiles = Vec::new();
    for (run, p) in &patterns {
        let m = pattern_metrics(p);
        let _ = writeln!(csv, "{run},{},{},{},{}", m.dot_count, m.peak_to_mean, m.gini, m.top1_energy);
        let path = outdir.join(format!("{name}_{run}.png"));
        save_gray_preview(&path, &upscale(p, 8), None)?;
        written.push(path);
        tiles.push(gray_preview(&upscale(p, 8), None));
    }
    let csv_path = outdir.join(format!("{name}_metrics.csv"));
    fs::write(&csv_path, csv)?;
    let grid_path = outdir.join(format!("{name}_grid.png"));
    side_by_side(&tiles).save(&grid_path)?;
    written.push(csv_path);
    written.push(grid_path);
    Ok(written)
}

/// Config saved next to a run's checkpoint, or the reference config the
/// run name implies.
fn run_config_for(root: &Path, dir: &Path) -> Result<RunConfig> {
    let saved = root.join(dir).join("config.toml");
    if saved.exists() {
        return RunConfig::load(saved);
    }
    let name = dir.display().to_string();
    Ok(match name.as_str() {
        "outdoor" => reference_config(PresetName::Outdoor, 0.02),
        "sigma-0.6" => reference_config(PresetName::Generic, 0.6),
        "sigma-0.02" => reference_config(PresetName::Generic, 0.02),
        _ => reference_config(PresetName::Indoor, 0.02),
    })
}

fn side_by_side(tiles: &[GrayImage]) -> GrayImage {
    let gap = 4;
    let w = tiles.iter().map(|t| t.width() + gap).sum::<u32>().saturating_sub(gap);
    let h = tiles.iter().map(GrayImage::height).max().unwrap_or(0);
    let mut out = GrayImage::from_pixel(w.max(1), h.max(1), Luma([128]));
    let mut x = 0;
    for t in tiles {
        imageops::replace(&mut out, t, x as i64, 0);
        x += t.width() + gap;
    }
    out
}

fn design_convergence(outdir: &Path) -> Result<Vec<PathBuf>> {
    let d = design_comparison(200)?;
    let mut csv = String::from("iteration,iterative_fft_error,gradient_error\n");
    for (i, (a, b)) in d.iterative_fft.errors.iter().zip(&d.gradient.errors).enumerate() {
        let _ = writeln!(csv, "{i},{a:e},{b:e}");
    }
    let _ = writeln!(
        csv,
        "# correlation iterative_fft {} gradient {}",
        d.iterative_fft.correlation, d.gradient.correlation
    );
    let csv_path = outdir.join("fig8_convergence.csv");
    fs::write(&csv_path, csv)?;
    let plot_path = outdir.join("fig8_convergence.png");
    log_plot(&[(&d.iterative_fft.errors, [200, 40, 40]), (&d.gradient.errors, [40, 80, 200])], 480, 320)
        .save(&plot_path)?;
    let mut written = vec![csv_path, plot_path];
    for (tag, grid) in
        [("target", &d.target), ("iterative_fft", &d.iterative_fft.pattern), ("gradient", &d.gradient.pattern)]
    {
        let path = outdir.join(format!("fig8_{tag}.png"));
        color_preview(&upscale(grid, 4), None).save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Curves normalized to their first value, log scale on the y axis.
fn log_plot(curves: &[(&Vec<f64>, [u8; 3])], w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let margin = 10.0;
    let logs: Vec<Vec<f64>> = curves
        .iter()
        .map(|(c, _)| {
            let first = c.first().copied().filter(|v| *v > 0.0).unwrap_or(1.0);
            c.iter().map(|v| (v / first).max(1e-12).log10()).collect()
        })
        .collect();
    let lo = logs.iter().flatten().copied().fold(f64::INFINITY, f64::min).min(-1.0);
    let len = curves.iter().map(|(c, _)| c.len()).max().unwrap_or(1).max(2);
    let (pw, ph) = (w as f64 - 2.0 * margin, h as f64 - 2.0 * margin);
    let to_px = |i: usize, v: f64| (margin + pw * i as f64 / (len - 1) as f64, margin + ph * (v / lo).clamp(0.0, 1.0));
    for x in 0..w {
        img.put_pixel(x, (h as f64 - margin) as u32, Rgb([0, 0, 0]));
    }
    for y in 0..h {
        img.put_pixel(margin as u32, y, Rgb([0, 0, 0]));
    }
    for (vals, (_, colour)) in logs.iter().zip(curves) {
        for i in 1..vals.len() {
            let (x0, y0) = to_px(i - 1, vals[i - 1]);
            let (x1, y1) = to_px(i, vals[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
                if x >= 0.0 && y >= 0.0 && (x as u32) < w && (y as u32) < h {
                    img.put_pixel(x as u32, y as u32, Rgb(*colour));
                }
            }
        }
    }
    img
}
