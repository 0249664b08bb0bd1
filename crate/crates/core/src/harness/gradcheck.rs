//! Gradient-check report over every primitive plus the full optics-to-loss
//! chain.

use std::fmt::Write as _;

use crate::diffengine::{check_gradients, primitive_checks, AdjointTape, DiffValue, GradCheckOptions, GradCheckReport};
use crate::error::Result;
use crate::matcher::{EncoderValues, FeatureMode, MatcherParams};
use crate::optimize::{scene_loss_on, Optics, OpticsConfig, SceneTerm};
use crate::scenesim::{generate_toy_scene, random_two_plane, CameraRig, CaptureConfig};

pub const FULL_CHAIN: &str = "full-chain";

/// Heights → pattern → captures → matcher → masked loss on a 16×16 DOE.
pub fn full_chain_report(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let n = 16;
    let rig = CameraRig::centered(6e-3, 5.3e-6, 6e-3);
    let optics = Optics::new(OpticsConfig::new(n, 1.5), &rig)?;
    let scene = generate_toy_scene(&random_two_plane(n, n, 3), &rig, n, n)?;
    let mask = scene.valid_mask(1.0);
    let capture = CaptureConfig::new(1.0, 0.0, 1.5, 0.02, 4)?;
    let params = MatcherParams::new(FeatureMode::Patch, 12);
    let x = optics.random_heights(6).into_dyn();
    check_gradients(
        |tape: &AdjointTape<f64>, t: &DiffValue<f64>| {
            let cam = EncoderValues::constant(&params.camera);
            let ill = EncoderValues::constant(&params.illumination);
            let term = SceneTerm { scene: &scene, mask: &mask, capture };
            scene_loss_on(tape, t, &cam, &ill, &optics, &params, &rig, &term)
        },
        &x,
        opts,
    )
}

#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub name: String,
    pub report: GradCheckReport,
}

/// Runs the checks whose name contains `filter` (all when `None`).
pub fn gradcheck_all(opts: &GradCheckOptions, filter: Option<&str>) -> Result<Vec<GradCheckRow>> {
    let keep = |name: &str| filter.is_none_or(|f| name.contains(f));
    let mut rows = Vec::new();
    for check in primitive_checks() {
        if keep(check.name) {
            rows.push(GradCheckRow { name: check.name.to_string(), report: check.run(opts)? });
        }
    }
    if keep(FULL_CHAIN) {
        rows.push(GradCheckRow { name: FULL_CHAIN.into(), report: full_chain_report(opts)? });
    }
    Ok(rows)
}

pub fn format_rows(rows: &[GradCheckRow], tol: f64) -> String {
    let mut out = format!("{:<28} {:>7} {:>6} {:>12} {:>12}  status\n", "check", "probes", "kinks", "max_rel", "mean_rel");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<28} {:>7} {:>6} {:>12.3e} {:>12.3e}  {}",
            r.name,
            r.report.probes.len(),
            r.report.kinks.len(),
            r.report.max_rel_error,
            r.report.mean_rel_error,
            if r.report.passes(tol) { "ok" } else { "FAIL" }
        );
    }
    out
}
