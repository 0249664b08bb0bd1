//! Central finite-difference validation of adjoint gradients.
//!
//! For each probed coordinate `i` the checker compares the adjoint gradient
//! `a` with `n = (f(x + h·e_i) − f(x − h·e_i)) / 2h` using
//! `|a − n| / max(|a|, |n|, floor)`. Probes whose stencil changes a
//! primitive's branch pattern (a clamp switching region, an absolute value
//! changing sign, a warp sample crossing a pixel) are skipped and counted as
//! kink probes.

use ndarray::ArrayD;
use rand::seq::SliceRandom;

use crate::diffengine::tape::{AdjointTape, DiffValue};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub num_probes: usize,
    pub step: f64,
    pub seed: u64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { num_probes: 24, step: 1e-5, seed: 0, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub adjoint: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Coordinates skipped because the stencil crossed a kink.
    pub kinks: Vec<usize>,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.probes.is_empty() && self.max_rel_error < tol
    }
}

fn evaluate<T, F>(composite: &F, x: &ArrayD<T>) -> Result<(f64, u64)>
where
    T: Real,
    F: Fn(&AdjointTape<T>, &DiffValue<T>) -> Result<DiffValue<T>>,
{
    let tape = AdjointTape::new();
    let leaf = tape.leaf(x.clone())?;
    let out = composite(&tape, &leaf)?;
    let v = out
        .scalar()
        .ok_or_else(|| Error::Contract(format!("composite must return a scalar, got {:?}", out.shape())))?;
    Ok((v.as_f64(), tape.kink_signature()))
}

/// Validates the adjoint gradient of a scalar `composite` at `x`.
pub fn check_gradients<T, F>(composite: F, x: &ArrayD<T>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&AdjointTape<T>, &DiffValue<T>) -> Result<DiffValue<T>>,
{
    let tape = AdjointTape::new();
    let leaf = tape.leaf(x.clone())?;
    let out = composite(&tape, &leaf)?;
    let sig0 = tape.kink_signature();
    let grad = tape.backward(&out, &[&leaf])?.remove(0);
    let f0 = out.scalar().expect("backward accepted a scalar").as_f64();

    let (again, sig_again) = evaluate(&composite, x)?;
    if again.to_bits() != f0.to_bits() || sig_again != sig0 {
        return Err(Error::CheckInvalid(format!(
            "composite is not deterministic: {f0:e} then {again:e}"
        )));
    }

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng_for(opts.seed));
    let h = T::of(opts.step);
    let floor = opts.floor;
    let flat_x: Vec<T> = x.iter().copied().collect();
    let flat_g: Vec<T> = grad.iter().copied().collect();
    let mut probes = Vec::new();
    let mut kinks = Vec::new();
    for &i in &order {
        if probes.len() >= opts.num_probes {
            break;
        }
        let mut xp = x.clone();
        let mut xm = x.clone();
        let slot = |a: &mut ArrayD<T>, v: T| {
            *a.iter_mut().nth(i).expect("index in range") = v;
        };
        slot(&mut xp, flat_x[i] + h);
        slot(&mut xm, flat_x[i] - h);
        let (fp, sp) = evaluate(&composite, &xp)?;
        let (fm, sm) = evaluate(&composite, &xm)?;
        if sp != sig0 || sm != sig0 {
            kinks.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let adjoint = flat_g[i].as_f64();
        let rel = (adjoint - numeric).abs() / adjoint.abs().max(numeric.abs()).max(floor);
        probes.push(Probe { index: i, adjoint, numeric, rel_error: rel });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    let mean_rel_error = if probes.is_empty() {
        0.0
    } else {
        probes.iter().map(|p| p.rel_error).sum::<f64>() / probes.len() as f64
    };
    Ok(GradCheckReport { probes, kinks, max_rel_error, mean_rel_error, loss: f0 })
}
