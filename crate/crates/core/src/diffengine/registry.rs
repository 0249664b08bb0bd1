//! Small self-contained gradient checks, one per recorded primitive and
//! differentiable input. Each reduces the primitive output to a scalar with
//! a fixed random projection.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};
use rand::Rng;

use crate::diffengine::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::diffengine::tape::{AdjointTape, DiffValue};
use crate::error::Result;
use crate::rng::rng_for;
use crate::scenesim::CaptureConfig;
use crate::wavefield::{CenteredDft, ComplexField, Resampler};

type Composite = Box<dyn Fn(&AdjointTape<f64>, &DiffValue<f64>) -> Result<DiffValue<f64>>>;

/// One registered check: a composite and the point it is evaluated at.
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub composite: Composite,
    pub point: ArrayD<f64>,
}

impl PrimitiveCheck {
    pub fn run(&self, opts: &GradCheckOptions) -> Result<GradCheckReport> {
        check_gradients(&self.composite, &self.point, opts)
    }
}

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> ArrayD<f64> {
    let mut rng = rng_for(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(lo..hi))
}

/// `Σ w ⊙ v` with a seeded constant `w`.
pub fn project(tape: &AdjointTape<f64>, v: &DiffValue<f64>, seed: u64) -> Result<DiffValue<f64>> {
    let w = DiffValue::constant(random(v.shape(), -1.0, 1.0, seed));
    let prod = tape.mul(v, &w)?;
    tape.sum(&prod)
}

fn check(name: &'static str, point: ArrayD<f64>, f: impl Fn(&AdjointTape<f64>, &DiffValue<f64>) -> Result<DiffValue<f64>> + 'static) -> PrimitiveCheck {
    PrimitiveCheck { name, composite: Box::new(f), point }
}

/// Every differentiable primitive on instances with `N ≤ 32`.
pub fn primitive_checks() -> Vec<PrimitiveCheck> {
    let n = 16;
    let mut out = Vec::new();

    let other = random(&[6, 7], -1.0, 1.0, 11);
    let o = other.clone();
    out.push(check("add", random(&[6, 7], -1.0, 1.0, 1), move |t, x| {
        let y = t.add(x, &DiffValue::constant(o.clone()))?;
        project(t, &y, 100)
    }));
    let o = other.clone();
    out.push(check("sub", random(&[6, 7], -1.0, 1.0, 2), move |t, x| {
        let y = t.sub(&DiffValue::constant(o.clone()), x)?;
        project(t, &y, 101)
    }));
    let o = other.clone();
    out.push(check("mul", random(&[6, 7], -1.0, 1.0, 3), move |t, x| {
        let y = t.mul(x, &DiffValue::constant(o.clone()))?;
        let y = t.mul(&y, x)?;
        project(t, &y, 102)
    }));
    out.push(check("scale+offset", random(&[6, 7], -1.0, 1.0, 4), |t, x| {
        let y = t.offset(&t.scale(x, -2.5)?, 0.75)?;
        project(t, &y, 103)
    }));
    out.push(check("reshape", random(&[6, 8], -1.0, 1.0, 5), |t, x| {
        let y = t.reshape(x, &[2, 3, 8])?;
        project(t, &y, 104)
    }));

    let laser = ComplexField::collimated(n, 1e-6, 850e-9, 1.0 / n as f64, false).expect("valid field");
    out.push(check("phase_modulate", random(&[n, n], 0.0, 1.0, 6), move |t, x| {
        let u = t.phase_modulate(x, &laser)?;
        project(t, &u, 105)
    }));
    let plan = Arc::new(CenteredDft::new(n));
    out.push(check("dft2c", random(&[n, n, 2], -1.0, 1.0, 7), move |t, x| {
        let u = t.dft2c(x, &plan)?;
        project(t, &u, 106)
    }));
    out.push(check("sq_magnitude", random(&[n, n, 2], -1.0, 1.0, 8), |t, x| {
        let p = t.sq_magnitude(x)?;
        project(t, &p, 107)
    }));
    out.push(check("zeroth_order", random(&[n, n], 0.0, 1.0, 9), |t, x| {
        let p = t.zeroth_order(x, 0.1)?;
        project(t, &p, 108)
    }));
    out.push(check("clamp_min", random(&[n, n], -1.0, 1.0, 32), |t, x| {
        let p = t.clamp_min(x, 0.0)?;
        project(t, &p, 122)
    }));
    let op = Arc::new(Resampler::new(n, 1.0392).expect("valid scale"));
    out.push(check("resample", random(&[n, n], 0.0, 1.0, 10), move |t, x| {
        let p = t.resample(x, &op)?;
        project(t, &p, 109)
    }));

    let disp = random(&[n, n], 0.2, 6.8, 12);
    let occ = Array2::from_shape_fn((n, n), |(y, x)| if (x + 2 * y) % 7 == 0 { 0.0 } else { 1.0 });
    let (d, m) = (disp.clone(), occ.clone());
    out.push(check("warp/pattern", random(&[n, n], 0.0, 1.0, 13), move |t, x| {
        let p = t.warp(x, &DiffValue::constant(d.clone()), &m, 0.5)?;
        project(t, &p, 110)
    }));
    let (pat, m) = (random(&[n, n], 0.0, 1.0, 14), occ.clone());
    out.push(check("warp/disparity", disp.clone(), move |t, x| {
        let p = t.warp(&DiffValue::constant(pat.clone()), x, &m, -0.5)?;
        project(t, &p, 111)
    }));

    let refl = Array2::from_shape_fn((n, n), |(y, x)| 0.3 + 0.04 * ((x * 3 + y) % 10) as f64);
    let noise = random(&[n, n], -0.02, 0.02, 15).into_dimensionality().expect("2-D");
    let cfg = CaptureConfig::new(1.0, 0.1, 1.5, 0.0, 0).expect("valid config");
    out.push(check("capture", random(&[n, n], 0.0, 1.0, 16), move |t, x| {
        // some pixels saturate; the checker skips stencils that straddle the clip
        let j = t.capture(x, &refl, &noise, &cfg)?;
        project(t, &j, 112)
    }));
    out.push(check("standardize", random(&[n, n], 0.0, 1.0, 17), |t, x| {
        let y = t.standardize(x)?;
        project(t, &y, 113)
    }));

    let kernel: Array4<f64> = random(&[3, 2, 3, 3], -1.0, 1.0, 18).into_dimensionality().expect("4-D");
    let bias: Array1<f64> = random(&[3], -1.0, 1.0, 19).into_dimensionality().expect("1-D");
    let image: Array3<f64> = random(&[2, 8, 9], 0.0, 1.0, 20).into_dimensionality().expect("3-D");
    let (k, b) = (kernel.clone(), bias.clone());
    out.push(check("conv2d/input", image.clone().into_dyn(), move |t, x| {
        let y = t.conv2d(x, &DiffValue::constant(k.clone().into_dyn()), &DiffValue::constant(b.clone().into_dyn()))?;
        project(t, &y, 114)
    }));
    let (img, b) = (image.clone(), bias.clone());
    out.push(check("conv2d/kernel", kernel.clone().into_dyn(), move |t, x| {
        let y = t.conv2d(&DiffValue::constant(img.clone().into_dyn()), x, &DiffValue::constant(b.clone().into_dyn()))?;
        project(t, &y, 115)
    }));
    let (img, k) = (image.clone(), kernel.clone());
    out.push(check("conv2d/bias", bias.into_dyn(), move |t, x| {
        let y = t.conv2d(&DiffValue::constant(img.clone().into_dyn()), &DiffValue::constant(k.clone().into_dyn()), x)?;
        project(t, &y, 116)
    }));

    let feat_b = random(&[2, 8, 12], 0.0, 1.0, 21);
    let fb = feat_b.clone();
    out.push(check("cost_volume/reference", random(&[2, 8, 12], 0.0, 1.0, 22), move |t, x| {
        let c = t.cost_volume(x, &DiffValue::constant(fb.clone()), 5, 1)?;
        project(t, &c, 117)
    }));
    let fa = random(&[2, 8, 12], 0.0, 1.0, 23);
    out.push(check("cost_volume/other", feat_b, move |t, x| {
        let c = t.cost_volume(&DiffValue::constant(fa.clone()), x, 5, 1)?;
        project(t, &c, 118)
    }));

    let narrow = random(&[4, 5, 6], 0.0, 3.0, 24);
    let nv = narrow.clone();
    out.push(check("fuse/wide", random(&[7, 5, 6], 0.0, 3.0, 25), move |t, x| {
        let c = t.fuse(x, &DiffValue::constant(nv.clone()), 0.5)?;
        project(t, &c, 119)
    }));
    let wide = random(&[7, 5, 6], 0.0, 3.0, 26);
    out.push(check("fuse/narrow", narrow, move |t, x| {
        let c = t.fuse(&DiffValue::constant(wide.clone()), x, 0.5)?;
        project(t, &c, 120)
    }));
    out.push(check("soft_argmin", random(&[6, 5, 7], 0.0, 4.0, 27), |t, x| {
        let d = t.soft_argmin(x, 0.7)?;
        project(t, &d, 121)
    }));

    let gt: Array2<f64> = random(&[8, 9], 0.0, 5.0, 28).into_dimensionality().expect("2-D");
    let mask = Array2::from_shape_fn((8, 9), |(y, x)| (x + y) % 4 != 0);
    out.push(check("masked_mae", random(&[8, 9], 0.0, 5.0, 29), move |t, x| t.masked_mae(x, &gt, &mask)));
    let target = random(&[8, 9], 0.0, 1.0, 30);
    out.push(check("squared_error", random(&[8, 9], 0.0, 1.0, 31), move |t, x| t.squared_error(x, &target)));
    out
}
