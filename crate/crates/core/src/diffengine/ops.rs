//! Recorded primitives. Each computes its forward value eagerly and stores a
//! closure for the vector-Jacobian product.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis, Dimension, Ix2, Ix3, IxDyn, Zip};

use crate::diffengine::tape::{AdjointTape, DiffValue};
use crate::error::{Error, Result};
use crate::matcher::kernels;
use crate::scalar::Real;
use crate::scenesim::{source_pos, warp_linear, warp_linear_adjoint_disp, warp_linear_adjoint_src, CaptureConfig};
use crate::wavefield::{CenteredDft, ComplexField, Resampler};

fn dims<T: Real, D: Dimension>(v: &ArrayD<T>, what: &str) -> Result<ndarray::Array<T, D>> {
    v.clone()
        .into_dimensionality::<D>()
        .map_err(|_| Error::Shape(format!("{what}: unexpected rank {:?}", v.shape())))
}

fn same_shape<T: Real>(a: &DiffValue<T>, b: &DiffValue<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn scalar<T: Real>(v: T) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

fn cot_scalar<T: Real>(g: &ArrayD<T>) -> T {
    *g.iter().next().expect("scalar cotangent")
}

/// Splits an interleaved `[N, N, 2]` complex grid.
pub(crate) fn split_complex<T: Real>(u: &Array3<T>) -> (Array2<T>, Array2<T>) {
    (u.index_axis(Axis(2), 0).to_owned(), u.index_axis(Axis(2), 1).to_owned())
}

pub(crate) fn join_complex<T: Real>(re: &Array2<T>, im: &Array2<T>) -> Array3<T> {
    let (h, w) = re.dim();
    Array3::from_shape_fn((h, w, 2), |(y, x, c)| if c == 0 { re[[y, x]] } else { im[[y, x]] })
}

impl<T: Real> AdjointTape<T> {
    pub fn add(&self, a: &DiffValue<T>, b: &DiffValue<T>) -> Result<DiffValue<T>> {
        same_shape(a, b, "add")?;
        let value = a.value() + b.value();
        self.record("add", value, &[a, b], Box::new(|g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: &DiffValue<T>, b: &DiffValue<T>) -> Result<DiffValue<T>> {
        same_shape(a, b, "sub")?;
        let value = a.value() - b.value();
        self.record("sub", value, &[a, b], Box::new(|g| vec![Some(g.clone()), Some(g.mapv(|v| -v))]))
    }

    /// Elementwise product.
    pub fn mul(&self, a: &DiffValue<T>, b: &DiffValue<T>) -> Result<DiffValue<T>> {
        same_shape(a, b, "mul")?;
        let value = a.value() * b.value();
        let (va, vb) = (a.value().clone(), b.value().clone());
        self.record("mul", value, &[a, b], Box::new(move |g| vec![Some(g * &vb), Some(g * &va)]))
    }

    pub fn scale(&self, a: &DiffValue<T>, c: T) -> Result<DiffValue<T>> {
        let value = a.value().mapv(|v| v * c);
        self.record("scale", value, &[a], Box::new(move |g| vec![Some(g.mapv(|v| v * c))]))
    }

    pub fn offset(&self, a: &DiffValue<T>, c: T) -> Result<DiffValue<T>> {
        let value = a.value().mapv(|v| v + c);
        self.record("offset", value, &[a], Box::new(|g| vec![Some(g.clone())]))
    }

    pub fn sum(&self, a: &DiffValue<T>) -> Result<DiffValue<T>> {
        let shape = a.value().raw_dim();
        let value = scalar(a.value().sum());
        self.record(
            "sum",
            value,
            &[a],
            Box::new(move |g| vec![Some(ArrayD::from_elem(shape, cot_scalar(g)))]),
        )
    }

    pub fn reshape(&self, a: &DiffValue<T>, shape: &[usize]) -> Result<DiffValue<T>> {
        let old = a.shape().to_vec();
        let value = a
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| Error::Shape(format!("reshape {old:?} -> {shape:?}: {e}")))?;
        self.record(
            "reshape",
            value,
            &[a],
            Box::new(move |g| {
                let g = g.as_standard_layout().into_owned();
                vec![Some(g.into_shape_with_order(IxDyn(&old)).expect("same size"))]
            }),
        )
    }

    /// Applies a phase-only element to a laser field. `t` holds normalized
    /// heights (one unit = one full wave of delay), so the phase is `2π·t`.
    /// Output is the interleaved complex field `[N, N, 2]`.
    pub fn phase_modulate(&self, t: &DiffValue<T>, laser: &ComplexField<T>) -> Result<DiffValue<T>> {
        let t2: Array2<T> = dims(t.value(), "phase_modulate")?;
        if t2.dim() != laser.re().dim() {
            return Err(Error::Shape(format!("heights {:?} vs field {:?}", t2.dim(), laser.re().dim())));
        }
        let tau = T::TAU();
        let mut re = laser.re().clone();
        let mut im = laser.im().clone();
        Zip::from(&mut re).and(&mut im).and(&t2).for_each(|r, i, &h| {
            let (s, c) = (tau * h).sin_cos();
            let (r0, i0) = (*r, *i);
            *r = r0 * c - i0 * s;
            *i = r0 * s + i0 * c;
        });
        let out = join_complex(&re, &im);
        self.record(
            "phase_modulate",
            out.into_dyn(),
            &[t],
            Box::new(move |g| {
                let g: Array3<T> = dims(g, "phase_modulate cotangent").expect("shape");
                let grad = Array2::from_shape_fn(re.dim(), |(y, x)| {
                    tau * (g[[y, x, 1]] * re[[y, x]] - g[[y, x, 0]] * im[[y, x]])
                });
                vec![Some(grad.into_dyn())]
            }),
        )
    }

    /// Centered unitary 2D DFT of an interleaved complex grid.
    pub fn dft2c(&self, u: &DiffValue<T>, plan: &Arc<CenteredDft<T>>) -> Result<DiffValue<T>> {
        let u3: Array3<T> = dims(u.value(), "dft2c")?;
        let (re, im) = split_complex(&u3);
        if re.dim() != (plan.size(), plan.size()) {
            return Err(Error::Shape(format!("dft2c: field {:?} vs plan {}", re.dim(), plan.size())));
        }
        let (fr, fi) = plan.apply(&re, &im, true);
        if fr.iter().chain(fi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("far-field propagation".into()));
        }
        let plan = Arc::clone(plan);
        self.record(
            "dft2c",
            join_complex(&fr, &fi).into_dyn(),
            &[u],
            Box::new(move |g| {
                let g: Array3<T> = dims(g, "dft2c cotangent").expect("shape");
                let (gr, gi) = split_complex(&g);
                let (ar, ai) = plan.apply(&gr, &gi, false);
                vec![Some(join_complex(&ar, &ai).into_dyn())]
            }),
        )
    }

    /// `|U|²` of an interleaved complex grid.
    pub fn sq_magnitude(&self, u: &DiffValue<T>) -> Result<DiffValue<T>> {
        let u3: Array3<T> = dims(u.value(), "sq_magnitude")?;
        let (re, im) = split_complex(&u3);
        let value = Zip::from(&re).and(&im).map_collect(|&r, &i| r * r + i * i);
        self.record(
            "sq_magnitude",
            value.into_dyn(),
            &[u],
            Box::new(move |g| {
                let g: Array2<T> = dims(g, "sq_magnitude cotangent").expect("shape");
                let two = T::of(2.0);
                let gr = Zip::from(&re).and(&g).map_collect(|&r, &c| two * r * c);
                let gi = Zip::from(&im).and(&g).map_collect(|&i, &c| two * i * c);
                vec![Some(join_complex(&gr, &gi).into_dyn())]
            }),
        )
    }

    /// `(1−κ)·P + κ·ΣP·δ_center`.
    pub fn zeroth_order(&self, p: &DiffValue<T>, kappa: T) -> Result<DiffValue<T>> {
        let p2: Array2<T> = dims(p.value(), "zeroth_order")?;
        let (h, w) = p2.dim();
        let c = (h / 2, w / 2);
        let mut value = p2.mapv(|v| (T::one() - kappa) * v);
        value[c] += kappa * p2.sum();
        self.record(
            "zeroth_order",
            value.into_dyn(),
            &[p],
            Box::new(move |g| {
                let g: Array2<T> = dims(g, "zeroth_order cotangent").expect("shape");
                let gc = g[c];
                vec![Some(g.mapv(|v| (T::one() - kappa) * v + kappa * gc).into_dyn())]
            }),
        )
    }

    /// `max(x, lo)`; gradient passes where `x > lo`.
    pub fn clamp_min(&self, x: &DiffValue<T>, lo: T) -> Result<DiffValue<T>> {
        let keep = x.value().mapv(|v| v > lo);
        self.note_branches("clamp_min", keep.iter().map(|&k| k as i8));
        let value = x.value().mapv(|v| v.max(lo));
        self.record(
            "clamp_min",
            value,
            &[x],
            Box::new(move |g| {
                let out = ndarray::Zip::from(g).and(&keep).map_collect(|&c, &k| if k { c } else { T::zero() });
                vec![Some(out)]
            }),
        )
    }

    /// Bicubic rescale onto the camera grid.
    pub fn resample(&self, p: &DiffValue<T>, op: &Arc<Resampler<T>>) -> Result<DiffValue<T>> {
        let p2: Array2<T> = dims(p.value(), "resample")?;
        if p2.dim() != (op.size(), op.size()) {
            return Err(Error::Shape(format!("resample: {:?} vs operator {}", p2.dim(), op.size())));
        }
        let value = op.forward(&p2);
        let op = Arc::clone(op);
        self.record(
            "resample",
            value.into_dyn(),
            &[p],
            Box::new(move |g| {
                let g: Array2<T> = dims(g, "resample cotangent").expect("shape");
                vec![Some(op.adjoint(&g).into_dyn())]
            }),
        )
    }

    /// Disparity warp `occ · P(x − shift·d)`, differentiable in both the
    /// pattern and the disparity. `occ` is a constant 0/1 grid.
    pub fn warp(&self, p: &DiffValue<T>, disp: &DiffValue<T>, occ: &Array2<T>, shift: T) -> Result<DiffValue<T>> {
        let p2: Array2<T> = dims(p.value(), "warp pattern")?;
        let d2: Array2<T> = dims(disp.value(), "warp disparity")?;
        let value = warp_linear(&p2, &d2, occ, shift)?;
        if self.tracks(disp) {
            // the disparity derivative jumps where the sample crosses a pixel
            self.note_branches(
                "warp",
                d2.indexed_iter().map(|((_, x), &d)| source_pos(x, d, shift).0 as i8),
            );
        }
        let occ = occ.clone();
        let need_d = self.tracks(disp);
        self.record(
            "warp",
            value.into_dyn(),
            &[p, disp],
            Box::new(move |g| {
                let g: Array2<T> = dims(g, "warp cotangent").expect("shape");
                let gp = warp_linear_adjoint_src(&g, &d2, &occ, shift);
                let gd = need_d.then(|| warp_linear_adjoint_disp(&g, &p2, &d2, &occ, shift).into_dyn());
                vec![Some(gp.into_dyn()), gd]
            }),
        )
    }

    /// Sensor model `clip(γ(α + βP)·I + n)` with constant reflectance and
    /// noise. The clip passes gradient through unchanged strictly inside the
    /// range and blocks it outside.
    pub fn capture(
        &self,
        p_view: &DiffValue<T>,
        refl: &Array2<T>,
        noise: &Array2<T>,
        cfg: &CaptureConfig<T>,
    ) -> Result<DiffValue<T>> {
        let p2: Array2<T> = dims(p_view.value(), "capture")?;
        if refl.dim() != p2.dim() || noise.dim() != p2.dim() {
            return Err(Error::Shape("capture: reflectance/noise vs pattern".into()));
        }
        let raw = crate::scenesim::radiometry(&p2, refl, noise, cfg);
        let (lo, hi) = (cfg.clip_lo, cfg.clip_hi);
        let region = raw.mapv(|v| if v < lo { -1i8 } else if v > hi { 1 } else { 0 });
        self.note_branches("capture", region.iter().copied());
        let value = raw.mapv(|v| v.max(lo).min(hi));
        let gain = refl.mapv(|i| cfg.gamma * cfg.beta * i);
        self.record(
            "capture",
            value.into_dyn(),
            &[p_view],
            Box::new(move |g| {
                let g: Array2<T> = dims(g, "capture cotangent").expect("shape");
                let out = Zip::from(&g)
                    .and(&gain)
                    .and(&region)
                    .map_collect(|&c, &k, &r| if r == 0 { c * k } else { T::zero() });
                vec![Some(out.into_dyn())]
            }),
        )
    }

    /// Global standardization `(x − mean) / std`. A constant input (std below
    /// `1e-12`) yields `x − mean` instead.
    pub fn standardize(&self, x: &DiffValue<T>) -> Result<DiffValue<T>> {
        let n = T::of_usize(x.value().len().max(1));
        let mean = x.value().sum() / n;
        let centered = x.value().mapv(|v| v - mean);
        let var = centered.iter().map(|&v| v * v).sum::<T>() / n;
        let std = var.sqrt();
        let flat = !(std > T::of(1e-12));
        self.note_branches("standardize", [flat as i8]);
        let value = if flat { centered } else { centered.mapv(|v| v / std) };
        let y = value.clone();
        self.record(
            "standardize",
            value,
            &[x],
            Box::new(move |g| {
                let gm = g.sum() / n;
                if flat {
                    return vec![Some(g.mapv(|v| v - gm))];
                }
                let gy = Zip::from(g).and(&y).fold(T::zero(), |acc, &a, &b| acc + a * b) / n;
                let out = Zip::from(g).and(&y).map_collect(|&a, &b| (a - gm - b * gy) / std);
                vec![Some(out)]
            }),
        )
    }

    /// Multi-channel convolution with edge replication. `input` is
    /// `[C, H, W]`, `kernel` `[O, C, k, k]`, `bias` `[O]`.
    pub fn conv2d(&self, input: &DiffValue<T>, kernel: &DiffValue<T>, bias: &DiffValue<T>) -> Result<DiffValue<T>> {
        let x: Array3<T> = dims(input.value(), "conv2d input")?;
        let k: Array4<T> = dims(kernel.value(), "conv2d kernel")?;
        let b: Array1<T> = dims(bias.value(), "conv2d bias")?;
        let (o, c, kh, kw) = k.dim();
        if c != x.shape()[0] || b.len() != o || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {:?}, kernel {:?}, bias {:?}",
                x.shape(),
                k.shape(),
                b.shape()
            )));
        }
        let value = kernels::conv2d(&x, &k, &b);
        self.record(
            "conv2d",
            value.into_dyn(),
            &[input, kernel, bias],
            Box::new(move |g| {
                let g: Array3<T> = dims(g, "conv2d cotangent").expect("shape");
                let (gi, gk, gb) = kernels::conv2d_adjoint(&g, &x, &k);
                vec![Some(gi.into_dyn()), Some(gk.into_dyn()), Some(gb.into_dyn())]
            }),
        )
    }

    /// Matching cost `[D, H, W]`: channel-summed absolute difference between
    /// `reference` and `other` shifted by each candidate `d`, summed over a
    /// `(2r+1)²` window. Out-of-range lookups replicate the edge.
    pub fn cost_volume(&self, reference: &DiffValue<T>, other: &DiffValue<T>, dmax: usize, radius: usize) -> Result<DiffValue<T>> {
        same_shape(reference, other, "cost_volume")?;
        let a: Array3<T> = dims(reference.value(), "cost_volume")?;
        let b: Array3<T> = dims(other.value(), "cost_volume")?;
        let w = a.shape()[2];
        if dmax == 0 || dmax >= w {
            return Err(Error::Range(format!("need 1 <= D_max < W, got D_max={dmax}, W={w}")));
        }
        if self.tracks(reference) || self.tracks(other) {
            self.note_branches("cost_volume", kernels::abs_diff_signs(&a, &b, dmax));
        }
        let raw = kernels::abs_diff_volume(&a, &b, dmax);
        let value = kernels::box_sum(&raw, radius);
        self.record(
            "cost_volume",
            value.into_dyn(),
            &[reference, other],
            Box::new(move |g| {
                let g: Array3<T> = dims(g, "cost_volume cotangent").expect("shape");
                let graw = kernels::box_sum_adjoint(&g, radius);
                let (ga, gb) = kernels::abs_diff_adjoint(&graw, &a, &b);
                vec![Some(ga.into_dyn()), Some(gb.into_dyn())]
            }),
        )
    }

    /// `fused[d] = wide[d] + narrow[d · narrow_per_wide]`, linearly
    /// interpolated between narrow slices.
    pub fn fuse(&self, wide: &DiffValue<T>, narrow: &DiffValue<T>, narrow_per_wide: T) -> Result<DiffValue<T>> {
        let cw: Array3<T> = dims(wide.value(), "fuse wide")?;
        let cn: Array3<T> = dims(narrow.value(), "fuse narrow")?;
        if !(narrow_per_wide > T::zero()) {
            return Err(Error::InvalidConfig("baseline ratio must be positive".into()));
        }
        if cw.shape()[1..] != cn.shape()[1..] {
            return Err(Error::Shape("fuse: volumes differ in H, W".into()));
        }
        let dn = cn.shape()[0];
        let needed = (T::of_usize(cw.shape()[0] - 1) * narrow_per_wide).ceil();
        if T::of_usize(dn - 1) < needed {
            return Err(Error::Range(format!("narrow volume has {dn} slices, needs {}", needed + T::one())));
        }
        let value = kernels::fuse(&cw, &cn, narrow_per_wide);
        self.record(
            "fuse",
            value.into_dyn(),
            &[wide, narrow],
            Box::new(move |g| {
                let g3: Array3<T> = dims(g, "fuse cotangent").expect("shape");
                let gn = kernels::fuse_adjoint_narrow(&g3, dn, narrow_per_wide);
                vec![Some(g.clone()), Some(gn.into_dyn())]
            }),
        )
    }

    /// Soft argmin over the first axis: `Σ_d d · softmax(−cost/τ)_d`.
    pub fn soft_argmin(&self, volume: &DiffValue<T>, temperature: T) -> Result<DiffValue<T>> {
        if !(temperature > T::zero()) {
            return Err(Error::InvalidConfig(format!("softmax temperature must be positive, got {temperature}")));
        }
        let v: Array3<T> = dims(volume.value(), "soft_argmin")?;
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("cost volume".into()));
        }
        let p = kernels::softmax_neg(&v, temperature);
        let out = kernels::expectation(&p);
        let o = out.clone();
        self.record(
            "soft_argmin",
            out.into_dyn(),
            &[volume],
            Box::new(move |g| {
                let g: Array2<T> = dims(g, "soft_argmin cotangent").expect("shape");
                vec![Some(kernels::soft_argmin_adjoint(&g, &p, &o, temperature).into_dyn())]
            }),
        )
    }

    /// Mean of `|est − gt|` over `mask`. The subgradient at equality is 0.
    pub fn masked_mae(&self, est: &DiffValue<T>, gt: &Array2<T>, mask: &Array2<bool>) -> Result<DiffValue<T>> {
        let e: Array2<T> = dims(est.value(), "masked_mae")?;
        if e.dim() != gt.dim() || e.dim() != mask.dim() {
            return Err(Error::Shape("masked_mae: estimate, ground truth and mask differ".into()));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::InvalidScene("no valid pixels for the loss".into()));
        }
        let n = T::of_usize(count);
        let signs = Zip::from(&e).and(gt).and(mask).map_collect(|&a, &b, &m| {
            if m {
                kernels::sign_i8(a - b)
            } else {
                0
            }
        });
        self.note_branches("masked_mae", signs.iter().copied());
        let total = Zip::from(&e)
            .and(gt)
            .and(mask)
            .fold(T::zero(), |acc, &a, &b, &m| if m { acc + (a - b).abs() } else { acc });
        self.record(
            "masked_mae",
            scalar(total / n),
            &[est],
            Box::new(move |g| {
                let c = cot_scalar(g) / n;
                vec![Some(signs.mapv(|s| T::of(s as f64) * c).into_dyn())]
            }),
        )
    }

    /// `Σ (x − target)²`.
    pub fn squared_error(&self, x: &DiffValue<T>, target: &ArrayD<T>) -> Result<DiffValue<T>> {
        if x.shape() != target.shape() {
            return Err(Error::Shape("squared_error: value vs target".into()));
        }
        let diff = x.value() - target;
        let total = diff.iter().map(|&v| v * v).sum::<T>();
        self.record(
            "squared_error",
            scalar(total),
            &[x],
            Box::new(move |g| {
                let c = cot_scalar(g) * T::of(2.0);
                vec![Some(diff.mapv(|v| v * c))]
            }),
        )
    }
}

/// Rank check helpers for callers holding a `DiffValue`.
pub fn as_grid<T: Real>(v: &DiffValue<T>) -> Result<Array2<T>> {
    dims::<T, Ix2>(v.value(), "grid")
}

pub fn as_volume<T: Real>(v: &DiffValue<T>) -> Result<Array3<T>> {
    dims::<T, Ix3>(v.value(), "volume")
}

