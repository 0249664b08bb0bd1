//! Forward and adjoint kernels for the matching stages. Feature maps are
//! `[C, H, W]`, cost volumes `[D, H, W]`.

use ndarray::{Array1, Array2, Array3, Array4, Axis, Zip};
use ndarray::parallel::prelude::*;

use crate::scalar::Real;

#[inline]
fn clampi(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Multi-channel 2D correlation with edge replication:
/// `out[o,y,x] = b[o] + Σ_{c,i,j} k[o,c,i,j] · in[c, y+i−r, x+j−r]`.
pub(crate) fn conv2d<T: Real>(input: &Array3<T>, kernel: &Array4<T>, bias: &Array1<T>) -> Array3<T> {
    let (cin, h, w) = input.dim();
    let (cout, kc, kh, kw) = kernel.dim();
    assert_eq!(kc, cin);
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Array3::zeros((cout, h, w));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(o, mut plane)| {
            plane.fill(bias[o]);
            for c in 0..cin {
                for i in 0..kh {
                    for j in 0..kw {
                        let k = kernel[[o, c, i, j]];
                        if k == T::zero() {
                            continue;
                        }
                        for y in 0..h {
                            let sy = clampi(y as isize + i as isize - ry, h);
                            for x in 0..w {
                                let sx = clampi(x as isize + j as isize - rx, w);
                                plane[[y, x]] += k * input[[c, sy, sx]];
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Cotangents of [`conv2d`] for the input, kernel and bias.
pub(crate) fn conv2d_adjoint<T: Real>(
    g: &Array3<T>,
    input: &Array3<T>,
    kernel: &Array4<T>,
) -> (Array3<T>, Array4<T>, Array1<T>) {
    let (cin, h, w) = input.dim();
    let (cout, _, kh, kw) = kernel.dim();
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut gin = Array3::zeros((cin, h, w));
    let mut gk = Array4::zeros(kernel.raw_dim());
    let gb = Array1::from_shape_fn(cout, |o| g.index_axis(Axis(0), o).sum());
    for o in 0..cout {
        for c in 0..cin {
            for i in 0..kh {
                for j in 0..kw {
                    let k = kernel[[o, c, i, j]];
                    let mut acc = T::zero();
                    for y in 0..h {
                        let sy = clampi(y as isize + i as isize - ry, h);
                        for x in 0..w {
                            let sx = clampi(x as isize + j as isize - rx, w);
                            let gv = g[[o, y, x]];
                            acc += gv * input[[c, sy, sx]];
                            gin[[c, sy, sx]] += k * gv;
                        }
                    }
                    gk[[o, c, i, j]] = acc;
                }
            }
        }
    }
    (gin, gk, gb)
}

/// Channel-summed absolute difference for every candidate shift:
/// `raw[d,y,x] = Σ_c |a[c,y,x] − b[c,y,clamp(x−d)]|`.
pub(crate) fn abs_diff_volume<T: Real>(a: &Array3<T>, b: &Array3<T>, dmax: usize) -> Array3<T> {
    let (c, h, w) = a.dim();
    let mut raw = Array3::zeros((dmax, h, w));
    raw.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(d, mut plane)| {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let xo = clampi(x as isize - d as isize, w);
                        plane[[y, x]] += (a[[ch, y, x]] - b[[ch, y, xo]]).abs();
                    }
                }
            }
        });
    raw
}

/// Branch pattern of [`abs_diff_volume`]: sign of each difference.
pub(crate) fn abs_diff_signs<T: Real>(a: &Array3<T>, b: &Array3<T>, dmax: usize) -> Vec<i8> {
    let (c, h, w) = a.dim();
    let mut s = Vec::with_capacity(dmax * c * h * w);
    for d in 0..dmax {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let xo = clampi(x as isize - d as isize, w);
                    let v = a[[ch, y, x]] - b[[ch, y, xo]];
                    s.push(sign_i8(v));
                }
            }
        }
    }
    s
}

#[inline]
pub(crate) fn sign_i8<T: Real>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Cotangents of [`abs_diff_volume`] for both feature maps. The derivative of
/// `|·|` at zero is taken as 0.
pub(crate) fn abs_diff_adjoint<T: Real>(g: &Array3<T>, a: &Array3<T>, b: &Array3<T>) -> (Array3<T>, Array3<T>) {
    let (c, h, w) = a.dim();
    let dmax = g.shape()[0];
    let mut ga = Array3::zeros(a.raw_dim());
    let mut gb = Array3::zeros(b.raw_dim());
    for d in 0..dmax {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let xo = clampi(x as isize - d as isize, w);
                    let s = sign(a[[ch, y, x]] - b[[ch, y, xo]]) * g[[d, y, x]];
                    ga[[ch, y, x]] += s;
                    gb[[ch, y, xo]] -= s;
                }
            }
        }
    }
    (ga, gb)
}

fn box_rows<T: Real>(plane: &Array2<T>, r: usize, transpose: bool) -> Array2<T> {
    let (h, w) = plane.dim();
    let mut out = Array2::zeros((h, w));
    let r = r as isize;
    for y in 0..h {
        for x in 0..w {
            for k in -r..=r {
                let sx = clampi(x as isize + k, w);
                if transpose {
                    out[[y, sx]] += plane[[y, x]];
                } else {
                    out[[y, x]] += plane[[y, sx]];
                }
            }
        }
    }
    out
}

fn box_plane<T: Real>(plane: &Array2<T>, r: usize, transpose: bool) -> Array2<T> {
    let a = box_rows(plane, r, transpose);
    let b = box_rows(&a.t().to_owned(), r, transpose);
    b.t().as_standard_layout().into_owned()
}

/// Window sum of side `2r+1` per slice with edge replication.
pub(crate) fn box_sum<T: Real>(vol: &Array3<T>, r: usize) -> Array3<T> {
    box_apply(vol, r, false)
}

pub(crate) fn box_sum_adjoint<T: Real>(g: &Array3<T>, r: usize) -> Array3<T> {
    box_apply(g, r, true)
}

fn box_apply<T: Real>(vol: &Array3<T>, r: usize, transpose: bool) -> Array3<T> {
    if r == 0 {
        return vol.clone();
    }
    let mut out = Array3::zeros(vol.raw_dim());
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(vol.axis_iter(Axis(0)))
        .par_for_each(|mut o, v| o.assign(&box_plane(&v.to_owned(), r, transpose)));
    out
}

/// Narrow-volume lookup position for wide candidate `d`.
#[inline]
pub(crate) fn narrow_tap<T: Real>(d: usize, narrow_per_wide: T, dn: usize) -> (usize, usize, T) {
    let q = T::of_usize(d) * narrow_per_wide;
    let i = q.floor().to_usize().unwrap_or(0).min(dn - 1);
    let t = q - T::of_usize(i);
    let j = (i + 1).min(dn - 1);
    (i, j, t)
}

/// `fused[d] = wide[d] + lerp(narrow, d · narrow_per_wide)`.
pub(crate) fn fuse<T: Real>(wide: &Array3<T>, narrow: &Array3<T>, narrow_per_wide: T) -> Array3<T> {
    let dn = narrow.shape()[0];
    let mut out = wide.clone();
    for (d, mut slice) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (i, j, t) = narrow_tap(d, narrow_per_wide, dn);
        Zip::from(&mut slice)
            .and(narrow.index_axis(Axis(0), i))
            .and(narrow.index_axis(Axis(0), j))
            .for_each(|o, &a, &b| *o += (T::one() - t) * a + t * b);
    }
    out
}

pub(crate) fn fuse_adjoint_narrow<T: Real>(g: &Array3<T>, dn: usize, narrow_per_wide: T) -> Array3<T> {
    let (dw, h, w) = g.dim();
    let mut gn = Array3::zeros((dn, h, w));
    for d in 0..dw {
        let (i, j, t) = narrow_tap(d, narrow_per_wide, dn);
        let gd = g.index_axis(Axis(0), d);
        Zip::from(gn.index_axis_mut(Axis(0), i))
            .and(&gd)
            .for_each(|o, &v| *o += (T::one() - t) * v);
        Zip::from(gn.index_axis_mut(Axis(0), j))
            .and(&gd)
            .for_each(|o, &v| *o += t * v);
    }
    gn
}

/// Per-pixel softmax of `−cost/temperature` over the first axis.
pub(crate) fn softmax_neg<T: Real>(vol: &Array3<T>, temperature: T) -> Array3<T> {
    let (dn, h, w) = vol.dim();
    let mut p = Array3::zeros((dn, h, w));
    for y in 0..h {
        for x in 0..w {
            let m = (0..dn).map(|d| vol[[d, y, x]]).fold(T::infinity(), T::min);
            let mut z = T::zero();
            for d in 0..dn {
                let e = (-(vol[[d, y, x]] - m) / temperature).exp();
                p[[d, y, x]] = e;
                z += e;
            }
            for d in 0..dn {
                p[[d, y, x]] /= z;
            }
        }
    }
    p
}

/// Expected disparity under the softmax probabilities.
pub(crate) fn expectation<T: Real>(p: &Array3<T>) -> Array2<T> {
    let (dn, h, w) = p.dim();
    Array2::from_shape_fn((h, w), |(y, x)| (0..dn).map(|d| T::of_usize(d) * p[[d, y, x]]).sum())
}

pub(crate) fn soft_argmin_adjoint<T: Real>(g: &Array2<T>, p: &Array3<T>, out: &Array2<T>, temperature: T) -> Array3<T> {
    let (dn, h, w) = p.dim();
    Array3::from_shape_fn((dn, h, w), |(d, y, x)| {
        -g[[y, x]] / temperature * p[[d, y, x]] * (T::of_usize(d) - out[[y, x]])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn random3(dim: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = rng_for(seed);
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    fn dot3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn box_sum_adjoint_is_transpose() {
        let x = random3((2, 7, 9), 1);
        let y = random3((2, 7, 9), 2);
        let lhs = dot3(&box_sum(&x, 2), &y);
        let rhs = dot3(&x, &box_sum_adjoint(&y, 2));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn box_sum_of_constant() {
        let x: Array3<f64> = Array3::from_elem((1, 5, 6), 1.0);
        assert!(box_sum(&x, 1).iter().all(|&v| (v - 9.0).abs() < 1e-12));
    }

    #[test]
    fn conv_adjoint_is_transpose() {
        let x = random3((2, 6, 7), 3);
        let mut rng = rng_for(4);
        let k = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array1::zeros(3);
        let y = random3((3, 6, 7), 5);
        let (gin, _, _) = conv2d_adjoint(&y, &x, &k);
        let lhs = dot3(&conv2d(&x, &k, &b), &y);
        assert!((lhs - dot3(&x, &gin)).abs() < 1e-10);
    }

    #[test]
    fn fuse_uses_fractional_index() {
        let wide = Array3::zeros((5, 1, 1));
        let narrow = Array3::from_shape_fn((3, 1, 1), |(d, _, _)| d as f64 * 10.0);
        let f = fuse(&wide, &narrow, 0.5);
        let vals: Vec<f64> = f.iter().copied().collect();
        assert_eq!(vals, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        let g = Array3::from_elem((5, 1, 1), 1.0);
        let gn = fuse_adjoint_narrow(&g, 3, 0.5);
        assert_eq!(gn.iter().copied().collect::<Vec<_>>(), vec![1.5, 2.0, 1.5]);
    }
}
