//! Horizontal disparity warp with linear interpolation.
//!
//! `out(y, x) = occ(y, x) · P(y, x − shift·d(y, x))`, where samples outside
//! the source row contribute zero. The map is linear in `P` and piecewise
//! linear in `d`; both adjoints are provided.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scenesim::CameraRig;
use crate::wavefield::IlluminationPattern;

/// Camera view a pattern is warped into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Left,
    Right,
}

impl View {
    /// Multiplier on the wide-baseline disparity giving the horizontal offset
    /// between this camera and the illuminator.
    pub fn shift<T: Real>(self, rig: &CameraRig<T>) -> T {
        match self {
            View::Left => rig.narrow_fraction(),
            View::Right => -(T::one() - rig.narrow_fraction()),
        }
    }
}

#[inline]
fn tap<T: Real>(row: &[T], i: i64) -> T {
    if i < 0 || i >= row.len() as i64 {
        T::zero()
    } else {
        row[i as usize]
    }
}

/// Source position and integer base for pixel `(y, x)`.
#[inline]
pub(crate) fn source_pos<T: Real>(x: usize, d: T, shift: T) -> (i64, T) {
    let q = T::of_usize(x) - shift * d;
    let base = q.floor();
    (base.to_i64().unwrap_or(i64::MIN / 2), q - base)
}

pub(crate) fn check_same<T>(a: &Array2<T>, b: (usize, usize), what: &str) -> Result<()> {
    if a.dim() != b {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b)));
    }
    Ok(())
}

pub fn warp_linear<T: Real>(src: &Array2<T>, disp: &Array2<T>, occ: &Array2<T>, shift: T) -> Result<Array2<T>> {
    check_same(disp, src.dim(), "disparity vs pattern")?;
    check_same(occ, src.dim(), "occlusion vs pattern")?;
    let (h, w) = src.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let row = src.row(y);
        let row = row.as_slice().expect("standard layout");
        for x in 0..w {
            let o = occ[[y, x]];
            if o == T::zero() {
                continue;
            }
            let (i, t) = source_pos(x, disp[[y, x]], shift);
            out[[y, x]] = o * ((T::one() - t) * tap(row, i) + t * tap(row, i + 1));
        }
    }
    Ok(out)
}

/// Adjoint of [`warp_linear`] with respect to the source values.
pub fn warp_linear_adjoint_src<T: Real>(cot: &Array2<T>, disp: &Array2<T>, occ: &Array2<T>, shift: T) -> Array2<T> {
    let (h, w) = cot.dim();
    let mut g = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let c = cot[[y, x]] * occ[[y, x]];
            if c == T::zero() {
                continue;
            }
            let (i, t) = source_pos(x, disp[[y, x]], shift);
            if i >= 0 && i < w as i64 {
                g[[y, i as usize]] += (T::one() - t) * c;
            }
            if i + 1 >= 0 && i + 1 < w as i64 {
                g[[y, (i + 1) as usize]] += t * c;
            }
        }
    }
    g
}

/// Adjoint of [`warp_linear`] with respect to the disparity (one-sided slope
/// of the linear segment the sample falls in).
pub fn warp_linear_adjoint_disp<T: Real>(
    cot: &Array2<T>,
    src: &Array2<T>,
    disp: &Array2<T>,
    occ: &Array2<T>,
    shift: T,
) -> Array2<T> {
    let (h, w) = cot.dim();
    let mut g = Array2::zeros((h, w));
    for y in 0..h {
        let row = src.row(y);
        let row = row.as_slice().expect("standard layout");
        for x in 0..w {
            let (i, _) = source_pos(x, disp[[y, x]], shift);
            let slope = tap(row, i + 1) - tap(row, i);
            g[[y, x]] = cot[[y, x]] * occ[[y, x]] * slope * (-shift);
        }
    }
    g
}

pub(crate) fn mask_to_real<T: Real>(mask: &Array2<bool>) -> Array2<T> {
    mask.mapv(|b| if b { T::one() } else { T::zero() })
}

/// Warps the camera-grid illumination pattern into a camera view and applies
/// the illumination-visibility mask (`true` = lit).
pub fn warp_pattern<T: Real>(
    pattern: &IlluminationPattern<T>,
    disp: &Array2<T>,
    occ: &Array2<bool>,
    view: View,
    rig: &CameraRig<T>,
) -> Result<Array2<T>> {
    if !pattern.is_camera_resampled() {
        return Err(Error::InvalidConfig("warp needs a pattern on the camera grid".into()));
    }
    check_same(occ, pattern.dim(), "occlusion vs pattern")?;
    warp_linear(pattern.intensity(), disp, &mask_to_real(occ), view.shift(rig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_disparity_is_identity() {
        let p = random(6, 9, 1);
        let out = warp_linear(&p, &Array2::zeros((6, 9)), &Array2::ones((6, 9)), 0.5).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn occluded_everywhere_is_dark() {
        let p = random(4, 4, 2);
        let out = warp_linear(&p, &Array2::from_elem((4, 4), 1.3), &Array2::zeros((4, 4)), 0.5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn integer_shift_matches_index_oracle() {
        let p = random(5, 12, 3);
        let out = warp_linear(&p, &Array2::from_elem((5, 12), 3.0), &Array2::ones((5, 12)), 1.0).unwrap();
        for y in 0..5 {
            for x in 0..12 {
                let expect = if x >= 3 { p[[y, x - 3]] } else { 0.0 };
                assert_eq!(out[[y, x]], expect);
            }
        }
    }

    #[test]
    fn adjoint_mass_conservation_for_integer_disparity() {
        let cot = random(4, 10, 4);
        let disp = Array2::from_elem((4, 10), 2.0);
        let g = warp_linear_adjoint_src(&cot, &disp, &Array2::ones((4, 10)), 1.0);
        // every output column x >= 2 reads an in-bounds source
        let in_bounds: f64 = cot.indexed_iter().filter(|((_, x), _)| *x >= 2).map(|(_, v)| v).sum();
        assert!((g.sum() - in_bounds).abs() < 1e-12);
    }

    #[test]
    fn adjoint_src_is_transpose() {
        let disp = random(3, 8, 5).mapv(|v| v * 4.0);
        let occ = random(3, 8, 6).mapv(|v| if v > 0.3 { 1.0 } else { 0.0 });
        let a = random(3, 8, 7);
        let b = random(3, 8, 8);
        let lhs = (&warp_linear(&a, &disp, &occ, -0.5).unwrap() * &b).sum();
        let rhs = (&a * &warp_linear_adjoint_src(&b, &disp, &occ, -0.5)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let p = random(4, 4, 9);
        assert!(warp_linear(&p, &Array2::zeros((4, 5)), &Array2::ones((4, 4)), 0.5).is_err());
    }
}
