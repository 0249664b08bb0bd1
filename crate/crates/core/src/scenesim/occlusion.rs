//! Visibility bookkeeping derived from disparity maps alone.

use ndarray::Array2;

use crate::scalar::Real;

/// Pixels of the left view whose disparity is confirmed by the right view:
/// the corresponding right pixel `x − d_L` is inside the frame and its
/// disparity differs by at most `threshold`. Pixels with `d_L ≤ 0` (no
/// surface) are invalid.
pub fn lr_consistency<T: Real>(disp_l: &Array2<T>, disp_r: &Array2<T>, threshold: T) -> Array2<bool> {
    let (h, w) = disp_l.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let d = disp_l[[y, x]];
        if !(d > T::zero()) {
            return false;
        }
        let xr = (T::of_usize(x) - d).round();
        if xr < T::zero() || xr > T::of_usize(w - 1) {
            return false;
        }
        let xr = xr.to_usize().expect("in range");
        (disp_r[[y, xr]] - d).abs() <= threshold
    })
}

/// Stereo occlusion of one view against the other by disparity
/// cross-checking: `true` where the corresponding pixel in the other view is
/// inside the frame but reports an inconsistent disparity. Pixels whose match
/// falls outside the frame are not occlusions.
///
/// For the left view the match is at `x − d`, for the right view at `x + d`.
pub fn cross_check_occlusion<T: Real>(
    disp: &Array2<T>,
    disp_other: &Array2<T>,
    is_left: bool,
    threshold: T,
) -> Array2<bool> {
    let (h, w) = disp.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let d = disp[[y, x]];
        let xo = if is_left { T::of_usize(x) - d } else { T::of_usize(x) + d };
        let xo = xo.round();
        if xo < T::zero() || xo > T::of_usize(w - 1) {
            return false;
        }
        let xo = xo.to_usize().expect("in range");
        (disp_other[[y, xo]] - d).abs() > threshold
    })
}

/// Shrinks every horizontal run of `true` to `round(keep_fraction · len)`
/// pixels, keeping the end of the run that faces the illuminator: the right
/// end for the left camera, the left end for the right camera.
pub fn shrink_runs(mask: &Array2<bool>, keep_fraction: f64, keep_right_end: bool) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut out = Array2::from_elem((h, w), false);
    for y in 0..h {
        let mut x = 0;
        while x < w {
            if !mask[[y, x]] {
                x += 1;
                continue;
            }
            let start = x;
            while x < w && mask[[y, x]] {
                x += 1;
            }
            let len = x - start;
            let keep = ((len as f64) * keep_fraction).round() as usize;
            let keep = keep.min(len);
            let range = if keep_right_end { (x - keep)..x } else { start..(start + keep) };
            for xi in range {
                out[[y, xi]] = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_width_eight_to_four() {
        let mut m = Array2::from_elem((1, 20), false);
        for x in 5..13 {
            m[[0, x]] = true;
        }
        let s = shrink_runs(&m, 0.5, true);
        let kept: Vec<usize> = (0..20).filter(|&x| s[[0, x]]).collect();
        assert_eq!(kept, vec![9, 10, 11, 12]);
        let s = shrink_runs(&m, 0.5, false);
        let kept: Vec<usize> = (0..20).filter(|&x| s[[0, x]]).collect();
        assert_eq!(kept, vec![5, 6, 7, 8]);
    }

    #[test]
    fn consistency_on_constant_disparity() {
        let dl = Array2::from_elem((2, 10), 3.0);
        let dr = Array2::from_elem((2, 10), 3.0);
        let v = lr_consistency(&dl, &dr, 1.0);
        for x in 0..10 {
            assert_eq!(v[[0, x]], x >= 3);
        }
        let occ = cross_check_occlusion(&dl, &dr, true, 1.0);
        assert!(occ.iter().all(|&o| !o));
    }
}
