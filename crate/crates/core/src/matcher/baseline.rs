//! Classic block matching, used as a non-differentiable reference.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::matcher::argmin_axis0;
use crate::matcher::kernels::{abs_diff_volume, box_sum};
use crate::scalar::Real;

/// Winner-take-all disparity by sum of absolute differences over a
/// `window×window` block (edge-replicated). Ties go to the smallest
/// disparity.
pub fn block_match_baseline<T: Real>(left: &Array2<T>, right: &Array2<T>, window: usize, max_disparity: usize) -> Result<Array2<T>> {
    if left.dim() != right.dim() {
        return Err(Error::Shape("left and right images differ in size".into()));
    }
    if window % 2 == 0 {
        return Err(Error::InvalidConfig(format!("block window must be odd, got {window}")));
    }
    let (h, w) = left.dim();
    if max_disparity == 0 || max_disparity >= w {
        return Err(Error::Range(format!("need 1 <= D_max < W, got D_max={max_disparity}, W={w}")));
    }
    let as3 = |a: &Array2<T>| Array3::from_shape_fn((1, h, w), |(_, y, x)| a[[y, x]]);
    let sad = box_sum(&abs_diff_volume(&as3(left), &as3(right), max_disparity), window / 2);
    Ok(argmin_axis0(&sad))
}
