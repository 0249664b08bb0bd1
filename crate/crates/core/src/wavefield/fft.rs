//! Centered, unitary two-dimensional DFT on square grids.
//!
//! The forward transform is `fftshift(F(ifftshift(u))) / N`, so the zero
//! frequency lands at index `N / 2` and Parseval holds exactly. Because the
//! transform is unitary its adjoint is its inverse, which the differentiation
//! engine relies on.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

/// Reusable plan for an `N×N` centered unitary transform.
pub struct CenteredDft<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> CenteredDft<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Forward transform of a row-major `N×N` buffer, in place.
    pub fn forward_inplace(&self, buf: &mut [Complex<T>]) {
        self.run(buf, true);
    }

    /// Inverse (= adjoint) transform of a row-major `N×N` buffer, in place.
    pub fn inverse_inplace(&self, buf: &mut [Complex<T>]) {
        self.run(buf, false);
    }

    fn run(&self, buf: &mut [Complex<T>], forward: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n * n, "buffer must hold N*N samples");
        // forward: fftshift . F . ifftshift ; inverse: fftshift . F^-1 . ifftshift
        ifftshift2(buf, n);
        let plan = if forward { &self.forward } else { &self.inverse };
        plan.process(buf);
        transpose_square(buf, n);
        plan.process(buf);
        transpose_square(buf, n);
        let scale = T::one() / T::of_usize(n);
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
        fftshift2(buf, n);
    }

    /// Transforms a split real/imaginary field and returns the split result.
    pub fn apply(&self, re: &Array2<T>, im: &Array2<T>, forward: bool) -> (Array2<T>, Array2<T>) {
        let mut buf = pack(re, im);
        self.run(&mut buf, forward);
        unpack(&buf, self.n)
    }
}

pub(crate) fn pack<T: Real>(re: &Array2<T>, im: &Array2<T>) -> Vec<Complex<T>> {
    re.iter().zip(im.iter()).map(|(&r, &i)| Complex::new(r, i)).collect()
}

pub(crate) fn unpack<T: Real>(buf: &[Complex<T>], n: usize) -> (Array2<T>, Array2<T>) {
    let re = Array2::from_shape_fn((n, n), |(y, x)| buf[y * n + x].re);
    let im = Array2::from_shape_fn((n, n), |(y, x)| buf[y * n + x].im);
    (re, im)
}

fn transpose_square<T: Copy>(buf: &mut [T], n: usize) {
    for y in 0..n {
        for x in (y + 1)..n {
            buf.swap(y * n + x, x * n + y);
        }
    }
}

/// Moves index 0 to index `n / 2` along both axes.
pub fn fftshift2<T: Copy>(buf: &mut [T], n: usize) {
    roll2(buf, n, n / 2);
}

/// Inverse of [`fftshift2`]; differs from it only for odd `n`.
pub fn ifftshift2<T: Copy>(buf: &mut [T], n: usize) {
    roll2(buf, n, n - n / 2);
}

fn roll2<T: Copy>(buf: &mut [T], n: usize, shift: usize) {
    let shift = shift % n;
    if shift == 0 {
        return;
    }
    for row in buf.chunks_mut(n) {
        row.rotate_right(shift);
    }
    buf.rotate_right(shift * n);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifts_are_inverse_for_odd_sizes() {
        let n = 5;
        let orig: Vec<usize> = (0..n * n).collect();
        let mut v = orig.clone();
        fftshift2(&mut v, n);
        assert_eq!(v[2 * n + 2], 0);
        ifftshift2(&mut v, n);
        assert_eq!(v, orig);
    }

    #[test]
    fn constant_field_focuses_to_center() {
        let n = 8;
        let dft = CenteredDft::<f64>::new(n);
        let mut buf = vec![Complex::new(1.0, 0.0); n * n];
        dft.forward_inplace(&mut buf);
        let c = (n / 2) * n + n / 2;
        assert!((buf[c].re - n as f64).abs() < 1e-12);
        for (i, v) in buf.iter().enumerate() {
            if i != c {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let n = 6;
        let dft = CenteredDft::<f64>::new(n);
        let orig: Vec<Complex<f64>> = (0..n * n)
            .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        dft.forward_inplace(&mut buf);
        dft.inverse_inplace(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
