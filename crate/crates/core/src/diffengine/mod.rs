//! Reverse-mode differentiation for the imaging pipeline: a single-use tape
//! of primitives with hand-written adjoints and a finite-difference checker.

mod gradcheck;
mod ops;
mod registry;
mod tape;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, Probe};
pub use ops::{as_grid, as_volume};
pub use registry::{primitive_checks, project, PrimitiveCheck};
pub use tape::{Adjoint, AdjointTape, DiffValue, NodeId};

#[cfg(test)]
mod tests {
    use std::cell::Cell;
    use std::sync::Arc;

    use ndarray::{arr1, Array2, ArrayD, IxDyn};
    use rand::Rng;

    use super::*;
    use crate::error::Error;
    use crate::rng::rng_for;
    use crate::scenesim::CaptureConfig;
    use crate::diffengine::ops::{join_complex, split_complex};
    use crate::wavefield::{CenteredDft, ComplexField};

    fn random(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = rng_for(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn add_passes_cotangent_to_both() {
        let tape = AdjointTape::new();
        let x = tape.leaf(arr1(&[1.0, 2.0]).into_dyn()).unwrap();
        let y = tape.leaf(arr1(&[3.0, -1.0]).into_dyn()).unwrap();
        let s = tape.add(&x, &y).unwrap();
        let loss = project(&tape, &s, 5).unwrap();
        let w = random(&[2], 5);
        let g = tape.backward(&loss, &[&x, &y]).unwrap();
        assert_eq!(g[0], w);
        assert_eq!(g[1], w);
    }

    #[test]
    fn sq_magnitude_adjoint() {
        let tape = AdjointTape::new();
        let u = random(&[3, 3, 2], 1);
        let leaf = tape.leaf(u.clone()).unwrap();
        let p = tape.sq_magnitude(&leaf).unwrap();
        let loss = project(&tape, &p, 9).unwrap();
        let cot = random(&[3, 3], 9);
        let g = tape.backward(&loss, &[&leaf]).unwrap().remove(0);
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..2 {
                    let want = 2.0 * u[[y, x, c]] * cot[[y, x]];
                    assert!((g[[y, x, c]] - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn independent_leaf_gets_zero() {
        let tape = AdjointTape::new();
        let x = tape.leaf(random(&[4], 1)).unwrap();
        let unused = tape.leaf(random(&[2, 2], 2)).unwrap();
        let loss = tape.sum(&x).unwrap();
        let g = tape.backward(&loss, &[&x, &unused]).unwrap();
        assert!(g[0].iter().all(|&v| v == 1.0));
        assert!(g[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn abs_error_gradient_is_sign_with_zero_at_equality() {
        let tape = AdjointTape::new();
        let est = tape.leaf(arr1(&[1.0, 2.0, 3.0, 4.0]).into_shape_with_order((2, 2)).unwrap().into_dyn()).unwrap();
        let gt = Array2::from_shape_vec((2, 2), vec![0.0, 2.0, 5.0, 4.0]).unwrap();
        let mask = Array2::from_elem((2, 2), true);
        let mae = tape.masked_mae(&est, &gt, &mask).unwrap();
        // scale back to a plain sum
        let loss = tape.scale(&mae, 4.0).unwrap();
        let g = tape.backward(&loss, &[&est]).unwrap().remove(0);
        assert_eq!(g.iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn dft_adjoint_is_inverse() {
        for n in [8, 15, 16] {
            let plan = CenteredDft::<f64>::new(n);
            let u = random(&[n, n, 2], 3).into_dimensionality().unwrap();
            let v = random(&[n, n, 2], 4).into_dimensionality().unwrap();
            let (ur, ui) = split_complex(&u);
            let (vr, vi) = split_complex(&v);
            let (fr, fi) = plan.apply(&ur, &ui, true);
            let (br, bi) = plan.apply(&vr, &vi, false);
            let lhs: f64 = join_complex(&fr, &fi).iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(join_complex(&br, &bi).iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "n={n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn linear_composite_agrees_to_machine_precision() {
        let w = random(&[5, 5], 8);
        let r = check_gradients(
            move |t: &AdjointTape<f64>, x: &DiffValue<f64>| {
                let y = t.scale(x, 3.0)?;
                let y = t.mul(&y, &DiffValue::constant(w.clone()))?;
                t.sum(&y)
            },
            &random(&[5, 5], 9).mapv(|v| v * 1e-3),
            &GradCheckOptions { num_probes: 25, ..Default::default() },
        )
        .unwrap();
        assert_eq!(r.probes.len(), 25);
        assert!(r.max_rel_error < 1e-10, "{:e}", r.max_rel_error);
    }

    #[test]
    fn optics_chain_gradient() {
        let n = 16;
        let laser = ComplexField::collimated(n, 1e-6, 850e-9, 1.0 / n as f64, false).unwrap();
        let plan = Arc::new(CenteredDft::new(n));
        let heights = random(&[n, n], 10).mapv(|v| 0.5 + 0.5 * v);
        let r = check_gradients(
            move |t: &AdjointTape<f64>, h: &DiffValue<f64>| {
                let u = t.phase_modulate(h, &laser)?;
                let f = t.dft2c(&u, &plan)?;
                let p = t.sq_magnitude(&f)?;
                // scale up so the projected loss is O(1)
                let p = t.scale(&p, (n * n) as f64)?;
                project(t, &p, 77)
            },
            &heights,
            &GradCheckOptions { num_probes: 32, ..Default::default() },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{:e}", r.max_rel_error);
    }

    #[test]
    fn clamp_interior_compared_saturated_reported() {
        let n = 8;
        let refl = Array2::from_elem((n, n), 0.5);
        let noise = Array2::zeros((n, n));
        let cfg = CaptureConfig::new(1.0, 0.0, 1.0, 0.0, 0).unwrap();
        // interior: J = 0.5 P stays inside [0, 1]
        let (r1, z1, c1) = (refl.clone(), noise.clone(), cfg);
        let interior = check_gradients(
            move |t: &AdjointTape<f64>, p: &DiffValue<f64>| {
                let j = t.capture(p, &r1, &z1, &c1)?;
                project(t, &j, 3)
            },
            &random(&[n, n], 2).mapv(|v| 1.0 + 0.5 * v),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(interior.kinks.is_empty());
        assert!(interior.max_rel_error < 1e-6);
        // exactly at the clip corner, J = 0.5·2 = 1
        let at_corner = Array2::from_elem((n, n), 2.0).into_dyn();
        let r = check_gradients(
            move |t: &AdjointTape<f64>, p: &DiffValue<f64>| {
                let j = t.capture(p, &refl, &noise, &cfg)?;
                project(t, &j, 3)
            },
            &at_corner,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.probes.is_empty());
        assert_eq!(r.kinks.len(), n * n);
    }

    #[test]
    fn nondeterministic_composite_rejected() {
        let counter = Cell::new(0.0);
        let r = check_gradients(
            move |t: &AdjointTape<f64>, x: &DiffValue<f64>| {
                counter.set(counter.get() + 1.0);
                let y = t.offset(x, counter.get())?;
                t.sum(&y)
            },
            &random(&[3], 1),
            &GradCheckOptions::default(),
        );
        assert!(matches!(r, Err(Error::CheckInvalid(_))));
    }

    #[test]
    fn recording_after_backward_fails() {
        let tape = AdjointTape::new();
        let x = tape.leaf(random(&[2], 1)).unwrap();
        let s = tape.sum(&x).unwrap();
        tape.backward(&s, &[&x]).unwrap();
        assert!(matches!(tape.scale(&x, 2.0), Err(Error::Lifecycle(_))));
    }
}
