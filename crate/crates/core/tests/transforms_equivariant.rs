mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use s2seg::equivariant::{
    conv_s2_to_so3, conv_so3, h_orbit_projection, h_orbit_projection_spectrum, invariant_readout, rotate_s2_spectrum,
    rotate_so3_spectrum, so3_to_s2_final, so3_to_s2_final_spectrum, KernelSpectrumS2, KernelSpectrumSo3,
};
use s2seg::grid::{Rotation, S2Grid, So3Grid};
use s2seg::repr::{wigner_D, EulerAngles};
use s2seg::transforms::{
    resample_bandlimit_s2, resample_bandlimit_so3, s2_analyze, s2_synthesize, so3_analyze, so3_synthesize, S2Plan,
    S2Spectrum, So3Signal, So3Spectrum, SphericalSignal,
};

use common::{
    bl, cases, final_layer_by_quadrature, lifting_by_quadrature, rel_c, rel_r, rng, so3_conv_by_quadrature,
};

#[test]
fn round_trips_at_small_bandlimits() {
    let mut r = rng(1);
    for l in [4, 8, 16] {
        let f = S2Spectrum::random_real(bl(l), 2, &mut r);
        let back = s2_analyze(&s2_synthesize(&f).unwrap()).unwrap();
        assert!(rel_c(&back.coeffs, &f.coeffs) < 1e-10, "S2 L={l}");
        let f = So3Spectrum::random_real(bl(l), 1, &mut r);
        let back = so3_analyze(&so3_synthesize(&f).unwrap()).unwrap();
        assert!(rel_c(&back.coeffs, &f.coeffs) < 1e-10, "SO3 L={l}");
    }
}

#[test]
fn analysis_of_a_single_harmonic() {
    let l = bl(6);
    let sig = SphericalSignal::from_fn(l, 1, |_, t, p| s2seg::repr::spherical_harmonic(3, 2, t, p).unwrap().re);
    let spec = s2_analyze(&sig).unwrap();
    // conj Y³₂ = Y³₋₂, so Re Y³₂ = (Y³₂ + Y³₋₂)/2
    assert!((spec.get(0, 3, 2) - 0.5).norm() < 1e-12);
    assert!((spec.get(0, 3, -2) - 0.5).norm() < 1e-12);
    let rest: f64 = spec.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() - 0.5;
    assert!(rest.abs() < 1e-12);
}

#[test]
fn analysis_of_a_single_wigner_entry() {
    let l = bl(5);
    let sig = So3Signal::from_fn(l, 1, |_, g| wigner_D(2, g).get(1, -1).re);
    let spec = so3_analyze(&sig).unwrap();
    let mut mass = 0.0;
    for ell in 0..5usize {
        let li = ell as i64;
        for m in -li..=li {
            for n in -li..=li {
                let c = spec.get(0, ell, m, n);
                if ell == 2 && (m, n) == (1, -1) || ell == 2 && (m, n) == (-1, 1) {
                    mass += c.norm_sqr();
                } else {
                    assert!(c.norm() < 1e-12, "leak at ({ell},{m},{n}): {c}");
                }
            }
        }
    }
    assert!(mass > 0.1);
}

#[test]
fn downsample_then_upsample_keeps_low_blocks() {
    let f = So3Spectrum::random_real(bl(8), 1, &mut rng(2));
    let back = resample_bandlimit_so3(&resample_bandlimit_so3(&f, bl(4)), bl(8));
    for ell in 0..8 {
        let (a, b) = (back.block(0, ell), f.block(0, ell));
        if ell < 4 {
            assert_eq!(a, b);
        } else {
            assert!(a.iter().all(|c| *c == Complex64::new(0.0, 0.0)));
        }
    }
}

#[test]
fn constant_signals_and_zero_mean_harmonics() {
    let l = bl(8);
    let one = SphericalSignal::from_fn(l, 1, |_, _, _| 1.0);
    let spec = s2_analyze(&one).unwrap();
    assert!((spec.get(0, 0, 0).re - (4.0 * PI).sqrt()).abs() < 1e-12);
    let g = So3Grid::new(bl(4));
    assert!((g.integrate(&vec![1.0; g.len()]) - 8.0 * PI * PI).abs() < 1e-11);
    let s = S2Grid::new(l);
    assert!((s.integrate(&vec![1.0; s.len()]) - 4.0 * PI).abs() < 1e-12);
}

#[test]
fn lifting_and_group_conv_match_quadrature() {
    let mut r = rng(3);
    let (mut e1, mut e2) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let rot = Rotation::random(&mut r);
        let kappa = S2Spectrum::random_real(bl(6), 1, &mut r);
        let f = S2Spectrum::random_real(bl(6), 1, &mut r);
        let out = conv_s2_to_so3(&KernelSpectrumS2::new(1, 1, kappa.clone()).unwrap(), &f).unwrap();
        let want = lifting_by_quadrature(&kappa, &f, &rot);
        let got = out.evaluate(0, rot.euler());
        e1 = e1.max((got - want).norm() / want.abs().max(1e-3 * kappa.norm() * f.norm()));
        let kappa = So3Spectrum::random_real(bl(4), 1, &mut r);
        let f = So3Spectrum::random_real(bl(4), 1, &mut r);
        let out = conv_so3(&KernelSpectrumSo3::new(1, 1, kappa.clone()).unwrap(), &f).unwrap();
        let want = so3_conv_by_quadrature(&kappa, &f, &rot);
        let got = out.evaluate(0, rot.euler());
        e2 = e2.max((got - want).norm() / want.abs().max(1e-3 * kappa.norm() * f.norm()));
    }
    assert!(e1 < 1e-8, "lifting {e1:e}");
    assert!(e2 < 1e-7, "group conv {e2:e}");
}

#[test]
fn delta_kernel_lifting_reproduces_rotated_signal() {
    // A truncated delta at the north pole, κ̂^ℓ_m = δ_{m0} Y^ℓ_0(pole), gives
    // (κ ⋆ f)(R) = f_L(R·north) for the bandlimited f.
    let l = bl(8);
    let mut kappa = S2Spectrum::zeros(l, 1);
    for ell in 0..8 {
        kappa.set(0, ell, 0, Complex64::new(((2 * ell + 1) as f64 / (4.0 * PI)).sqrt(), 0.0));
    }
    let mut r = rng(4);
    let f = S2Spectrum::random_real(l, 1, &mut r);
    let out = conv_s2_to_so3(&KernelSpectrumS2::new(1, 1, kappa).unwrap(), &f).unwrap();
    for _ in 0..10 {
        let rot = Rotation::random(&mut r);
        let (t, p) = s2seg::repr::vector_to_angles(rot.apply([0.0, 0.0, 1.0]));
        let got = out.evaluate(0, rot.euler());
        let want = f.evaluate(0, t, p);
        assert!((got - want).norm() < 1e-10 * f.norm(), "{got} vs {want}");
    }
}

#[test]
fn final_layer_matches_position_space_projection() {
    let mut r = rng(5);
    let cf = So3Spectrum::random_real(bl(6), 1, &mut r);
    let values = S2Plan::cached(bl(6)).synthesize_complex(&so3_to_s2_final_spectrum(&cf)).unwrap();
    let real = so3_to_s2_final(&cf).unwrap();
    let grid = S2Grid::new(bl(6));
    let n = grid.phis.len();
    let mut worst = 0.0f64;
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for k in 0..8 {
        let (j, i) = ((3 * k + 1) % grid.thetas.len(), (5 * k + 2) % n);
        let want = final_layer_by_quadrature(&cf, 0, grid.thetas[j], grid.phis[i]);
        worst = worst.max((values[j * n + i] - want).norm() / scale);
        assert_eq!(real.values[j * n + i], values[j * n + i].re);
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn h_orbit_projection_matches_gamma_quadrature() {
    // ∫_H f(g_x h) dh with g_x = (φ, θ, 0), by the trapezoidal rule in γ.
    let mut r = rng(6);
    let f = So3Spectrum::random_real(bl(6), 1, &mut r);
    let out = h_orbit_projection(&f).unwrap();
    let grid = S2Grid::new(bl(6));
    let n = grid.phis.len();
    let steps = 64;
    let mut worst = 0.0f64;
    for j in 0..grid.thetas.len() {
        for i in (0..n).step_by(3) {
            let sum: f64 = (0..steps)
                .map(|k| {
                    let g = EulerAngles::new(grid.phis[i], grid.thetas[j], 2.0 * PI * k as f64 / steps as f64);
                    f.evaluate(0, g).re
                })
                .sum();
            let want = 2.0 * PI * sum / steps as f64;
            worst = worst.max((out.values[j * n + i] - want).abs());
        }
    }
    assert!(worst < 1e-10 * f.norm(), "{worst:e}");
    let mut no_n0 = So3Spectrum::zeros(bl(4), 1);
    no_n0.set(0, 2, 1, 1, Complex64::new(1.0, 0.0));
    assert_eq!(h_orbit_projection_spectrum(&no_n0).norm(), 0.0);
}

#[test]
fn readout_of_a_nontrivial_wigner_entry_vanishes() {
    let sig = So3Signal::from_fn(bl(4), 1, |_, g| wigner_D(2, g).get(1, 1).re);
    let spec = so3_analyze(&sig).unwrap();
    assert!(invariant_readout(&spec)[0].abs() < 1e-12);
    let one = So3Signal::from_fn(bl(4), 1, |_, _| 1.0);
    let v = invariant_readout(&so3_analyze(&one).unwrap())[0];
    assert!((v - 8.0 * PI * PI).abs() < 1e-10);
}

#[test]
fn final_layer_of_a_constant() {
    let one = So3Signal::from_fn(bl(4), 1, |_, _| 1.0);
    let out = so3_to_s2_final(&so3_analyze(&one).unwrap()).unwrap();
    let want = 1.0 / (4.0 * PI).sqrt();
    assert!(out.values.iter().all(|v| (v - want).abs() < 1e-12));
}

fn seed() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn layers_commute_with_rotations(s in seed()) {
        let mut r = rng(s);
        let l = bl(8);
        let rot = Rotation::random(&mut r);
        let kappa = KernelSpectrumS2::new(2, 1, S2Spectrum::random_real(l, 2, &mut r)).unwrap();
        let f = S2Spectrum::random_real(l, 1, &mut r);
        let a = conv_s2_to_so3(&kappa, &rotate_s2_spectrum(&f, &rot)).unwrap();
        let b = rotate_so3_spectrum(&conv_s2_to_so3(&kappa, &f).unwrap(), &rot);
        prop_assert!(rel_c(&a.coeffs, &b.coeffs) < 1e-10);
        let psi = KernelSpectrumSo3::new(1, 2, So3Spectrum::random_real(l, 2, &mut r)).unwrap();
        let c = conv_so3(&psi, &a).unwrap();
        let d = rotate_so3_spectrum(&conv_so3(&psi, &conv_s2_to_so3(&kappa, &f).unwrap()).unwrap(), &rot);
        prop_assert!(rel_c(&c.coeffs, &d.coeffs) < 1e-10);
        let e = so3_to_s2_final_spectrum(&c);
        let g = rotate_s2_spectrum(&so3_to_s2_final_spectrum(&conv_so3(&psi, &conv_s2_to_so3(&kappa, &f).unwrap()).unwrap()), &rot);
        prop_assert!(rel_c(&e.coeffs, &g.coeffs) < 1e-10);
        let inv = invariant_readout(&c);
        let base = invariant_readout(&conv_so3(&psi, &conv_s2_to_so3(&kappa, &f).unwrap()).unwrap());
        prop_assert!(rel_r(&inv, &base) < 1e-10);
    }

    #[test]
    fn real_spectra_stay_real_under_rotation(s in seed()) {
        let mut r = rng(s);
        let rot = Rotation::random(&mut r);
        let f = rotate_s2_spectrum(&S2Spectrum::random_real(bl(7), 1, &mut r), &rot);
        prop_assert!(f.conjugate_symmetry_error() < 1e-12 * f.norm());
        let h = rotate_so3_spectrum(&So3Spectrum::random_real(bl(5), 1, &mut r), &rot);
        prop_assert!(h.conjugate_symmetry_error() < 1e-12 * h.norm());
    }

    #[test]
    fn resampling_never_increases_the_norm(s in seed(), from in 2usize..12, to in 1usize..12) {
        let mut r = rng(s);
        let f = S2Spectrum::random_real(bl(from), 2, &mut r);
        prop_assert!(resample_bandlimit_s2(&f, bl(to)).norm() <= f.norm());
        let h = So3Spectrum::random_real(bl(from.min(8)), 1, &mut r);
        prop_assert!(resample_bandlimit_so3(&h, bl(to)).norm() <= h.norm());
    }

    #[test]
    fn rotation_preserves_the_norm(s in seed()) {
        let mut r = rng(s);
        let rot = Rotation::random(&mut r);
        let f = S2Spectrum::random_real(bl(9), 1, &mut r);
        prop_assert!((rotate_s2_spectrum(&f, &rot).norm() - f.norm()).abs() < 1e-12 * f.norm());
    }
}
