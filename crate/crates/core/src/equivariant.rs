//! Spectral layer algebra: lifting and group convolutions, the SO(3)→S²
//! output layer, invariant readout, H-orbit projection and rotations.
//!
//! Every routine here works on spectra. Each convolution also has an adjoint
//! used by the network's reverse pass: for a real loss and a complex-linear
//! map `y = A x`, the gradient with respect to `x` is `Aᴴ` applied to the
//! gradient with respect to `y`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Bandlimit, Rotation};
use crate::repr::{block_dim, wigner_D_all, WignerBlock};
use crate::transforms::{so3_analysis_scale, so3_block_offset, S2Plan, S2Spectrum, So3Spectrum, SphericalSignal};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[inline]
fn parity(k: i64) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Lifting kernel on S², one spectrum per `(out, in)` pair at channel `o·n_in + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpectrumS2 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub spectrum: S2Spectrum,
}

impl KernelSpectrumS2 {
    pub fn new(out_channels: usize, in_channels: usize, spectrum: S2Spectrum) -> Result<Self> {
        if spectrum.channels != out_channels * in_channels {
            return Err(Error::Shape(format!(
                "kernel with {out_channels}×{in_channels} channel pairs has {} spectra",
                spectrum.channels
            )));
        }
        Ok(KernelSpectrumS2 { out_channels, in_channels, spectrum })
    }

    pub fn zeros(l: Bandlimit, out_channels: usize, in_channels: usize) -> Self {
        KernelSpectrumS2 { out_channels, in_channels, spectrum: S2Spectrum::zeros(l, out_channels * in_channels) }
    }

    pub fn bandlimit(&self) -> Bandlimit {
        self.spectrum.bandlimit
    }

    pub fn pair(&self, o: usize, i: usize) -> &[Complex64] {
        self.spectrum.channel(o * self.in_channels + i)
    }
}

/// Group-convolution kernel on SO(3), channel layout as [`KernelSpectrumS2`].
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpectrumSo3 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub spectrum: So3Spectrum,
}

impl KernelSpectrumSo3 {
    pub fn new(out_channels: usize, in_channels: usize, spectrum: So3Spectrum) -> Result<Self> {
        if spectrum.channels != out_channels * in_channels {
            return Err(Error::Shape(format!(
                "kernel with {out_channels}×{in_channels} channel pairs has {} spectra",
                spectrum.channels
            )));
        }
        Ok(KernelSpectrumSo3 { out_channels, in_channels, spectrum })
    }

    pub fn zeros(l: Bandlimit, out_channels: usize, in_channels: usize) -> Self {
        KernelSpectrumSo3 { out_channels, in_channels, spectrum: So3Spectrum::zeros(l, out_channels * in_channels) }
    }

    pub fn bandlimit(&self) -> Bandlimit {
        self.spectrum.bandlimit
    }

    pub fn pair(&self, o: usize, i: usize) -> &[Complex64] {
        self.spectrum.channel(o * self.in_channels + i)
    }
}

fn check_bandlimits(expected: Bandlimit, got: Bandlimit) -> Result<()> {
    if expected != got {
        return Err(Error::BandlimitMismatch { expected: expected.get(), got: got.get() });
    }
    Ok(())
}

fn check_channels(kernel_in: usize, signal: usize) -> Result<()> {
    if kernel_in != signal {
        return Err(Error::Shape(format!("kernel expects {kernel_in} input channels, signal has {signal}")));
    }
    Ok(())
}

/// `(κ ⋆ f)(R) = ∫_{S²} κ(R⁻¹x) f(x) dx`, summed over input channels.
///
/// Spectrally `out^ℓ_{mn} = Σ_i f̂[i]^ℓ_m · (-1)^n κ̂[o,i]^ℓ_{-n}`.
pub fn conv_s2_to_so3(kappa: &KernelSpectrumS2, f: &S2Spectrum) -> Result<So3Spectrum> {
    check_bandlimits(kappa.bandlimit(), f.bandlimit)?;
    check_channels(kappa.in_channels, f.channels)?;
    let l = f.bandlimit;
    let per = l.so3_coeff_count();
    let chunks: Vec<Vec<Complex64>> = (0..kappa.out_channels)
        .into_par_iter()
        .map(|o| {
            let mut out = vec![ZERO; per];
            for i in 0..kappa.in_channels {
                let k = kappa.pair(o, i);
                let fi = f.channel(i);
                for ell in 0..l.get() {
                    let li = ell as i64;
                    let dim = block_dim(ell);
                    let base = so3_block_offset(ell);
                    for m in -li..=li {
                        let fm = fi[S2Spectrum::index(ell, m)];
                        let row = &mut out[base + (m + li) as usize * dim..base + (m + li + 1) as usize * dim];
                        for (c, n) in (-li..=li).enumerate() {
                            row[c] += fm * k[S2Spectrum::index(ell, -n)] * parity(n);
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok(So3Spectrum { bandlimit: l, channels: kappa.out_channels, coeffs: chunks.concat() })
}

/// Gradients of [`conv_s2_to_so3`] with respect to the kernel and the input.
pub fn conv_s2_to_so3_adjoint(
    kappa: &KernelSpectrumS2,
    f: &S2Spectrum,
    grad: &So3Spectrum,
) -> Result<(KernelSpectrumS2, S2Spectrum)> {
    check_bandlimits(f.bandlimit, grad.bandlimit)?;
    let l = f.bandlimit;
    let mut gk = KernelSpectrumS2::zeros(l, kappa.out_channels, kappa.in_channels);
    let mut gf = S2Spectrum::zeros(l, f.channels);
    for o in 0..kappa.out_channels {
        let g = grad.channel(o);
        for i in 0..kappa.in_channels {
            let k = kappa.pair(o, i).to_vec();
            let fi = f.channel(i).to_vec();
            let gk_pair = gk.spectrum.channel_mut(o * kappa.in_channels + i);
            let mut gf_i = vec![ZERO; l.s2_coeff_count()];
            for ell in 0..l.get() {
                let li = ell as i64;
                let dim = block_dim(ell);
                let base = so3_block_offset(ell);
                for m in -li..=li {
                    let fm = fi[S2Spectrum::index(ell, m)];
                    let row = &g[base + (m + li) as usize * dim..base + (m + li + 1) as usize * dim];
                    let mut acc = ZERO;
                    for (c, n) in (-li..=li).enumerate() {
                        let s = parity(n);
                        acc += (k[S2Spectrum::index(ell, -n)] * s).conj() * row[c];
                        gk_pair[S2Spectrum::index(ell, -n)] += (fm * s).conj() * row[c];
                    }
                    gf_i[S2Spectrum::index(ell, m)] += acc;
                }
            }
            for (a, b) in gf.channel_mut(i).iter_mut().zip(gf_i) {
                *a += b;
            }
        }
    }
    Ok((gk, gf))
}

/// `(κ ⋆ f)(R) = ∫_{SO(3)} κ(S⁻¹R) f(S) dS`, summed over input channels.
///
/// Spectrally `out^ℓ = 8π²/(2ℓ+1) · Σ_i f̂[i]^ℓ · κ̂[o,i]^ℓ` (matrix product).
pub fn conv_so3(kappa: &KernelSpectrumSo3, f: &So3Spectrum) -> Result<So3Spectrum> {
    check_bandlimits(kappa.bandlimit(), f.bandlimit)?;
    check_channels(kappa.in_channels, f.channels)?;
    let l = f.bandlimit;
    let per = l.so3_coeff_count();
    let chunks: Vec<Vec<Complex64>> = (0..kappa.out_channels)
        .into_par_iter()
        .map(|o| {
            let mut out = vec![ZERO; per];
            for i in 0..kappa.in_channels {
                let k = kappa.pair(o, i);
                let fi = f.channel(i);
                for ell in 0..l.get() {
                    let base = so3_block_offset(ell);
                    let dim = block_dim(ell);
                    let s = 1.0 / so3_analysis_scale(ell);
                    matmul_acc(&fi[base..], &k[base..], &mut out[base..], dim, s, false, false);
                }
            }
            out
        })
        .collect();
    Ok(So3Spectrum { bandlimit: l, channels: kappa.out_channels, coeffs: chunks.concat() })
}

/// `c += s · op(a) · op(b)` on `dim×dim` blocks, where `op` optionally takes the
/// conjugate transpose.
fn matmul_acc(a: &[Complex64], b: &[Complex64], c: &mut [Complex64], dim: usize, s: f64, ha: bool, hb: bool) {
    let at = |r: usize, k: usize| if ha { a[k * dim + r].conj() } else { a[r * dim + k] };
    let bt = |k: usize, col: usize| if hb { b[col * dim + k].conj() } else { b[k * dim + col] };
    for r in 0..dim {
        for k in 0..dim {
            let av = at(r, k) * s;
            for col in 0..dim {
                c[r * dim + col] += av * bt(k, col);
            }
        }
    }
}

/// Gradients of [`conv_so3`] with respect to the kernel and the input.
pub fn conv_so3_adjoint(
    kappa: &KernelSpectrumSo3,
    f: &So3Spectrum,
    grad: &So3Spectrum,
) -> Result<(KernelSpectrumSo3, So3Spectrum)> {
    check_bandlimits(f.bandlimit, grad.bandlimit)?;
    let l = f.bandlimit;
    let n_in = kappa.in_channels;
    let per = l.so3_coeff_count();
    let kernel_chunks: Vec<Vec<Complex64>> = (0..kappa.out_channels * n_in)
        .into_par_iter()
        .map(|p| {
            let (o, i) = (p / n_in, p % n_in);
            let mut out = vec![ZERO; per];
            for ell in 0..l.get() {
                let base = so3_block_offset(ell);
                let s = 1.0 / so3_analysis_scale(ell);
                matmul_acc(&f.channel(i)[base..], &grad.channel(o)[base..], &mut out[base..], block_dim(ell), s, true, false);
            }
            out
        })
        .collect();
    let input_chunks: Vec<Vec<Complex64>> = (0..n_in)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![ZERO; per];
            for o in 0..kappa.out_channels {
                for ell in 0..l.get() {
                    let base = so3_block_offset(ell);
                    let s = 1.0 / so3_analysis_scale(ell);
                    matmul_acc(&grad.channel(o)[base..], &kappa.pair(o, i)[base..], &mut out[base..], block_dim(ell), s, false, true);
                }
            }
            out
        })
        .collect();
    let gk = KernelSpectrumSo3 {
        out_channels: kappa.out_channels,
        in_channels: n_in,
        spectrum: So3Spectrum { bandlimit: l, channels: kappa.out_channels * n_in, coeffs: kernel_chunks.concat() },
    };
    Ok((gk, So3Spectrum { bandlimit: l, channels: n_in, coeffs: input_chunks.concat() }))
}

/// S² spectrum of the output layer: `ĝ^ℓ_m = Σ_n cf^ℓ_{mn}`.
pub fn so3_to_s2_final_spectrum(cf: &So3Spectrum) -> S2Spectrum {
    let l = cf.bandlimit;
    let mut out = S2Spectrum::zeros(l, cf.channels);
    for c in 0..cf.channels {
        for ell in 0..l.get() {
            let li = ell as i64;
            let dim = block_dim(ell);
            let block = cf.block(c, ell);
            for m in -li..=li {
                let row = &block[(m + li) as usize * dim..(m + li + 1) as usize * dim];
                out.set(c, ell, m, row.iter().sum());
            }
        }
    }
    out
}

/// Gradient of [`so3_to_s2_final_spectrum`]: `∂cf^ℓ_{mn} = ∂ĝ^ℓ_m` for every `n`.
pub fn so3_to_s2_final_spectrum_adjoint(grad: &S2Spectrum) -> So3Spectrum {
    let l = grad.bandlimit;
    let mut out = So3Spectrum::zeros(l, grad.channels);
    for c in 0..grad.channels {
        for ell in 0..l.get() {
            let li = ell as i64;
            let dim = block_dim(ell);
            let block = out.block_mut(c, ell);
            for m in -li..=li {
                let g = grad.get(c, ell, m);
                block[(m + li) as usize * dim..(m + li + 1) as usize * dim].fill(g);
            }
        }
    }
    out
}

/// `f_final(x) = Σ_{ℓ,m,n} cf^ℓ_{mn} Y^ℓ_m(x)` on the S² grid of the same bandlimit.
pub fn so3_to_s2_final(cf: &So3Spectrum) -> Result<SphericalSignal> {
    S2Plan::cached(cf.bandlimit).synthesize(&so3_to_s2_final_spectrum(cf))
}

/// `∫_{SO(3)} f(g) dg = 8π² · Re f̂⁰₀₀` per channel.
pub fn invariant_readout(f: &So3Spectrum) -> Vec<f64> {
    (0..f.channels).map(|c| 8.0 * PI * PI * f.get(c, 0, 0, 0).re).collect()
}

/// S² spectrum of `∫_H f(g_x h) dh`: `ĝ^ℓ_m = 2π·√(4π/(2ℓ+1))·f̂^ℓ_{m0}`.
pub fn h_orbit_projection_spectrum(f: &So3Spectrum) -> S2Spectrum {
    let l = f.bandlimit;
    let mut out = S2Spectrum::zeros(l, f.channels);
    for c in 0..f.channels {
        for ell in 0..l.get() {
            let s = 2.0 * PI * (4.0 * PI / block_dim(ell) as f64).sqrt();
            for m in -(ell as i64)..=ell as i64 {
                out.set(c, ell, m, f.get(c, ell, m, 0) * s);
            }
        }
    }
    out
}

/// `f_final(x) = ∫_H f(g_x h) dh` with `g_x = (φ, θ, 0)` and `H` the rotations about z.
pub fn h_orbit_projection(f: &So3Spectrum) -> Result<SphericalSignal> {
    S2Plan::cached(f.bandlimit).synthesize(&h_orbit_projection_spectrum(f))
}

fn rotate_blocks(r: &Rotation, l: Bandlimit) -> Vec<WignerBlock> {
    wigner_D_all(l.get(), r.euler())
}

/// Spectrum of `x ↦ f(R⁻¹x)`: `ĝ^ℓ = D^ℓ(R) f̂^ℓ`.
pub fn rotate_s2_spectrum(f: &S2Spectrum, r: &Rotation) -> S2Spectrum {
    let l = f.bandlimit;
    let blocks = rotate_blocks(r, l);
    let mut out = S2Spectrum::zeros(l, f.channels);
    for c in 0..f.channels {
        let src = f.channel(c);
        let dst = out.channel_mut(c);
        for (ell, d) in blocks.iter().enumerate() {
            let dim = block_dim(ell);
            let off = ell * ell;
            for k in 0..dim {
                let mut acc = ZERO;
                for m in 0..dim {
                    acc += d.entries[k * dim + m] * src[off + m];
                }
                dst[off + k] = acc;
            }
        }
    }
    out
}

/// Spectrum of `Q ↦ f(R⁻¹Q)`: `ĝ^ℓ = D^ℓ(R) f̂^ℓ`.
pub fn rotate_so3_spectrum(f: &So3Spectrum, r: &Rotation) -> So3Spectrum {
    let l = f.bandlimit;
    let blocks = rotate_blocks(r, l);
    let mut out = So3Spectrum::zeros(l, f.channels);
    for c in 0..f.channels {
        for (ell, d) in blocks.iter().enumerate() {
            let dim = block_dim(ell);
            let src = f.block(c, ell).to_vec();
            matmul_acc(&d.entries, &src, out.block_mut(c, ell), dim, 1.0, false, false);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{wigner_D, EulerAngles};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bl(l: usize) -> Bandlimit {
        Bandlimit::new(l).unwrap()
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn isotropic_kernel_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = S2Spectrum::random_real(bl(4), 1, &mut rng);
        let mut k = KernelSpectrumS2::zeros(bl(4), 1, 1);
        k.spectrum.set(0, 0, 0, Complex64::new(1.5, 0.0));
        let out = conv_s2_to_so3(&k, &f).unwrap();
        let integral = f.get(0, 0, 0) * (4.0 * PI).sqrt();
        let want = 1.5 / (4.0 * PI).sqrt() * integral;
        for (idx, &(a, b, g)) in [(0.1, 0.2, 0.3), (2.0, 1.0, 4.0)].iter().enumerate() {
            let v = out.evaluate(0, EulerAngles::new(a, b, g));
            assert!((v - want).norm() < 1e-12, "probe {idx}");
        }
    }

    #[test]
    fn final_layer_single_entry_gives_harmonic() {
        let mut cf = So3Spectrum::zeros(bl(4), 1);
        cf.set(0, 2, 1, -2, Complex64::new(1.0, 0.0));
        let g = so3_to_s2_final_spectrum(&cf);
        for ell in 0..4usize {
            for m in -(ell as i64)..=ell as i64 {
                let want = if (ell, m) == (2, 1) { 1.0 } else { 0.0 };
                assert!((g.get(0, ell, m) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn readout_of_constant() {
        let mut f = So3Spectrum::zeros(bl(3), 2);
        f.set(1, 0, 0, 0, Complex64::new(0.5, 0.0));
        let r = invariant_readout(&f);
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn h_projection_kills_nonzero_n() {
        let mut f = So3Spectrum::zeros(bl(3), 1);
        f.set(0, 1, 0, 1, Complex64::new(1.0, 0.0));
        assert!(h_orbit_projection_spectrum(&f).norm() < 1e-15);
    }

    #[test]
    fn rotation_matches_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = S2Spectrum::random_real(bl(5), 1, &mut rng);
        let r = Rotation::random(&mut rng);
        let g = rotate_s2_spectrum(&f, &r);
        let inv = r.inverse();
        for &(t, p) in &[(0.3, 1.0), (2.0, 5.0), (1.2, 0.1)] {
            let x = crate::repr::angles_to_vector(t, p);
            let (t2, p2) = crate::repr::vector_to_angles(inv.apply(x));
            assert!((g.evaluate(0, t, p) - f.evaluate(0, t2, p2)).norm() < 1e-10);
        }
        let back = rotate_s2_spectrum(&g, &inv);
        assert!(rel(&back.coeffs, &f.coeffs) < 1e-12);
    }

    #[test]
    fn so3_rotation_matches_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = So3Spectrum::random_real(bl(4), 1, &mut rng);
        let r = Rotation::random(&mut rng);
        let g = rotate_so3_spectrum(&f, &r);
        let q = Rotation::random(&mut rng);
        let rq = r.inverse().compose(&q);
        assert!((g.evaluate(0, q.euler()) - f.evaluate(0, rq.euler())).norm() < 1e-10);
    }

    #[test]
    fn lifting_matches_wigner_expansion_of_harmonics() {
        // κ = Y^1_0, f = conj(Y^1_1): ∫ Y^1_0(R⁻¹x) conj(Y^1_1(x)) dx = D^1_{10}(R)
        let mut k = KernelSpectrumS2::zeros(bl(2), 1, 1);
        k.spectrum.set(0, 1, 0, Complex64::new(1.0, 0.0));
        let mut f = S2Spectrum::zeros(bl(2), 1);
        f.set(0, 1, -1, Complex64::new(-1.0, 0.0));
        let out = conv_s2_to_so3(&k, &f).unwrap();
        let g = EulerAngles::new(0.4, 1.1, 2.3);
        let want = wigner_D(1, g).get(1, 0);
        assert!((out.evaluate(0, g) - want).norm() < 1e-12);
    }

    #[test]
    fn mismatched_bandlimits_are_rejected() {
        let k = KernelSpectrumS2::zeros(bl(3), 1, 1);
        let f = S2Spectrum::zeros(bl(4), 1);
        assert!(matches!(conv_s2_to_so3(&k, &f), Err(Error::BandlimitMismatch { .. })));
        let k = KernelSpectrumSo3::zeros(bl(4), 1, 2);
        let f = So3Spectrum::zeros(bl(4), 1);
        assert!(matches!(conv_so3(&k, &f), Err(Error::Shape(_))));
    }
}
