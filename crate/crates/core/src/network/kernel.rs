//! Kernels parameterized by real weights on a localized support grid.
//!
//! Each support point contributes its bandlimited delta: on S² the atom is
//! `κ̂^ℓ_m = conj(Y^ℓ_m(y_p))`, on SO(3) it is `κ̂^ℓ_{mn} = (2ℓ+1)/(8π²)·D^ℓ_{mn}(g_p)`.
//! Support points share only a handful of distinct β values, so the atoms
//! factor into a per-β Legendre or Wigner-d table times azimuthal phases.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::equivariant::{KernelSpectrumS2, KernelSpectrumSo3};
use crate::error::{Error, Result};
use crate::grid::{make_kernel_support_grid, Bandlimit};
use crate::repr::{block_dim, wigner_d_all, EulerAngles, NormalizedLegendre, WignerSmallD};
use crate::transforms::{so3_analysis_scale, so3_block_offset, S2Spectrum, So3Spectrum};

use super::spec::LayerSpec;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpectrum {
    S2(KernelSpectrumS2),
    So3(KernelSpectrumSo3),
}

impl KernelSpectrum {
    pub fn coeffs(&self) -> &[Complex64] {
        match self {
            KernelSpectrum::S2(k) => &k.spectrum.coeffs,
            KernelSpectrum::So3(k) => &k.spectrum.coeffs,
        }
    }

    fn coeffs_mut(&mut self) -> &mut [Complex64] {
        match self {
            KernelSpectrum::S2(k) => &mut k.spectrum.coeffs,
            KernelSpectrum::So3(k) => &mut k.spectrum.coeffs,
        }
    }

    /// Entrywise `self += other`; both must come from the same layer.
    pub fn add_assign(&mut self, other: &KernelSpectrum) {
        debug_assert_eq!(self.coeffs().len(), other.coeffs().len());
        self.coeffs_mut().iter_mut().zip(other.coeffs()).for_each(|(a, b)| *a += b);
    }
}

enum Profile {
    S2(NormalizedLegendre),
    So3(Vec<WignerSmallD>),
}

struct BetaGroup {
    members: Vec<usize>,
    profile: Profile,
}

/// Precomputed atom tables for one layer at its convolution bandlimit.
pub struct KernelBasis {
    bandlimit: Bandlimit,
    s2: bool,
    points: Vec<EulerAngles>,
    groups: Vec<BetaGroup>,
    /// `e^{-imα_p}` for `m = -(L-1)..=L-1`, row per point.
    alpha_phase: Vec<Complex64>,
    /// `e^{-inγ_p}`, same layout.
    gamma_phase: Vec<Complex64>,
}

impl KernelBasis {
    pub fn for_layer(layer: &LayerSpec) -> Result<Self> {
        let l = Bandlimit::new(layer.conv_bandlimit())?;
        let grid = make_kernel_support_grid(l, layer.beta_hat, layer.support_counts)?;
        let s2 = layer.kind.has_s2_kernel();
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for (p, e) in grid.points.iter().enumerate() {
            match groups.iter_mut().find(|(b, _)| *b == e.beta) {
                Some((_, members)) => members.push(p),
                None => groups.push((e.beta, vec![p])),
            }
        }
        let groups = groups
            .into_iter()
            .map(|(beta, members)| BetaGroup {
                members,
                profile: if s2 {
                    Profile::S2(NormalizedLegendre::new(l.get(), beta))
                } else {
                    Profile::So3(wigner_d_all(l.get(), beta))
                },
            })
            .collect();
        let width = 2 * l.get() - 1;
        let lm = l.get() as i64 - 1;
        let mut alpha_phase = Vec::with_capacity(grid.points.len() * width);
        let mut gamma_phase = Vec::with_capacity(grid.points.len() * width);
        for e in &grid.points {
            for m in -lm..=lm {
                alpha_phase.push(Complex64::from_polar(1.0, -(m as f64) * e.alpha));
                gamma_phase.push(Complex64::from_polar(1.0, -(m as f64) * e.gamma));
            }
        }
        Ok(KernelBasis { bandlimit: l, s2, points: grid.points, groups, alpha_phase, gamma_phase })
    }

    pub fn bandlimit(&self) -> Bandlimit {
        self.bandlimit
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[EulerAngles] {
        &self.points
    }

    fn width(&self) -> usize {
        2 * self.bandlimit.get() - 1
    }

    fn pair_s2(&self, w: &[f64], out: &mut [Complex64]) {
        let l = self.bandlimit.get();
        let width = self.width();
        let lm = l as i64 - 1;
        for g in &self.groups {
            let mut a = vec![ZERO; width];
            for &p in &g.members {
                let row = &self.alpha_phase[p * width..(p + 1) * width];
                for (acc, ph) in a.iter_mut().zip(row) {
                    *acc += ph * w[p];
                }
            }
            let Profile::S2(leg) = &g.profile else { unreachable!() };
            for ell in 0..l {
                for m in -(ell as i64)..=ell as i64 {
                    out[S2Spectrum::index(ell, m)] += a[(m + lm) as usize] * leg.profile(ell, m);
                }
            }
        }
    }

    fn pair_so3(&self, w: &[f64], out: &mut [Complex64]) {
        let l = self.bandlimit.get();
        let width = self.width();
        let lm = l as i64 - 1;
        for g in &self.groups {
            let mut a = vec![ZERO; width * width];
            for &p in &g.members {
                let ar = &self.alpha_phase[p * width..(p + 1) * width];
                let gr = &self.gamma_phase[p * width..(p + 1) * width];
                for (i, pa) in ar.iter().enumerate() {
                    let s = pa * w[p];
                    for (acc, pg) in a[i * width..(i + 1) * width].iter_mut().zip(gr) {
                        *acc += s * pg;
                    }
                }
            }
            let Profile::So3(d) = &g.profile else { unreachable!() };
            for (ell, dl) in d.iter().enumerate() {
                let li = ell as i64;
                let dim = block_dim(ell);
                let s = so3_analysis_scale(ell);
                let base = so3_block_offset(ell);
                for m in -li..=li {
                    let arow = (m + lm) as usize * width;
                    for n in -li..=li {
                        let k = (m + li) as usize * dim + (n + li) as usize;
                        out[base + k] += a[arow + (n + lm) as usize] * (s * dl.entries[k]);
                    }
                }
            }
        }
    }

    /// `κ̂ = Σ_p w_p · atom_p` for every `(out, in)` pair; weights are ordered
    /// `(out, in, point)`.
    pub fn to_spectrum(&self, weights: &[f64], out_channels: usize, in_channels: usize) -> Result<KernelSpectrum> {
        let n = self.len();
        if weights.len() != out_channels * in_channels * n {
            return Err(Error::Shape(format!(
                "kernel needs {} weights for {out_channels}×{in_channels} pairs on {n} points, got {}",
                out_channels * in_channels * n,
                weights.len()
            )));
        }
        let l = self.bandlimit;
        let per = if self.s2 { l.s2_coeff_count() } else { l.so3_coeff_count() };
        let chunks: Vec<Vec<Complex64>> = weights
            .par_chunks(n)
            .map(|w| {
                let mut out = vec![ZERO; per];
                if self.s2 {
                    self.pair_s2(w, &mut out);
                } else {
                    self.pair_so3(w, &mut out);
                }
                out
            })
            .collect();
        let coeffs = chunks.concat();
        let pairs = out_channels * in_channels;
        Ok(if self.s2 {
            KernelSpectrum::S2(KernelSpectrumS2::new(out_channels, in_channels, S2Spectrum::new(l, pairs, coeffs)?)?)
        } else {
            KernelSpectrum::So3(KernelSpectrumSo3::new(out_channels, in_channels, So3Spectrum::new(l, pairs, coeffs)?)?)
        })
    }

    /// Gradient with respect to the weights given the gradient with respect
    /// to the kernel spectrum: `∂w_p = Re Σ conj(atom_p) · ∂κ̂`.
    pub fn weight_gradient(&self, grad: &KernelSpectrum) -> Vec<f64> {
        let n = self.len();
        let width = self.width();
        let lm = self.bandlimit.get() as i64 - 1;
        let (pairs, coeffs, per): (usize, &[Complex64], usize) = match grad {
            KernelSpectrum::S2(k) => (k.spectrum.channels, &k.spectrum.coeffs, k.spectrum.per_channel()),
            KernelSpectrum::So3(k) => (k.spectrum.channels, &k.spectrum.coeffs, k.spectrum.per_channel()),
        };
        let chunks: Vec<Vec<f64>> = (0..pairs)
            .into_par_iter()
            .map(|pair| {
                let g = &coeffs[pair * per..(pair + 1) * per];
                let mut out = vec![0.0; n];
                for grp in &self.groups {
                    match &grp.profile {
                        Profile::S2(leg) => {
                            let mut b = vec![ZERO; width];
                            for ell in 0..self.bandlimit.get() {
                                for m in -(ell as i64)..=ell as i64 {
                                    b[(m + lm) as usize] += g[S2Spectrum::index(ell, m)] * leg.profile(ell, m);
                                }
                            }
                            for &p in &grp.members {
                                let ar = &self.alpha_phase[p * width..(p + 1) * width];
                                out[p] = ar.iter().zip(&b).map(|(ph, v)| (ph.conj() * v).re).sum();
                            }
                        }
                        Profile::So3(d) => {
                            let mut b = vec![ZERO; width * width];
                            for (ell, dl) in d.iter().enumerate() {
                                let li = ell as i64;
                                let dim = block_dim(ell);
                                let s = so3_analysis_scale(ell);
                                let base = so3_block_offset(ell);
                                for m in -li..=li {
                                    for nn in -li..=li {
                                        let k = (m + li) as usize * dim + (nn + li) as usize;
                                        b[(m + lm) as usize * width + (nn + lm) as usize] += g[base + k] * (s * dl.entries[k]);
                                    }
                                }
                            }
                            for &p in &grp.members {
                                let ar = &self.alpha_phase[p * width..(p + 1) * width];
                                let gr = &self.gamma_phase[p * width..(p + 1) * width];
                                let mut acc = 0.0;
                                for (i, pa) in ar.iter().enumerate() {
                                    let row = &b[i * width..(i + 1) * width];
                                    let inner: Complex64 = row.iter().zip(gr).map(|(v, pg)| pg.conj() * v).sum();
                                    acc += (pa.conj() * inner).re;
                                }
                                out[p] = acc;
                            }
                        }
                    }
                }
                out
            })
            .collect();
        chunks.concat()
    }
}

/// Kernel spectrum of one layer from its flat weight block.
pub fn kernel_weights_to_spectrum(layer: &LayerSpec, weights: &[f64]) -> Result<KernelSpectrum> {
    KernelBasis::for_layer(layer)?.to_spectrum(weights, layer.out_channels, layer.in_channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::LayerKind;
    use crate::repr::{spherical_harmonic, wigner_D};

    #[test]
    fn single_atom_matches_direct_formula() {
        let layer = LayerSpec::new(LayerKind::So3Conv, 1, 1, 5, 5, 0.6);
        let basis = KernelBasis::for_layer(&layer).unwrap();
        let p = 37;
        let mut w = vec![0.0; basis.len()];
        w[p] = 1.0;
        let KernelSpectrum::So3(k) = basis.to_spectrum(&w, 1, 1).unwrap() else { panic!() };
        let g = basis.points()[p];
        for ell in 0..5usize {
            let d = wigner_D(ell, g);
            let s = so3_analysis_scale(ell);
            for m in -(ell as i64)..=ell as i64 {
                for n in -(ell as i64)..=ell as i64 {
                    assert!((k.spectrum.get(0, ell, m, n) - d.get(m, n) * s).norm() < 1e-14);
                }
            }
        }

        let layer = LayerSpec::new(LayerKind::S2So3Conv, 1, 1, 5, 5, 0.6);
        let basis = KernelBasis::for_layer(&layer).unwrap();
        let mut w = vec![0.0; basis.len()];
        w[5] = 1.0;
        let KernelSpectrum::S2(k) = basis.to_spectrum(&w, 1, 1).unwrap() else { panic!() };
        let e = basis.points()[5];
        for ell in 0..5usize {
            for m in -(ell as i64)..=ell as i64 {
                let y = spherical_harmonic(ell, m, e.beta, e.alpha).unwrap().conj();
                assert!((k.spectrum.get(0, ell, m) - y).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn weight_count_is_checked() {
        let layer = LayerSpec::new(LayerKind::So3Conv, 2, 3, 4, 4, 0.6);
        assert!(matches!(kernel_weights_to_spectrum(&layer, &[0.0; 5]), Err(Error::Shape(_))));
    }
}
