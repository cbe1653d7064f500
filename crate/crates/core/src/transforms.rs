//! Fourier transforms on S² and SO(3) for bandlimited multichannel signals.
//!
//! S² spectra use `f̂^ℓ_m = ∫ f conj(Y^ℓ_m)` and `f = Σ f̂^ℓ_m Y^ℓ_m`.
//!
//! SO(3) spectra pair analysis with `D` and synthesis with `conj(D)`:
//!
//! ```text
//! f̂^ℓ_{mn} = (2ℓ+1)/(8π²) ∫ f(R) D^ℓ_{mn}(R) dR
//! f(R)     = Σ_ℓ Σ_{m,n} f̂^ℓ_{mn} conj(D^ℓ_{mn}(R))
//! ```
//!
//! With this pairing a left translation `f ↦ f(Q⁻¹·)` multiplies every block
//! by `D^ℓ(Q)` on the left, the same action as on S² spectra, which is what
//! makes the SO(3)→S² output layer equivariant.
//!
//! Azimuthal axes are handled with length-`2L` FFTs, the polar axis with a
//! dense Legendre / Wigner-d contraction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Bandlimit, S2Grid, So3Grid};
use crate::repr::{block_dim, wigner_D_all, wigner_d_all, EulerAngles, NormalizedLegendre, WignerSmallD};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[inline]
fn bin(m: i64, n: usize) -> usize {
    m.rem_euclid(n as i64) as usize
}

/// `(2ℓ+1)/(8π²)`
#[inline]
pub fn so3_analysis_scale(ell: usize) -> f64 {
    (2 * ell + 1) as f64 / (8.0 * PI * PI)
}

/// Offset of block `ℓ` inside one channel of an [`So3Spectrum`].
#[inline]
pub fn so3_block_offset(ell: usize) -> usize {
    if ell == 0 {
        0
    } else {
        ell * (2 * ell - 1) * (2 * ell + 1) / 3
    }
}

/// Real samples on the `2L×2L` grid, layout `(channel, θ-ring, φ-column)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalSignal {
    pub bandlimit: Bandlimit,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl SphericalSignal {
    pub fn new(bandlimit: Bandlimit, channels: usize, values: Vec<f64>) -> Result<Self> {
        let want = channels * bandlimit.samples() * bandlimit.samples();
        if values.len() != want || channels == 0 {
            return Err(Error::Shape(format!(
                "spherical signal with {channels} channels at L={bandlimit} needs {want} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample".into()));
        }
        Ok(SphericalSignal { bandlimit, channels, values })
    }

    pub fn zeros(bandlimit: Bandlimit, channels: usize) -> Self {
        let n = bandlimit.samples();
        SphericalSignal { bandlimit, channels, values: vec![0.0; channels * n * n] }
    }

    /// Samples `f(c, θ, φ)` on the grid.
    pub fn from_fn(bandlimit: Bandlimit, channels: usize, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        let grid = S2Grid::new(bandlimit);
        let mut values = Vec::with_capacity(channels * grid.len());
        for c in 0..channels {
            for &t in &grid.thetas {
                for &p in &grid.phis {
                    values.push(f(c, t, p));
                }
            }
        }
        SphericalSignal { bandlimit, channels, values }
    }

    pub fn points_per_channel(&self) -> usize {
        self.bandlimit.samples() * self.bandlimit.samples()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.points_per_channel();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.points_per_channel();
        &mut self.values[c * n..(c + 1) * n]
    }
}

/// Real samples on the `2L×2L×2L` Euler grid, layout `(channel, α, β, γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct So3Signal {
    pub bandlimit: Bandlimit,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl So3Signal {
    pub fn new(bandlimit: Bandlimit, channels: usize, values: Vec<f64>) -> Result<Self> {
        let n = bandlimit.samples();
        let want = channels * n * n * n;
        if values.len() != want || channels == 0 {
            return Err(Error::Shape(format!(
                "SO(3) signal with {channels} channels at L={bandlimit} needs {want} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample".into()));
        }
        Ok(So3Signal { bandlimit, channels, values })
    }

    pub fn zeros(bandlimit: Bandlimit, channels: usize) -> Self {
        let n = bandlimit.samples();
        So3Signal { bandlimit, channels, values: vec![0.0; channels * n * n * n] }
    }

    pub fn from_fn(bandlimit: Bandlimit, channels: usize, f: impl Fn(usize, EulerAngles) -> f64) -> Self {
        let grid = So3Grid::new(bandlimit);
        let mut values = Vec::with_capacity(channels * grid.len());
        for c in 0..channels {
            for &a in &grid.alphas {
                for &b in &grid.betas {
                    for &g in &grid.gammas {
                        values.push(f(c, EulerAngles::new(a, b, g)));
                    }
                }
            }
        }
        So3Signal { bandlimit, channels, values }
    }

    pub fn points_per_channel(&self) -> usize {
        let n = self.bandlimit.samples();
        n * n * n
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.points_per_channel();
        &self.values[c * n..(c + 1) * n]
    }
}

/// Coefficients `f̂^ℓ_m`, per channel `L²` entries at index `ℓ² + (m+ℓ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct S2Spectrum {
    pub bandlimit: Bandlimit,
    pub channels: usize,
    pub coeffs: Vec<Complex64>,
}

impl S2Spectrum {
    pub fn zeros(bandlimit: Bandlimit, channels: usize) -> Self {
        S2Spectrum { bandlimit, channels, coeffs: vec![ZERO; channels * bandlimit.s2_coeff_count()] }
    }

    pub fn new(bandlimit: Bandlimit, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != channels * bandlimit.s2_coeff_count() {
            return Err(Error::Shape(format!(
                "S2 spectrum at L={bandlimit} with {channels} channels needs {} coefficients, got {}",
                channels * bandlimit.s2_coeff_count(),
                coeffs.len()
            )));
        }
        Ok(S2Spectrum { bandlimit, channels, coeffs })
    }

    #[inline]
    pub fn index(ell: usize, m: i64) -> usize {
        (ell * ell) as i64 as usize + (m + ell as i64) as usize
    }

    pub fn per_channel(&self) -> usize {
        self.bandlimit.s2_coeff_count()
    }

    pub fn get(&self, c: usize, ell: usize, m: i64) -> Complex64 {
        self.coeffs[c * self.per_channel() + Self::index(ell, m)]
    }

    pub fn set(&mut self, c: usize, ell: usize, m: i64, v: Complex64) {
        let k = c * self.per_channel() + Self::index(ell, m);
        self.coeffs[k] = v;
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.per_channel();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.per_channel();
        &mut self.coeffs[c * n..(c + 1) * n]
    }

    /// Random spectrum of a real signal: `f̂_{-m} = (-1)^m conj(f̂_m)`.
    pub fn random_real<R: Rng + ?Sized>(bandlimit: Bandlimit, channels: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(bandlimit, channels);
        for c in 0..channels {
            for ell in 0..bandlimit.get() {
                s.set(c, ell, 0, Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
                for m in 1..=ell as i64 {
                    let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    s.set(c, ell, m, v);
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    s.set(c, ell, -m, v.conj() * sign);
                }
            }
        }
        s
    }

    /// Direct evaluation `Σ f̂^ℓ_m Y^ℓ_m(θ, φ)` at an arbitrary point.
    pub fn evaluate(&self, c: usize, theta: f64, phi: f64) -> Complex64 {
        let p = NormalizedLegendre::new(self.bandlimit.get(), theta);
        let mut acc = ZERO;
        for ell in 0..self.bandlimit.get() {
            for m in -(ell as i64)..=ell as i64 {
                acc += self.get(c, ell, m) * Complex64::from_polar(p.profile(ell, m), m as f64 * phi);
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest violation of the real-signal symmetry.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.channels {
            for ell in 0..self.bandlimit.get() {
                for m in 0..=ell as i64 {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let d = self.get(c, ell, -m) - self.get(c, ell, m).conj() * sign;
                    worst = worst.max(d.norm());
                }
            }
        }
        worst
    }
}

/// Coefficients `f̂^ℓ_{mn}`, per channel blocks of `(2ℓ+1)²` row-major in `(m, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct So3Spectrum {
    pub bandlimit: Bandlimit,
    pub channels: usize,
    pub coeffs: Vec<Complex64>,
}

impl So3Spectrum {
    pub fn zeros(bandlimit: Bandlimit, channels: usize) -> Self {
        So3Spectrum { bandlimit, channels, coeffs: vec![ZERO; channels * bandlimit.so3_coeff_count()] }
    }

    pub fn new(bandlimit: Bandlimit, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != channels * bandlimit.so3_coeff_count() {
            return Err(Error::Shape(format!(
                "SO(3) spectrum at L={bandlimit} with {channels} channels needs {} coefficients, got {}",
                channels * bandlimit.so3_coeff_count(),
                coeffs.len()
            )));
        }
        Ok(So3Spectrum { bandlimit, channels, coeffs })
    }

    #[inline]
    pub fn index(ell: usize, m: i64, n: i64) -> usize {
        let l = ell as i64;
        so3_block_offset(ell) + ((m + l) * (2 * l + 1) + (n + l)) as usize
    }

    pub fn per_channel(&self) -> usize {
        self.bandlimit.so3_coeff_count()
    }

    pub fn get(&self, c: usize, ell: usize, m: i64, n: i64) -> Complex64 {
        self.coeffs[c * self.per_channel() + Self::index(ell, m, n)]
    }

    pub fn set(&mut self, c: usize, ell: usize, m: i64, n: i64, v: Complex64) {
        let k = c * self.per_channel() + Self::index(ell, m, n);
        self.coeffs[k] = v;
    }

    /// The `(2ℓ+1)²` block of degree `ℓ` for channel `c`.
    pub fn block(&self, c: usize, ell: usize) -> &[Complex64] {
        let start = c * self.per_channel() + so3_block_offset(ell);
        &self.coeffs[start..start + block_dim(ell) * block_dim(ell)]
    }

    pub fn block_mut(&mut self, c: usize, ell: usize) -> &mut [Complex64] {
        let start = c * self.per_channel() + so3_block_offset(ell);
        let len = block_dim(ell) * block_dim(ell);
        &mut self.coeffs[start..start + len]
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.per_channel();
        &self.coeffs[c * n..(c + 1) * n]
    }

    /// Random spectrum of a real signal: `f̂_{-m,-n} = (-1)^{m-n} conj(f̂_{mn})`.
    pub fn random_real<R: Rng + ?Sized>(bandlimit: Bandlimit, channels: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(bandlimit, channels);
        for c in 0..channels {
            for ell in 0..bandlimit.get() {
                let l = ell as i64;
                for m in -l..=l {
                    for n in -l..=l {
                        if (m, n) < (0, 0) {
                            continue;
                        }
                        if (m, n) == (0, 0) {
                            s.set(c, ell, 0, 0, Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
                            continue;
                        }
                        let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        s.set(c, ell, m, n, v);
                        let sign = if (m - n) % 2 == 0 { 1.0 } else { -1.0 };
                        s.set(c, ell, -m, -n, v.conj() * sign);
                    }
                }
            }
        }
        s
    }

    /// Direct evaluation `Σ f̂^ℓ_{mn} conj(D^ℓ_{mn}(g))`.
    pub fn evaluate(&self, c: usize, g: EulerAngles) -> Complex64 {
        let blocks = wigner_D_all(self.bandlimit.get(), g);
        let mut acc = ZERO;
        for (ell, d) in blocks.iter().enumerate() {
            let coeffs = self.block(c, ell);
            for (k, dv) in d.entries.iter().enumerate() {
                acc += coeffs[k] * dv.conj();
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn conjugate_symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.channels {
            for ell in 0..self.bandlimit.get() {
                let l = ell as i64;
                for m in -l..=l {
                    for n in -l..=l {
                        let sign = if (m - n) % 2 == 0 { 1.0 } else { -1.0 };
                        let d = self.get(c, ell, -m, -n) - self.get(c, ell, m, n).conj() * sign;
                        worst = worst.max(d.norm());
                    }
                }
            }
        }
        worst
    }
}

/// Precomputed tables for S² transforms at one bandlimit.
pub struct S2Plan {
    pub grid: S2Grid,
    legendre: Vec<NormalizedLegendre>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl S2Plan {
    pub fn new(l: Bandlimit) -> Self {
        let grid = S2Grid::new(l);
        let legendre = grid.thetas.iter().map(|&t| NormalizedLegendre::new(l.get(), t)).collect();
        let mut planner = FftPlanner::new();
        let n = l.samples();
        S2Plan { grid, legendre, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    /// Shared plan for `l`; plans are immutable once built.
    pub fn cached(l: Bandlimit) -> Arc<S2Plan> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<S2Plan>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("plan cache poisoned");
        map.entry(l.get()).or_insert_with(|| Arc::new(S2Plan::new(l))).clone()
    }

    pub fn bandlimit(&self) -> Bandlimit {
        self.grid.bandlimit
    }

    /// `out[ℓ,m] = Σ_j w_j λ^ℓ_m(θ_j) Σ_k x_{jk} e^{-imφ_k}`
    fn forward_sum(&self, values: &[Complex64], weights: Option<&[f64]>, out: &mut [Complex64]) {
        let l = self.bandlimit().get();
        let n = self.bandlimit().samples();
        let mut row = vec![ZERO; n];
        out.fill(ZERO);
        for j in 0..n {
            row.copy_from_slice(&values[j * n..(j + 1) * n]);
            self.fwd.process(&mut row);
            let w = weights.map_or(1.0, |w| w[j]);
            let p = &self.legendre[j];
            for ell in 0..l {
                for m in -(ell as i64)..=ell as i64 {
                    out[S2Spectrum::index(ell, m)] += row[bin(m, n)] * (w * p.profile(ell, m));
                }
            }
        }
    }

    /// `out_{jk} = Σ_{ℓ,m} c^ℓ_m Y^ℓ_m(θ_j, φ_k)`
    fn backward_sum(&self, coeffs: &[Complex64], out: &mut [Complex64]) {
        let l = self.bandlimit().get() as i64;
        let n = self.bandlimit().samples();
        for j in 0..n {
            let p = &self.legendre[j];
            let row = &mut out[j * n..(j + 1) * n];
            row.fill(ZERO);
            for m in -(l - 1)..l {
                let mut acc = ZERO;
                for ell in m.unsigned_abs() as usize..l as usize {
                    acc += coeffs[S2Spectrum::index(ell, m)] * p.profile(ell, m);
                }
                row[bin(m, n)] = acc;
            }
            self.inv.process(row);
        }
    }

    fn check_signal(&self, sig: &SphericalSignal) -> Result<()> {
        if sig.bandlimit != self.bandlimit() {
            return Err(Error::BandlimitMismatch { expected: self.bandlimit().get(), got: sig.bandlimit.get() });
        }
        Ok(())
    }

    fn check_spectrum(&self, spec: &S2Spectrum) -> Result<()> {
        if spec.bandlimit != self.bandlimit() {
            return Err(Error::BandlimitMismatch { expected: self.bandlimit().get(), got: spec.bandlimit.get() });
        }
        Ok(())
    }

    pub fn analyze(&self, sig: &SphericalSignal) -> Result<S2Spectrum> {
        self.check_signal(sig)?;
        let per = self.bandlimit().s2_coeff_count();
        let chunks: Vec<Vec<Complex64>> = (0..sig.channels)
            .into_par_iter()
            .map(|c| {
                let x: Vec<Complex64> = sig.channel(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let mut out = vec![ZERO; per];
                self.forward_sum(&x, Some(&self.grid.weights), &mut out);
                out
            })
            .collect();
        let spec = S2Spectrum { bandlimit: sig.bandlimit, channels: sig.channels, coeffs: chunks.concat() };
        debug_assert!(spec.conjugate_symmetry_error() <= 1e-9 * (1.0 + spec.norm()));
        Ok(spec)
    }

    /// Complex grid values of `Σ f̂ Y`; equals the real synthesis for real-signal spectra.
    pub fn synthesize_complex(&self, spec: &S2Spectrum) -> Result<Vec<Complex64>> {
        self.check_spectrum(spec)?;
        let pts = self.grid.len();
        let chunks: Vec<Vec<Complex64>> = (0..spec.channels)
            .into_par_iter()
            .map(|c| {
                let mut out = vec![ZERO; pts];
                self.backward_sum(spec.channel(c), &mut out);
                out
            })
            .collect();
        Ok(chunks.concat())
    }

    /// Real part of `Σ f̂ Y` on the grid.
    pub fn synthesize(&self, spec: &S2Spectrum) -> Result<SphericalSignal> {
        let values = self.synthesize_complex(spec)?.into_iter().map(|z| z.re).collect();
        Ok(SphericalSignal { bandlimit: spec.bandlimit, channels: spec.channels, values })
    }

    /// Adjoint of [`S2Plan::analyze`] as a real-linear map.
    pub fn analyze_adjoint(&self, grad: &S2Spectrum) -> Result<SphericalSignal> {
        let mut sig = self.synthesize(grad)?;
        let n = self.bandlimit().samples();
        for c in 0..sig.channels {
            for (j, w) in self.grid.weights.iter().enumerate() {
                for v in &mut sig.channel_mut(c)[j * n..(j + 1) * n] {
                    *v *= w;
                }
            }
        }
        Ok(sig)
    }

    /// Adjoint of [`S2Plan::synthesize`] as a real-linear map.
    pub fn synthesize_adjoint(&self, grad: &SphericalSignal) -> Result<S2Spectrum> {
        self.check_signal(grad)?;
        let per = self.bandlimit().s2_coeff_count();
        let chunks: Vec<Vec<Complex64>> = (0..grad.channels)
            .into_par_iter()
            .map(|c| {
                let x: Vec<Complex64> = grad.channel(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let mut out = vec![ZERO; per];
                self.forward_sum(&x, None, &mut out);
                out
            })
            .collect();
        Ok(S2Spectrum { bandlimit: grad.bandlimit, channels: grad.channels, coeffs: chunks.concat() })
    }
}

/// Precomputed tables for SO(3) transforms at one bandlimit.
pub struct So3Plan {
    pub grid: So3Grid,
    small_d: Vec<Vec<WignerSmallD>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn fft2d(buf: &mut [Complex64], n: usize, fft: &dyn Fft<f64>, scratch: &mut [Complex64]) {
    fft.process(buf);
    for i in 0..n {
        for j in 0..n {
            scratch[j * n + i] = buf[i * n + j];
        }
    }
    fft.process(scratch);
    for i in 0..n {
        for j in 0..n {
            buf[i * n + j] = scratch[j * n + i];
        }
    }
}

impl So3Plan {
    pub fn new(l: Bandlimit) -> Self {
        let grid = So3Grid::new(l);
        let small_d = grid.betas.iter().map(|&b| wigner_d_all(l.get(), b)).collect();
        let mut planner = FftPlanner::new();
        let n = l.samples();
        So3Plan { grid, small_d, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn cached(l: Bandlimit) -> Arc<So3Plan> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<So3Plan>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("plan cache poisoned");
        map.entry(l.get()).or_insert_with(|| Arc::new(So3Plan::new(l))).clone()
    }

    pub fn bandlimit(&self) -> Bandlimit {
        self.grid.bandlimit
    }

    /// `out[ℓ,m,n] = s_ℓ Σ_j w_j d^ℓ_{mn}(β_j) Σ_{a,g} x_{ajg} e^{-imα_a} e^{-inγ_g}`
    fn forward_sum(&self, values: &[Complex64], weights: Option<&[f64]>, scaled: bool, out: &mut [Complex64]) {
        let n = self.bandlimit().samples();
        let mut slice = vec![ZERO; n * n];
        let mut scratch = vec![ZERO; n * n];
        out.fill(ZERO);
        for j in 0..n {
            for a in 0..n {
                for g in 0..n {
                    slice[a * n + g] = values[(a * n + j) * n + g];
                }
            }
            fft2d(&mut slice, n, self.fwd.as_ref(), &mut scratch);
            let w = weights.map_or(1.0, |w| w[j]);
            for (ell, d) in self.small_d[j].iter().enumerate() {
                let li = ell as i64;
                let s = if scaled { w * so3_analysis_scale(ell) } else { w };
                let base = so3_block_offset(ell);
                let dim = block_dim(ell);
                for m in -li..=li {
                    let row = bin(m, n) * n;
                    let drow = &d.entries[(m + li) as usize * dim..(m + li + 1) as usize * dim];
                    let orow = &mut out[base + (m + li) as usize * dim..base + (m + li + 1) as usize * dim];
                    for (k, nn) in (-li..=li).enumerate() {
                        orow[k] += slice[row + bin(nn, n)] * (s * drow[k]);
                    }
                }
            }
        }
    }

    /// `out_{ajg} = Σ c^ℓ_{mn} conj(D^ℓ_{mn}(α_a, β_j, γ_g))`
    fn backward_sum(&self, coeffs: &[Complex64], out: &mut [Complex64]) {
        let n = self.bandlimit().samples();
        let mut slice = vec![ZERO; n * n];
        let mut scratch = vec![ZERO; n * n];
        for j in 0..n {
            slice.fill(ZERO);
            for (ell, d) in self.small_d[j].iter().enumerate() {
                let li = ell as i64;
                let base = so3_block_offset(ell);
                let dim = block_dim(ell);
                for m in -li..=li {
                    let row = bin(m, n) * n;
                    let drow = &d.entries[(m + li) as usize * dim..(m + li + 1) as usize * dim];
                    let crow = &coeffs[base + (m + li) as usize * dim..base + (m + li + 1) as usize * dim];
                    for (k, nn) in (-li..=li).enumerate() {
                        slice[row + bin(nn, n)] += crow[k] * drow[k];
                    }
                }
            }
            fft2d(&mut slice, n, self.inv.as_ref(), &mut scratch);
            for a in 0..n {
                for g in 0..n {
                    out[(a * n + j) * n + g] = slice[a * n + g];
                }
            }
        }
    }

    fn check_signal(&self, sig: &So3Signal) -> Result<()> {
        if sig.bandlimit != self.bandlimit() {
            return Err(Error::BandlimitMismatch { expected: self.bandlimit().get(), got: sig.bandlimit.get() });
        }
        Ok(())
    }

    fn check_spectrum(&self, spec: &So3Spectrum) -> Result<()> {
        if spec.bandlimit != self.bandlimit() {
            return Err(Error::BandlimitMismatch { expected: self.bandlimit().get(), got: spec.bandlimit.get() });
        }
        Ok(())
    }

    fn forward_channels(&self, values: &[f64], channels: usize, weighted: bool) -> Vec<Complex64> {
        let pts = self.grid.len();
        let per = self.bandlimit().so3_coeff_count();
        let chunks: Vec<Vec<Complex64>> = (0..channels)
            .into_par_iter()
            .map(|c| {
                let x: Vec<Complex64> =
                    values[c * pts..(c + 1) * pts].iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let mut out = vec![ZERO; per];
                if weighted {
                    self.forward_sum(&x, Some(&self.grid.weights), true, &mut out);
                } else {
                    self.forward_sum(&x, None, false, &mut out);
                }
                out
            })
            .collect();
        chunks.concat()
    }

    pub fn analyze(&self, sig: &So3Signal) -> Result<So3Spectrum> {
        self.check_signal(sig)?;
        let coeffs = self.forward_channels(&sig.values, sig.channels, true);
        let spec = So3Spectrum { bandlimit: sig.bandlimit, channels: sig.channels, coeffs };
        debug_assert!(spec.conjugate_symmetry_error() <= 1e-9 * (1.0 + spec.norm()));
        Ok(spec)
    }

    pub fn synthesize_complex(&self, spec: &So3Spectrum) -> Result<Vec<Complex64>> {
        self.check_spectrum(spec)?;
        let pts = self.grid.len();
        let chunks: Vec<Vec<Complex64>> = (0..spec.channels)
            .into_par_iter()
            .map(|c| {
                let mut out = vec![ZERO; pts];
                self.backward_sum(spec.channel(c), &mut out);
                out
            })
            .collect();
        Ok(chunks.concat())
    }

    pub fn synthesize(&self, spec: &So3Spectrum) -> Result<So3Signal> {
        let values = self.synthesize_complex(spec)?.into_iter().map(|z| z.re).collect();
        Ok(So3Signal { bandlimit: spec.bandlimit, channels: spec.channels, values })
    }

    /// Adjoint of [`So3Plan::analyze`] as a real-linear map.
    pub fn analyze_adjoint(&self, grad: &So3Spectrum) -> Result<So3Signal> {
        let mut scaled = grad.clone();
        for c in 0..scaled.channels {
            for ell in 0..scaled.bandlimit.get() {
                let s = so3_analysis_scale(ell);
                scaled.block_mut(c, ell).iter_mut().for_each(|z| *z *= s);
            }
        }
        let mut sig = self.synthesize(&scaled)?;
        let n = self.bandlimit().samples();
        for (idx, row) in sig.values.chunks_mut(n).enumerate() {
            let w = self.grid.weights[idx % n];
            row.iter_mut().for_each(|x| *x *= w);
        }
        Ok(sig)
    }

    /// Adjoint of [`So3Plan::synthesize`] as a real-linear map.
    pub fn synthesize_adjoint(&self, grad: &So3Signal) -> Result<So3Spectrum> {
        self.check_signal(grad)?;
        let coeffs = self.forward_channels(&grad.values, grad.channels, false);
        Ok(So3Spectrum { bandlimit: grad.bandlimit, channels: grad.channels, coeffs })
    }
}

pub fn s2_analyze(sig: &SphericalSignal) -> Result<S2Spectrum> {
    S2Plan::cached(sig.bandlimit).analyze(sig)
}

pub fn s2_synthesize(spec: &S2Spectrum) -> Result<SphericalSignal> {
    S2Plan::cached(spec.bandlimit).synthesize(spec)
}

pub fn so3_analyze(sig: &So3Signal) -> Result<So3Spectrum> {
    So3Plan::cached(sig.bandlimit).analyze(sig)
}

pub fn so3_synthesize(spec: &So3Spectrum) -> Result<So3Signal> {
    So3Plan::cached(spec.bandlimit).synthesize(spec)
}

/// Truncates degrees `ℓ ≥ L_new` or zero-fills new degrees.
pub fn resample_bandlimit_s2(spec: &S2Spectrum, new_l: Bandlimit) -> S2Spectrum {
    let mut out = S2Spectrum::zeros(new_l, spec.channels);
    let keep = spec.bandlimit.get().min(new_l.get()).pow(2);
    for c in 0..spec.channels {
        out.channel_mut(c)[..keep].copy_from_slice(&spec.channel(c)[..keep]);
    }
    out
}

pub fn resample_bandlimit_so3(spec: &So3Spectrum, new_l: Bandlimit) -> So3Spectrum {
    let mut out = So3Spectrum::zeros(new_l, spec.channels);
    let keep = so3_block_offset(spec.bandlimit.get().min(new_l.get()));
    let per_new = new_l.so3_coeff_count();
    for c in 0..spec.channels {
        out.coeffs[c * per_new..c * per_new + keep].copy_from_slice(&spec.channel(c)[..keep]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bl(l: usize) -> Bandlimit {
        Bandlimit::new(l).unwrap()
    }

    #[test]
    fn constant_signal_spectrum() {
        let sig = SphericalSignal::from_fn(bl(6), 1, |_, _, _| 2.5);
        let spec = s2_analyze(&sig).unwrap();
        assert_abs_diff_eq!(spec.get(0, 0, 0).re, 2.5 * (4.0 * PI).sqrt(), epsilon = 1e-12);
        for (k, z) in spec.coeffs.iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "coefficient {k} = {z}");
        }
    }

    #[test]
    fn harmonic_samples_recover_unit_coefficient() {
        let l = bl(6);
        let y = |t: f64, p: f64| crate::repr::spherical_harmonic(2, 1, t, p).unwrap();
        let plan = S2Plan::cached(l);
        let x: Vec<Complex64> = plan.grid.thetas.iter().flat_map(|&t| plan.grid.phis.iter().map(move |&p| y(t, p))).collect();
        let mut out = vec![ZERO; l.s2_coeff_count()];
        plan.forward_sum(&x, Some(&plan.grid.weights), &mut out);
        for ell in 0..6 {
            for m in -(ell as i64)..=ell as i64 {
                let want = if (ell, m) == (2, 1) { 1.0 } else { 0.0 };
                assert!((out[S2Spectrum::index(ell, m)] - want).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn so3_constant_signal() {
        let sig = So3Signal::from_fn(bl(4), 1, |_, _| 1.0);
        let spec = so3_analyze(&sig).unwrap();
        assert!((spec.get(0, 0, 0, 0) - 1.0).norm() < 1e-11);
        assert!(spec.coeffs.iter().skip(1).all(|z| z.norm() < 1e-11));
    }

    #[test]
    fn so3_conj_wigner_samples_recover_unit_coefficient() {
        let l = bl(5);
        let plan = So3Plan::cached(l);
        let mut x = Vec::new();
        for &a in &plan.grid.alphas {
            for &b in &plan.grid.betas {
                for &g in &plan.grid.gammas {
                    x.push(crate::repr::wigner_D(3, EulerAngles::new(a, b, g)).get(2, -1).conj());
                }
            }
        }
        let mut out = vec![ZERO; l.so3_coeff_count()];
        plan.forward_sum(&x, Some(&plan.grid.weights), true, &mut out);
        for ell in 0..5usize {
            let li = ell as i64;
            for m in -li..=li {
                for n in -li..=li {
                    let want = if (ell, m, n) == (3, 2, -1) { 1.0 } else { 0.0 };
                    assert!((out[So3Spectrum::index(ell, m, n)] - want).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn s2_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = S2Spectrum::random_real(bl(8), 2, &mut rng);
        let back = s2_analyze(&s2_synthesize(&spec).unwrap()).unwrap();
        let err: f64 = spec.coeffs.iter().zip(&back.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / spec.norm() < 1e-11);
    }

    #[test]
    fn so3_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = So3Spectrum::random_real(bl(6), 2, &mut rng);
        let back = so3_analyze(&so3_synthesize(&spec).unwrap()).unwrap();
        let err: f64 = spec.coeffs.iter().zip(&back.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / spec.norm() < 1e-10);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(SphericalSignal::new(bl(2), 1, vec![0.0; 3]), Err(Error::Shape(_))));
        let sig = SphericalSignal::zeros(bl(3), 1);
        assert!(matches!(S2Plan::cached(bl(4)).analyze(&sig), Err(Error::BandlimitMismatch { .. })));
        assert!(matches!(So3Spectrum::new(bl(2), 1, vec![ZERO; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = S2Spectrum::random_real(bl(8), 1, &mut rng);
        assert_eq!(resample_bandlimit_s2(&spec, bl(8)), spec);
        let down_up = resample_bandlimit_s2(&resample_bandlimit_s2(&spec, bl(4)), bl(8));
        for ell in 0..8usize {
            for m in -(ell as i64)..=ell as i64 {
                let want = if ell < 4 { spec.get(0, ell, m) } else { ZERO };
                assert_eq!(down_up.get(0, ell, m), want);
            }
        }
        let so3 = So3Spectrum::random_real(bl(6), 2, &mut rng);
        assert_eq!(resample_bandlimit_so3(&so3, bl(6)), so3);
        let du = resample_bandlimit_so3(&resample_bandlimit_so3(&so3, bl(3)), bl(6));
        assert_eq!(du.get(1, 2, -1, 2), so3.get(1, 2, -1, 2));
        assert_eq!(du.get(1, 4, 0, 0), ZERO);
    }
}
