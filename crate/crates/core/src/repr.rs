//! Spherical harmonics and Wigner matrices.
//!
//! Conventions used everywhere in the crate:
//!
//! * Euler angles are ZYZ: `R(α, β, γ) = Rz(α) · Ry(β) · Rz(γ)`.
//! * `Y^ℓ_m` carries the Condon–Shortley phase and is orthonormal on S².
//! * `D^ℓ_{mn}(α, β, γ) = e^{-imα} d^ℓ_{mn}(β) e^{-inγ}`, a unitary
//!   representation: `D(g₁g₂) = D(g₁) D(g₂)`.
//! * Under these conventions `Y^ℓ_m(R⁻¹x) = Σ_k D^ℓ_{km}(R) Y^ℓ_k(x)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// ZYZ Euler angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub const IDENTITY: EulerAngles = EulerAngles { alpha: 0.0, beta: 0.0, gamma: 0.0 };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerAngles { alpha, beta, gamma }
    }
}

/// Number of entries `(2ℓ+1)` along one side of a degree-`ℓ` block.
#[inline]
pub fn block_dim(ell: usize) -> usize {
    2 * ell + 1
}

/// Real `(2ℓ+1)×(2ℓ+1)` matrix `d^ℓ(β)`, rows `m = -ℓ..=ℓ`, columns `n = -ℓ..=ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerSmallD {
    pub ell: usize,
    pub entries: Vec<f64>,
}

impl WignerSmallD {
    #[inline]
    pub fn get(&self, m: i64, n: i64) -> f64 {
        let l = self.ell as i64;
        let dim = block_dim(self.ell);
        self.entries[(m + l) as usize * dim + (n + l) as usize]
    }
}

/// Complex unitary block `D^ℓ(g)`, same index layout as [`WignerSmallD`].
#[derive(Clone, Debug, PartialEq)]
pub struct WignerBlock {
    pub ell: usize,
    pub entries: Vec<Complex64>,
}

impl WignerBlock {
    #[inline]
    pub fn get(&self, m: i64, n: i64) -> Complex64 {
        let l = self.ell as i64;
        let dim = block_dim(self.ell);
        self.entries[(m + l) as usize * dim + (n + l) as usize]
    }

    pub fn dim(&self) -> usize {
        block_dim(self.ell)
    }
}

/// Table of `ln k!` for `k = 0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Closed form of `d^j_{mn}(β)` on the boundary `max(|m|,|n|) = j`, returned
/// as `(sign, ln|value|)` so that large `j` cannot overflow.
fn boundary_seed(j: i64, m: i64, n: i64, ln_cos: f64, ln_sin: f64, lnf: &[f64]) -> (f64, f64) {
    let (sign, k, pc, ps) = if m.abs() >= n.abs() {
        if m == j {
            (if (j - n) % 2 == 0 { 1.0 } else { -1.0 }, n, j + n, j - n)
        } else {
            (1.0, n, j - n, j + n)
        }
    } else if n == j {
        (1.0, m, j + m, j - m)
    } else {
        (if (m + j) % 2 == 0 { 1.0 } else { -1.0 }, m, j - m, j + m)
    };
    let two_j = (2 * j) as usize;
    let ln_binom = lnf[two_j] - lnf[(j + k) as usize] - lnf[(j - k) as usize];
    let mut ln_val = 0.5 * ln_binom;
    // 0·ln(0) must stay 0, not NaN
    if pc > 0 {
        ln_val += pc as f64 * ln_cos;
    }
    if ps > 0 {
        ln_val += ps as f64 * ln_sin;
    }
    (sign, ln_val)
}

const RESCALE_HI: f64 = 1e150;
const RESCALE_LO: f64 = 1e-150;

/// Computes `d^ℓ(β)` for every `ℓ < bandlimit` with the three-term recurrence
/// in `ℓ` at fixed `(m, n)`. Each recurrence is carried in scaled form
/// (value, log-scale) so boundary seeds that underflow near `β ∈ {0, π}` do
/// not poison higher degrees.
pub fn wigner_d_all(bandlimit: usize, beta: f64) -> Vec<WignerSmallD> {
    let mut blocks: Vec<WignerSmallD> = (0..bandlimit)
        .map(|ell| WignerSmallD { ell, entries: vec![0.0; block_dim(ell) * block_dim(ell)] })
        .collect();
    if bandlimit == 0 {
        return blocks;
    }
    let lmax = bandlimit as i64 - 1;
    let lnf = ln_factorials(2 * bandlimit + 2);
    let cos_b = beta.cos();
    let half = 0.5 * beta;
    let ln_cos = half.cos().abs().ln();
    let ln_sin = half.sin().abs().ln();

    for m in -lmax..=lmax {
        for n in -lmax..=lmax {
            let l0 = m.abs().max(n.abs());
            let (sign, mut log_scale) = boundary_seed(l0, m, n, ln_cos, ln_sin, &lnf);
            let mut prev = 0.0f64;
            let mut cur = sign;
            let mf = m as f64;
            let nf = n as f64;
            let mut ell = l0;
            loop {
                let block = &mut blocks[ell as usize];
                let dim = block_dim(ell as usize);
                let v = cur * log_scale.exp();
                block.entries[(m + ell) as usize * dim + (n + ell) as usize] = v;
                if ell == lmax {
                    break;
                }
                let l = ell as f64;
                let lp = l + 1.0;
                let denom = ((lp * lp - mf * mf) * (lp * lp - nf * nf)).sqrt();
                let mn_term = if m == 0 || n == 0 { 0.0 } else { mf * nf / (l * lp) };
                let a = lp * (2.0 * l + 1.0) / denom;
                let b = if ell == 0 {
                    0.0
                } else {
                    lp * ((l * l - mf * mf) * (l * l - nf * nf)).sqrt() / (l * denom)
                };
                let next = a * (cos_b - mn_term) * cur - b * prev;
                prev = cur;
                cur = next;
                let mag = cur.abs().max(prev.abs());
                if mag > RESCALE_HI || (mag < RESCALE_LO && mag > 0.0) {
                    let s = mag.ln();
                    cur /= mag;
                    prev /= mag;
                    log_scale += s;
                }
                ell += 1;
            }
        }
    }
    blocks
}

/// `d^ℓ(β)` for a single degree.
pub fn wigner_d_small(ell: usize, beta: f64) -> Result<WignerSmallD> {
    if !(beta.is_finite()) {
        return Err(Error::Domain(format!("beta must be finite, got {beta}")));
    }
    let mut all = wigner_d_all(ell + 1, beta);
    Ok(all.pop().expect("ell + 1 >= 1 blocks"))
}

/// Assembles `D^ℓ(g)` from a precomputed `d^ℓ(β)`.
pub fn wigner_big_d_from_small(d: &WignerSmallD, alpha: f64, gamma: f64) -> WignerBlock {
    let l = d.ell as i64;
    let dim = block_dim(d.ell);
    let mut entries = Vec::with_capacity(dim * dim);
    for m in -l..=l {
        let pa = Complex64::from_polar(1.0, -(m as f64) * alpha);
        for n in -l..=l {
            let pg = Complex64::from_polar(1.0, -(n as f64) * gamma);
            entries.push(pa * pg * d.get(m, n));
        }
    }
    WignerBlock { ell: d.ell, entries }
}

/// `D^ℓ(α, β, γ) = e^{-imα} d^ℓ_{mn}(β) e^{-inγ}`.
#[allow(non_snake_case)]
pub fn wigner_D(ell: usize, g: EulerAngles) -> WignerBlock {
    let d = wigner_d_all(ell + 1, g.beta).pop().expect("non-empty");
    wigner_big_d_from_small(&d, g.alpha, g.gamma)
}

/// All blocks `D^ℓ(g)` for `ℓ < bandlimit`.
#[allow(non_snake_case)]
pub fn wigner_D_all(bandlimit: usize, g: EulerAngles) -> Vec<WignerBlock> {
    wigner_d_all(bandlimit, g.beta)
        .iter()
        .map(|d| wigner_big_d_from_small(d, g.alpha, g.gamma))
        .collect()
}

/// Orthonormalized associated Legendre functions `P̄^ℓ_m(cos θ)` for
/// `0 ≤ m ≤ ℓ < bandlimit`, scaled so that `Y^ℓ_m = P̄^ℓ_m e^{imφ}` for `m ≥ 0`.
#[derive(Clone, Debug)]
pub struct NormalizedLegendre {
    bandlimit: usize,
    values: Vec<f64>,
}

impl NormalizedLegendre {
    pub fn new(bandlimit: usize, theta: f64) -> Self {
        let x = theta.cos();
        let s = theta.sin();
        let mut values = vec![0.0; bandlimit * (bandlimit + 1) / 2];
        let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
        let mut pmm = 1.0 / (4.0 * PI).sqrt();
        for m in 0..bandlimit {
            if m > 0 {
                let k = m as f64;
                pmm *= -((2.0 * k + 1.0) / (2.0 * k)).sqrt() * s;
            }
            values[idx(m, m)] = pmm;
            if m + 1 < bandlimit {
                values[idx(m + 1, m)] = x * (2.0 * m as f64 + 3.0).sqrt() * pmm;
            }
            let mf = m as f64;
            for l in (m + 2)..bandlimit {
                let lf = l as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let lm1 = lf - 1.0;
                let a_prev = ((4.0 * lm1 * lm1 - 1.0) / (lm1 * lm1 - mf * mf)).sqrt();
                values[idx(l, m)] = a * (x * values[idx(l - 1, m)] - values[idx(l - 2, m)] / a_prev);
            }
        }
        NormalizedLegendre { bandlimit, values }
    }

    #[inline]
    pub fn get(&self, ell: usize, m: usize) -> f64 {
        debug_assert!(m <= ell && ell < self.bandlimit);
        self.values[ell * (ell + 1) / 2 + m]
    }

    /// Real θ-profile `λ^ℓ_m(θ)` with `Y^ℓ_m(θ, φ) = λ^ℓ_m(θ) e^{imφ}` for any sign of `m`.
    #[inline]
    pub fn profile(&self, ell: usize, m: i64) -> f64 {
        let am = m.unsigned_abs() as usize;
        let v = self.get(ell, am);
        if m < 0 && am % 2 == 1 {
            -v
        } else {
            v
        }
    }
}

/// `Y^ℓ_m(θ, φ)` with the Condon–Shortley phase.
pub fn spherical_harmonic(ell: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    if m.unsigned_abs() as usize > ell {
        return Err(Error::Domain(format!("|m| = {} exceeds ell = {ell}", m.abs())));
    }
    let p = NormalizedLegendre::new(ell + 1, theta);
    Ok(Complex64::from_polar(p.profile(ell, m), m as f64 * phi))
}

/// Converts a unit vector to polar/azimuthal angles `(θ, φ)` with `φ ∈ [0, 2π)`.
pub fn vector_to_angles(v: [f64; 3]) -> (f64, f64) {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let theta = (v[2] / r).clamp(-1.0, 1.0).acos();
    let phi = v[1].atan2(v[0]).rem_euclid(2.0 * PI);
    (theta, phi)
}

pub fn angles_to_vector(theta: f64, phi: f64) -> [f64; 3] {
    let s = theta.sin();
    [s * phi.cos(), s * phi.sin(), theta.cos()]
}
