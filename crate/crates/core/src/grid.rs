//! Driscoll–Healy sampling grids on S² and SO(3), kernel support grids and
//! rotation utilities.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::EulerAngles;

/// Exclusive upper bound on harmonic degree. Grids have `2L` samples per angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bandlimit(usize);

impl Bandlimit {
    pub fn new(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::Domain("bandlimit must be at least 1".into()));
        }
        Ok(Bandlimit(l))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Samples per angular axis.
    #[inline]
    pub fn samples(self) -> usize {
        2 * self.0
    }

    /// `Σ_{ℓ<L} (2ℓ+1) = L²`
    pub fn s2_coeff_count(self) -> usize {
        self.0 * self.0
    }

    /// `Σ_{ℓ<L} (2ℓ+1)² = L(2L−1)(2L+1)/3`
    pub fn so3_coeff_count(self) -> usize {
        let l = self.0;
        l * (2 * l - 1) * (2 * l + 1) / 3
    }
}

impl fmt::Display for Bandlimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `θ_j = π(2j+1)/(4L)`, `j = 0..2L`.
pub fn dh_colatitudes(l: Bandlimit) -> Vec<f64> {
    let n = l.samples();
    (0..n).map(|j| PI * (2 * j + 1) as f64 / (4 * l.get()) as f64).collect()
}

/// Equispaced longitudes `2πk/(2L)`.
pub fn dh_longitudes(l: Bandlimit) -> Vec<f64> {
    let n = l.samples();
    (0..n).map(|k| PI * k as f64 / l.get() as f64).collect()
}

/// Driscoll–Healy weights for `∫_0^π g(θ) sin θ dθ` on the offset colatitudes.
/// Exact for polynomials in `cos θ` of degree `< 2L`.
pub fn dh_sin_weights(l: Bandlimit) -> Vec<f64> {
    let b = l.get();
    dh_colatitudes(l)
        .iter()
        .map(|&theta| {
            let series: f64 = (0..b)
                .map(|k| {
                    let odd = (2 * k + 1) as f64;
                    (odd * theta).sin() / odd
                })
                .sum();
            2.0 / b as f64 * theta.sin() * series
        })
        .collect()
}

/// Equiangular grid on S². `weights[j]` is the area weight of every point on ring `j`.
#[derive(Clone, Debug)]
pub struct S2Grid {
    pub bandlimit: Bandlimit,
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    pub weights: Vec<f64>,
}

impl S2Grid {
    pub fn new(l: Bandlimit) -> Self {
        let dphi = PI / l.get() as f64;
        S2Grid {
            bandlimit: l,
            thetas: dh_colatitudes(l),
            phis: dh_longitudes(l),
            weights: dh_sin_weights(l).into_iter().map(|w| w * dphi).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len() * self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature of a function sampled in `(θ-ring, φ-column)` row-major order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = self.phis.len();
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * values[j * n..(j + 1) * n].iter().sum::<f64>())
            .sum()
    }

    /// Unit vector of grid point `(j, k)`.
    pub fn point(&self, j: usize, k: usize) -> [f64; 3] {
        crate::repr::angles_to_vector(self.thetas[j], self.phis[k])
    }
}

pub fn make_s2_grid(l: Bandlimit) -> S2Grid {
    S2Grid::new(l)
}

/// Euler-angle product grid on SO(3), sample order `(α, β, γ)`.
/// `weights[j]` is the Haar weight of every point with `β = betas[j]`.
#[derive(Clone, Debug)]
pub struct So3Grid {
    pub bandlimit: Bandlimit,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl So3Grid {
    pub fn new(l: Bandlimit) -> Self {
        let step = PI / l.get() as f64;
        So3Grid {
            bandlimit: l,
            alphas: dh_longitudes(l),
            betas: dh_colatitudes(l),
            gammas: dh_longitudes(l),
            weights: dh_sin_weights(l).into_iter().map(|w| w * step * step).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len() * self.betas.len() * self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, a: usize, j: usize, g: usize) -> usize {
        let n = self.betas.len();
        (a * n + j) * n + g
    }

    pub fn angles(&self, a: usize, j: usize, g: usize) -> EulerAngles {
        EulerAngles::new(self.alphas[a], self.betas[j], self.gammas[g])
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = self.betas.len();
        let mut acc = 0.0;
        for a in 0..n {
            for (j, w) in self.weights.iter().enumerate() {
                let row = &values[self.index(a, j, 0)..self.index(a, j, 0) + n];
                acc += w * row.iter().sum::<f64>();
            }
        }
        acc
    }
}

pub fn make_so3_grid(l: Bandlimit) -> So3Grid {
    So3Grid::new(l)
}

/// Proper rotation of R³, stored as a row-major matrix with its ZYZ angles.
///
/// Equality compares matrices only; the cached angles may differ in the last
/// bits depending on how the rotation was built.
#[derive(Clone, Copy, Debug)]
pub struct Rotation {
    matrix: [[f64; 3]; 3],
    euler: EulerAngles,
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

fn rz(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn ry(b: f64) -> [[f64; 3]; 3] {
    let (s, c) = b.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

const GIMBAL_EPS: f64 = 1e-12;

fn matrix_to_euler(r: &[[f64; 3]; 3]) -> EulerAngles {
    let two_pi = 2.0 * PI;
    let sb = (r[0][2] * r[0][2] + r[1][2] * r[1][2]).sqrt();
    let beta = sb.atan2(r[2][2]);
    if sb > GIMBAL_EPS {
        let alpha = r[1][2].atan2(r[0][2]).rem_euclid(two_pi);
        let gamma = r[2][1].atan2(-r[2][0]).rem_euclid(two_pi);
        EulerAngles::new(alpha, beta, gamma)
    } else if r[2][2] > 0.0 {
        // R = Rz(α+γ); γ := 0
        EulerAngles::new(r[1][0].atan2(r[0][0]).rem_euclid(two_pi), 0.0, 0.0)
    } else {
        // R = Rz(α)·Ry(π); γ := 0
        EulerAngles::new((-r[0][1]).atan2(r[1][1]).rem_euclid(two_pi), PI, 0.0)
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation::from_euler(EulerAngles::IDENTITY)
    }

    pub fn from_euler(e: EulerAngles) -> Self {
        let m = matmul(&matmul(&rz(e.alpha), &ry(e.beta)), &rz(e.gamma));
        Rotation { matrix: m, euler: e }
    }

    /// Validates orthogonality and orientation to within `1e-9`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let mtm = matmul(&transpose(&m), &m);
        let mut err = 0.0f64;
        for (i, row) in mtm.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                err = err.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if !(err < 1e-9) || !((det - 1.0).abs() < 1e-9) {
            return Err(Error::Domain(format!(
                "not a proper rotation (orthogonality error {err:e}, det {det})"
            )));
        }
        Ok(Rotation { matrix: m, euler: matrix_to_euler(&m) })
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.matrix
    }

    pub fn euler(&self) -> EulerAngles {
        self.euler
    }

    /// `self · other`
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let m = matmul(&self.matrix, &other.matrix);
        Rotation { matrix: m, euler: matrix_to_euler(&m) }
    }

    pub fn inverse(&self) -> Rotation {
        let m = transpose(&self.matrix);
        Rotation { matrix: m, euler: matrix_to_euler(&m) }
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Largest entrywise difference between the matrices.
    pub fn distance(&self, other: &Rotation) -> f64 {
        let mut d = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.matrix[i][j] - other.matrix[i][j]).abs());
            }
        }
        d
    }

    /// Haar-uniform sample: α, γ uniform on `[0, 2π)`, `cos β` uniform on `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
        let alpha = rng.gen::<f64>() * 2.0 * PI;
        let gamma = rng.gen::<f64>() * 2.0 * PI;
        let beta = (1.0 - 2.0 * rng.gen::<f64>()).clamp(-1.0, 1.0).acos();
        Rotation::from_euler(EulerAngles::new(alpha, beta, gamma))
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    Rotation::random(rng)
}

pub fn rotation_from_euler(e: EulerAngles) -> Rotation {
    Rotation::from_euler(e)
}

/// ZYZ angles of a matrix; at `β ∈ {0, π}` the ambiguity is resolved with `γ = 0`.
pub fn rotation_to_euler(m: [[f64; 3]; 3]) -> Result<EulerAngles> {
    Ok(Rotation::from_matrix(m)?.euler())
}

/// Sample points of a localized kernel near the identity of SO(3).
///
/// Points are `Rz(α)·Ry(β)·Rz(γ' − α)` with `β ∈ (0, β̂]` in `n_beta` equal
/// steps and `α`, `γ'` equispaced on `[0, 2π)`; for `γ' = 0` these are small
/// rotations about horizontal axes. Ordered lexicographically in `(β, α, γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSupportGrid {
    pub bandlimit: Bandlimit,
    pub beta_max: f64,
    pub points: Vec<EulerAngles>,
}

pub fn make_kernel_support_grid(
    l: Bandlimit,
    beta_max: f64,
    counts: (usize, usize, usize),
) -> Result<KernelSupportGrid> {
    if !(beta_max > 0.0 && beta_max <= PI) {
        return Err(Error::Domain(format!("beta_max must lie in (0, π], got {beta_max}")));
    }
    let (na, nb, ng) = counts;
    if na == 0 || nb == 0 || ng == 0 {
        return Err(Error::Domain("support counts must be at least 1".into()));
    }
    let two_pi = 2.0 * PI;
    let mut points = Vec::with_capacity(na * nb * ng);
    for b in 0..nb {
        let beta = (b + 1) as f64 * beta_max / nb as f64;
        for a in 0..na {
            let alpha = two_pi * a as f64 / na as f64;
            for g in 0..ng {
                let gp = two_pi * g as f64 / ng as f64;
                let gamma = (gp - alpha).rem_euclid(two_pi);
                points.push(EulerAngles::new(alpha, beta, gamma));
            }
        }
    }
    points.sort_by(|p, q| {
        p.beta
            .total_cmp(&q.beta)
            .then(p.alpha.total_cmp(&q.alpha))
            .then(p.gamma.total_cmp(&q.gamma))
    });
    Ok(KernelSupportGrid { bandlimit: l, beta_max, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bandlimit_rejects_zero() {
        assert!(Bandlimit::new(0).is_err());
        assert_eq!(Bandlimit::new(4).unwrap().so3_coeff_count(), 1 + 9 + 25 + 49);
    }

    #[test]
    fn single_band_grid_area() {
        let g = S2Grid::new(Bandlimit::new(1).unwrap());
        assert_abs_diff_eq!(g.thetas[0], PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.thetas[1], 3.0 * PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.integrate(&[1.0; 4]), 4.0 * PI, epsilon = 1e-14);
    }

    #[test]
    fn so3_total_measure() {
        let g = So3Grid::new(Bandlimit::new(2).unwrap());
        assert_abs_diff_eq!(g.integrate(&vec![1.0; g.len()]), 8.0 * PI * PI, epsilon = 1e-12);
    }

    #[test]
    fn sin_weights_exact_for_low_degree_polynomials() {
        let l = Bandlimit::new(5).unwrap();
        let w = dh_sin_weights(l);
        let th = dh_colatitudes(l);
        for p in 0..10 {
            let q: f64 = w.iter().zip(&th).map(|(w, t)| w * t.cos().powi(p)).sum();
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            assert_abs_diff_eq!(q, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn euler_identity_and_degenerate_beta() {
        let r = Rotation::from_euler(EulerAngles::IDENTITY);
        assert_eq!(r.distance(&Rotation::identity()), 0.0);
        let a = Rotation::from_euler(EulerAngles::new(0.4, 0.0, 1.1));
        let b = Rotation::from_euler(EulerAngles::new(1.5, 0.0, 0.0));
        assert!(a.distance(&b) < 1e-15);
    }

    #[test]
    fn gimbal_lock_sets_gamma_zero() {
        let a = Rotation::from_euler(EulerAngles::new(0.4, 0.0, 1.1));
        let e = rotation_to_euler(*a.matrix()).unwrap();
        assert_eq!(e.gamma, 0.0);
        assert_abs_diff_eq!(e.alpha, 1.5, epsilon = 1e-12);
        let p = Rotation::from_euler(EulerAngles::new(0.4, PI, 1.1));
        let e = rotation_to_euler(*p.matrix()).unwrap();
        assert_eq!(e.gamma, 0.0);
        assert!(Rotation::from_euler(e).distance(&p) < 1e-12);
    }

    #[test]
    fn rejects_non_rotation() {
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(matches!(Rotation::from_matrix(m), Err(Error::Domain(_))));
        let m = [[1.1, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn random_rotation_times_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let r = Rotation::random(&mut rng);
            assert!(r.compose(&r.inverse()).distance(&Rotation::identity()) < 1e-13);
        }
    }

    #[test]
    fn kernel_grid_counts_and_bounds() {
        let l = Bandlimit::new(8).unwrap();
        let g = make_kernel_support_grid(l, 0.1, (1, 1, 1)).unwrap();
        assert_eq!(g.points.len(), 1);
        assert!(Rotation::from_euler(g.points[0]).distance(&Rotation::identity()) < 0.11);
        let g = make_kernel_support_grid(l, 0.5, (4, 2, 4)).unwrap();
        assert_eq!(g.points.len(), 32);
        assert!(g.points.iter().all(|p| p.beta <= 0.5 && p.beta > 0.0));
        assert!(make_kernel_support_grid(l, 0.0, (1, 1, 1)).is_err());
        assert!(make_kernel_support_grid(l, -1.0, (1, 1, 1)).is_err());
    }

    #[test]
    fn kernel_grid_is_sorted() {
        let g = make_kernel_support_grid(Bandlimit::new(8).unwrap(), 0.4, (8, 3, 8)).unwrap();
        for w in g.points.windows(2) {
            let key = |p: &EulerAngles| (p.beta, p.alpha, p.gamma);
            assert!(key(&w[0]) <= key(&w[1]));
        }
    }
}
