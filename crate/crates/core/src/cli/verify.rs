//! Property suites run by `s2seg verify`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate_dataset, generate_record, miou, project_canvas_to_sphere, synthetic_digits, Canvas, DataGenConfig, Dataset,
    ProjectionPoint, APPAREL_THRESHOLD, CANVAS_SIZE, DEFAULT_CAP_RADIUS, DIGIT_THRESHOLD,
};
use crate::equivariant::{
    conv_s2_to_so3, conv_so3, invariant_readout, rotate_s2_spectrum, rotate_so3_spectrum, so3_to_s2_final_spectrum,
    KernelSpectrumS2, KernelSpectrumSo3,
};
use crate::error::{Error, Result};
use crate::grid::{make_kernel_support_grid, Bandlimit, Rotation, S2Grid, So3Grid};
use crate::network::{
    count_parameters, rotation_equivariance_error, sample_equivariant_architecture, Head, LayerKind, LayerSpec, ModelFile, ModelOutput, ModelSpec,
    Network, Nonlinearity, SamplerConfig,
};
use crate::repr::{angles_to_vector, block_dim, spherical_harmonic, vector_to_angles, wigner_D, wigner_d_small};
use crate::training::{train, TrainConfig};
use crate::transforms::{
    resample_bandlimit_s2, resample_bandlimit_so3, s2_analyze, s2_synthesize, so3_analysis_scale, so3_analyze,
    so3_synthesize, S2Plan, S2Spectrum, So3Signal, So3Spectrum, SphericalSignal,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VerifyLevel {
    Quick,
    Full,
}

impl FromStr for VerifyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(VerifyLevel::Quick),
            "full" => Ok(VerifyLevel::Full),
            _ => Err(Error::Config(format!("unknown verify level {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub module: String,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: VerifyLevel,
    pub tolerance_scale: f64,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<12} {:<40} {:.3e} (tol {:.1e})", c.module, c.name, c.measured, c.tolerance)?;
        }
        write!(f, "{} of {} checks passed", self.checks.len() - self.failures(), self.checks.len())
    }
}

struct Suite {
    level: VerifyLevel,
    scale: f64,
    rng: ChaCha8Rng,
    checks: Vec<CheckOutcome>,
}

fn bl(l: usize) -> Bandlimit {
    Bandlimit::new(l).expect("positive bandlimit")
}

fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(1e-300)).sqrt()
}

fn rel_r(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

impl Suite {
    fn record(&mut self, module: &str, name: &str, tolerance: f64, measured: Result<f64>) {
        let tolerance = tolerance * self.scale;
        let (measured, passed) = match measured {
            Ok(v) => (v, v.is_finite() && v <= tolerance),
            Err(_) => (f64::NAN, false),
        };
        self.checks.push(CheckOutcome { module: module.into(), name: name.into(), measured, tolerance, passed });
    }

    fn bandlimits(&self) -> &'static [usize] {
        match self.level {
            VerifyLevel::Quick => &[6],
            VerifyLevel::Full => &[4, 8, 16],
        }
    }

    fn quadrature_bandlimits(&self) -> &'static [usize] {
        match self.level {
            VerifyLevel::Quick => &[6],
            VerifyLevel::Full => &[2, 4, 8, 16],
        }
    }

    fn trials(&self) -> usize {
        match self.level {
            VerifyLevel::Quick => 3,
            VerifyLevel::Full => 20,
        }
    }

    fn rotation(&mut self) -> Rotation {
        Rotation::random(&mut self.rng)
    }

    fn repr(&mut self) {
        let trials = self.trials();
        let mut unit = 0.0f64;
        let mut hom = 0.0f64;
        let mut harm = 0.0f64;
        for _ in 0..trials {
            let (r1, r2) = (self.rotation(), self.rotation());
            let ell = self.rng.gen_range(0..8usize);
            let d1 = wigner_D(ell, r1.euler());
            let d2 = wigner_D(ell, r2.euler());
            let d12 = wigner_D(ell, r1.compose(&r2).euler());
            let dim = d1.dim();
            for a in 0..dim {
                for b in 0..dim {
                    let mut dd = Complex64::new(0.0, 0.0);
                    let mut prod = Complex64::new(0.0, 0.0);
                    for k in 0..dim {
                        dd += d1.entries[a * dim + k] * d1.entries[b * dim + k].conj();
                        prod += d1.entries[a * dim + k] * d2.entries[k * dim + b];
                    }
                    let id = if a == b { 1.0 } else { 0.0 };
                    unit = unit.max((dd - id).norm());
                    hom = hom.max((prod - d12.entries[a * dim + b]).norm());
                }
            }
            let x = angles_to_vector(self.rng.gen_range(0.0..PI), self.rng.gen_range(0.0..2.0 * PI));
            let (t, p) = vector_to_angles(x);
            let (ti, pi) = vector_to_angles(r1.inverse().apply(x));
            let l = ell as i64;
            for m in -l..=l {
                let lhs = spherical_harmonic(ell, m, ti, pi).unwrap_or_default();
                let rhs: Complex64 =
                    (-l..=l).map(|k| d1.get(k, m) * spherical_harmonic(ell, k, t, p).unwrap_or_default()).sum();
                harm = harm.max((lhs - rhs).norm());
            }
        }
        self.record("repr", "wigner_unitarity", 1e-11, Ok(unit));
        self.record("repr", "wigner_homomorphism", 1e-11, Ok(hom));
        self.record("repr", "harmonic_rotation", 1e-11, Ok(harm));

        let mut inverse = 0.0f64;
        for _ in 0..trials {
            let r = self.rotation();
            for ell in 0..=8 {
                let d = wigner_D(ell, r.euler());
                let di = wigner_D(ell, r.inverse().euler());
                let dim = d.dim();
                for a in 0..dim {
                    for b in 0..dim {
                        inverse = inverse.max((di.entries[a * dim + b] - d.entries[b * dim + a].conj()).norm());
                    }
                }
            }
        }
        self.record("repr", "inverse_is_adjoint", 1e-11, Ok(inverse));

        let stability = [1e-9, 1e-4, PI - 1e-4, PI - 1e-9]
            .iter()
            .map(|&beta| {
                let d = wigner_d_small(64, beta)?;
                let dim = block_dim(64);
                if d.entries.iter().any(|v| !v.is_finite()) {
                    return Ok(f64::INFINITY);
                }
                let mut worst = 0.0f64;
                for a in 0..dim {
                    for b in 0..dim {
                        let dot: f64 = (0..dim).map(|k| d.entries[k * dim + a] * d.entries[k * dim + b]).sum();
                        worst = worst.max((dot - if a == b { 1.0 } else { 0.0 }).abs());
                    }
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()
            .map(|v| v.into_iter().fold(0.0, f64::max));
        self.record("repr", "small_d_stability_l64", 1e-8, stability);
    }

    fn grid(&mut self) {
        for &l in self.quadrature_bandlimits() {
            // Harmonic orthonormality through the quadrature: analysis of sampled Y^ℓ_m.
            let b = bl(l);
            let mut worst = 0.0f64;
            for ell in 0..l {
                for m in -(ell as i64)..=ell as i64 {
                    let re = SphericalSignal::from_fn(b, 1, |_, t, p| spherical_harmonic(ell, m, t, p).unwrap().re);
                    let im = SphericalSignal::from_fn(b, 1, |_, t, p| spherical_harmonic(ell, m, t, p).unwrap().im);
                    let (sr, si) = match (s2_analyze(&re), s2_analyze(&im)) {
                        (Ok(a), Ok(b)) => (a, b),
                        _ => {
                            worst = f64::NAN;
                            continue;
                        }
                    };
                    for (k, (a, c)) in sr.coeffs.iter().zip(&si.coeffs).enumerate() {
                        let v = a + Complex64::i() * c;
                        let target = if k == S2Spectrum::index(ell, m) { 1.0 } else { 0.0 };
                        worst = worst.max((v - target).norm());
                    }
                }
            }
            self.record("grid", &format!("quadrature_exactness_L{l}"), 1e-10, Ok(worst));
        }
        let mut euler = 0.0f64;
        for _ in 0..self.trials() * 5 {
            let r = self.rotation();
            euler = euler.max(Rotation::from_euler(r.euler()).distance(&r));
        }
        self.record("grid", "euler_round_trip", 1e-10, Ok(euler));

        let support = (|| -> Result<f64> {
            let mut worst = 0.0f64;
            for &(l1, l2) in &[(10usize, 20usize), (16, 48), (25, 50)] {
                let k = 0.3 * PI * 10.0;
                let a = make_kernel_support_grid(bl(l1), k / l1 as f64, (8, 3, 8))?;
                let b = make_kernel_support_grid(bl(l2), k / l2 as f64, (8, 3, 8))?;
                for (p, q) in a.points.iter().zip(&b.points) {
                    let (x, y) = (p.beta * l1 as f64, q.beta * l2 as f64);
                    worst = worst.max((x - y).abs() / y.abs());
                }
            }
            Ok(worst)
        })();
        self.record("grid", "support_beta_times_l_conserved", 4.0 * f64::EPSILON, support);

        let n = match self.level {
            VerifyLevel::Quick => 10_000,
            VerifyLevel::Full => 100_000,
        };
        let chi2 = haar_chi_square(&mut self.rng, n);
        self.record("grid", "haar_chi_square_100_cells", HAAR_CHI2_CRITICAL, Ok(chi2));
    }

    fn transforms(&mut self) {
        for &l in self.bandlimits() {
            let f = S2Spectrum::random_real(bl(l), 2, &mut self.rng);
            let e = s2_synthesize(&f).and_then(|s| s2_analyze(&s)).map(|g| rel(&g.coeffs, &f.coeffs));
            self.record("transforms", &format!("s2_round_trip_L{l}"), 1e-10, e);
            let f = So3Spectrum::random_real(bl(l), 1, &mut self.rng);
            let e = so3_synthesize(&f).and_then(|s| so3_analyze(&s)).map(|g| rel(&g.coeffs, &f.coeffs));
            self.record("transforms", &format!("so3_round_trip_L{l}"), 1e-10, e);
        }
        let l = 6;
        let f = S2Spectrum::random_real(bl(l), 1, &mut self.rng);
        let mut worst = 0.0f64;
        for _ in 0..self.trials() {
            let r = self.rotation();
            let g = rotate_s2_spectrum(&f, &r);
            let (t, p) = (self.rng.gen_range(0.0..PI), self.rng.gen_range(0.0..2.0 * PI));
            let (ti, pi) = vector_to_angles(r.inverse().apply(angles_to_vector(t, p)));
            worst = worst.max((g.evaluate(0, t, p) - f.evaluate(0, ti, pi)).norm());
        }
        self.record("transforms", "rotation_matches_pointwise", 1e-10, Ok(worst / f.norm()));

        for &l in self.bandlimits() {
            // synthesize∘analyze on sampled bandlimited signals
            let sig = s2_synthesize(&S2Spectrum::random_real(bl(l), 1, &mut self.rng));
            let e = sig.and_then(|x| Ok((s2_synthesize(&s2_analyze(&x)?)?, x))).map(|(y, x)| rel_r(&y.values, &x.values));
            self.record("transforms", &format!("s2_signal_round_trip_L{l}"), 1e-10, e);
            let sig = so3_synthesize(&So3Spectrum::random_real(bl(l), 1, &mut self.rng));
            let e =
                sig.and_then(|x| Ok((so3_synthesize(&so3_analyze(&x)?)?, x))).map(|(y, x)| rel_r(&y.values, &x.values));
            self.record("transforms", &format!("so3_signal_round_trip_L{l}"), 1e-10, e);
        }

        let parseval = (|| -> Result<f64> {
            let l = 6;
            let f = So3Spectrum::random_real(bl(l), 1, &mut self.rng);
            let spectral: f64 = (0..l)
                .map(|ell| f.block(0, ell).iter().map(|c| c.norm_sqr()).sum::<f64>() / so3_analysis_scale(ell))
                .sum();
            // |f|² has bandlimit 2L-1; integrate it on the finer grid
            let fine = so3_synthesize(&resample_bandlimit_so3(&f, bl(2 * l)))?;
            let sq: Vec<f64> = fine.values.iter().map(|v| v * v).collect();
            let quad = So3Grid::new(bl(2 * l)).integrate(&sq);
            Ok((spectral - quad).abs() / quad)
        })();
        self.record("transforms", "so3_parseval", 1e-9, parseval);

        let linear = (|| -> Result<f64> {
            let l = bl(8);
            let (a, b) = (self.rng.gen_range(-2.0..2.0), self.rng.gen_range(-2.0..2.0));
            let f = s2_synthesize(&S2Spectrum::random_real(l, 1, &mut self.rng))?;
            let g = s2_synthesize(&S2Spectrum::random_real(l, 1, &mut self.rng))?;
            let mix = SphericalSignal::new(l, 1, f.values.iter().zip(&g.values).map(|(x, y)| a * x + b * y).collect())?;
            let lhs = s2_analyze(&mix)?;
            let (fa, ga) = (s2_analyze(&f)?, s2_analyze(&g)?);
            let rhs: Vec<Complex64> = fa.coeffs.iter().zip(&ga.coeffs).map(|(x, y)| a * x + b * y).collect();
            let mut worst = rel(&lhs.coeffs, &rhs);
            let f = so3_synthesize(&So3Spectrum::random_real(l, 1, &mut self.rng))?;
            let g = so3_synthesize(&So3Spectrum::random_real(l, 1, &mut self.rng))?;
            let mix = So3Signal::new(l, 1, f.values.iter().zip(&g.values).map(|(x, y)| a * x + b * y).collect())?;
            let lhs = so3_analyze(&mix)?;
            let (fa, ga) = (so3_analyze(&f)?, so3_analyze(&g)?);
            let rhs: Vec<Complex64> = fa.coeffs.iter().zip(&ga.coeffs).map(|(x, y)| a * x + b * y).collect();
            worst = worst.max(rel(&lhs.coeffs, &rhs));
            Ok(worst)
        })();
        self.record("transforms", "linearity", 1e-12, linear);

        let determinism = (|| -> Result<f64> {
            let x = so3_synthesize(&So3Spectrum::random_real(bl(8), 3, &mut self.rng))?;
            let a = so3_analyze(&x)?;
            let b = so3_analyze(&x)?;
            if a != b {
                return Ok(f64::INFINITY);
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            let c = pool.install(|| so3_analyze(&x))?;
            Ok(rel(&c.coeffs, &a.coeffs))
        })();
        self.record("transforms", "determinism_across_threads", 1e-12, determinism);
    }

    fn equivariant(&mut self) {
        let l = 6;
        let b = bl(l);
        let kappa = KernelSpectrumS2::new(2, 1, S2Spectrum::random_real(b, 2, &mut self.rng)).expect("shape");
        let psi = KernelSpectrumSo3::new(2, 2, So3Spectrum::random_real(b, 4, &mut self.rng)).expect("shape");
        let f = S2Spectrum::random_real(b, 1, &mut self.rng);
        let h = So3Spectrum::random_real(b, 2, &mut self.rng);
        let (mut lift, mut conv, mut fin, mut inv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..self.trials() {
            let r = self.rotation();
            let e = (|| -> Result<(f64, f64)> {
                let a = conv_s2_to_so3(&kappa, &rotate_s2_spectrum(&f, &r))?;
                let b = rotate_so3_spectrum(&conv_s2_to_so3(&kappa, &f)?, &r);
                let c = conv_so3(&psi, &rotate_so3_spectrum(&h, &r))?;
                let d = rotate_so3_spectrum(&conv_so3(&psi, &h)?, &r);
                Ok((rel(&a.coeffs, &b.coeffs), rel(&c.coeffs, &d.coeffs)))
            })();
            let (e1, e2) = e.unwrap_or((f64::NAN, f64::NAN));
            lift = lift.max(e1);
            conv = conv.max(e2);
            let a = so3_to_s2_final_spectrum(&rotate_so3_spectrum(&h, &r));
            let b = rotate_s2_spectrum(&so3_to_s2_final_spectrum(&h), &r);
            fin = fin.max(rel(&a.coeffs, &b.coeffs));
            let a = invariant_readout(&rotate_so3_spectrum(&h, &r));
            inv = inv.max(rel_r(&a, &invariant_readout(&h)));
        }
        self.record("equivariant", "lifting_equivariance", 1e-10, Ok(lift));
        self.record("equivariant", "so3_conv_equivariance", 1e-10, Ok(conv));
        self.record("equivariant", "final_layer_equivariance", 1e-10, Ok(fin));
        self.record("equivariant", "readout_invariance", 1e-10, Ok(inv));

        let probes = self.trials().max(5);
        let oracle = (|| -> Result<(f64, f64)> {
            let (mut e1, mut e2) = (0.0f64, 0.0f64);
            for _ in 0..probes {
                let r = self.rotation();
                e1 = e1.max(lifting_oracle_error(&mut self.rng, 6, &r)?);
                e2 = e2.max(so3_conv_oracle_error(&mut self.rng, 4, &r)?);
            }
            Ok((e1, e2))
        })();
        let (lift, conv) = match oracle {
            Ok((a, b)) => (Ok(a), Ok(b)),
            Err(e) => (Err(Error::Domain(e.to_string())), Err(e)),
        };
        self.record("equivariant", "lifting_matches_quadrature", 1e-8, lift);
        self.record("equivariant", "so3_conv_matches_quadrature", 1e-7, conv);
        let points = if self.level == VerifyLevel::Full { 12 } else { 2 };
        let proj = final_layer_projection_error(&mut self.rng, 6, points);
        self.record("equivariant", "final_layer_projection_identity", 1e-8, proj);

        let linear = (|| -> Result<f64> {
            let (a, c) = (self.rng.gen_range(-2.0..2.0), self.rng.gen_range(-2.0..2.0));
            let mix = |x: &[Complex64], y: &[Complex64]| -> Vec<Complex64> {
                x.iter().zip(y).map(|(p, q)| a * p + c * q).collect()
            };
            let k2 = KernelSpectrumS2::new(2, 1, S2Spectrum::random_real(b, 2, &mut self.rng))?;
            let f2 = S2Spectrum::random_real(b, 1, &mut self.rng);
            let kmix = KernelSpectrumS2::new(2, 1, S2Spectrum::new(b, 2, mix(&kappa.spectrum.coeffs, &k2.spectrum.coeffs))?)?;
            let fmix = S2Spectrum::new(b, 1, mix(&f.coeffs, &f2.coeffs))?;
            let mut worst = rel(
                &conv_s2_to_so3(&kmix, &f)?.coeffs,
                &mix(&conv_s2_to_so3(&kappa, &f)?.coeffs, &conv_s2_to_so3(&k2, &f)?.coeffs),
            );
            worst = worst.max(rel(
                &conv_s2_to_so3(&kappa, &fmix)?.coeffs,
                &mix(&conv_s2_to_so3(&kappa, &f)?.coeffs, &conv_s2_to_so3(&kappa, &f2)?.coeffs),
            ));
            let p2 = KernelSpectrumSo3::new(2, 2, So3Spectrum::random_real(b, 4, &mut self.rng))?;
            let h2 = So3Spectrum::random_real(b, 2, &mut self.rng);
            let pmix = KernelSpectrumSo3::new(2, 2, So3Spectrum::new(b, 4, mix(&psi.spectrum.coeffs, &p2.spectrum.coeffs))?)?;
            let hmix = So3Spectrum::new(b, 2, mix(&h.coeffs, &h2.coeffs))?;
            worst = worst.max(rel(
                &conv_so3(&pmix, &h)?.coeffs,
                &mix(&conv_so3(&psi, &h)?.coeffs, &conv_so3(&p2, &h)?.coeffs),
            ));
            worst = worst.max(rel(
                &conv_so3(&psi, &hmix)?.coeffs,
                &mix(&conv_so3(&psi, &h)?.coeffs, &conv_so3(&psi, &h2)?.coeffs),
            ));
            worst = worst.max(rel(
                &so3_to_s2_final_spectrum(&hmix).coeffs,
                &mix(&so3_to_s2_final_spectrum(&h).coeffs, &so3_to_s2_final_spectrum(&h2).coeffs),
            ));
            Ok(worst)
        })();
        self.record("equivariant", "linearity_in_kernel_and_signal", 1e-12, linear);
    }

    fn network(&mut self) {
        let reference = reference_architecture();
        self.record(
            "network",
            "reference_parameter_count",
            0.0,
            reference.map(|s| (count_parameters(&s) as f64 - 204_073.0).abs()),
        );
        let grad = gradient_check(&mut self.rng);
        self.record("network", "gradient_finite_differences", 1e-5, grad);

        let linear = (|| -> Result<f64> {
            let mut spec = random_stack(&mut self.rng, 6)?;
            spec.nonlinearity = Nonlinearity::Identity;
            let net = Network::new(spec)?;
            let params = net.init_params(&mut self.rng);
            let x = S2Spectrum::random_real(bl(6), 1, &mut self.rng);
            let mut worst = 0.0f64;
            for _ in 0..self.trials() {
                let r = self.rotation();
                worst = worst.max(rotation_equivariance_error(&net, &params, &x, &r)?);
            }
            Ok(worst)
        })();
        self.record("network", "linear_stack_equivariance", 1e-9, linear);

        if self.level == VerifyLevel::Full {
            let trend = relu_equivariance_by_bandlimit(&[8, 16, 32], 20, self.rng.gen());
            let monotone = trend.map(|v| {
                let rises = v.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max);
                if v.iter().all(|e| e.is_finite()) { rises } else { f64::INFINITY }
            });
            self.record("network", "relu_equivariance_error_nonincreasing", 0.0, monotone);
        }

        let cfg = SamplerConfig::new(20_000, 60_000, 16, 1, 11);
        let mut worst = 0.0f64;
        let samples = match self.level {
            VerifyLevel::Quick => 3,
            VerifyLevel::Full => 100,
        };
        for _ in 0..samples {
            match sample_equivariant_architecture(&cfg, &mut self.rng) {
                Ok(spec) => {
                    let n = count_parameters(&spec);
                    if spec.validate().is_err() || !(cfg.param_lo..=cfg.param_hi).contains(&n) {
                        worst = f64::INFINITY;
                    }
                    let k0 = spec.layers[0].beta_hat * spec.layers[0].in_bandlimit as f64;
                    for layer in &spec.layers {
                        worst = worst.max((layer.beta_hat * layer.in_bandlimit as f64 - k0).abs() / k0);
                    }
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
        self.record("network", "sampler_chain_and_range", 1e-12, Ok(worst));

        let round_trip = (|| -> Result<f64> {
            let spec = reference_architecture()?;
            let net = Network::new(spec.clone())?;
            let params = net.init_params(&mut self.rng);
            let file = ModelFile { spec, params, adam: None };
            let back = ModelFile::from_bytes(&file.to_bytes())?;
            Ok(if back == file { 0.0 } else { 1.0 })
        })();
        self.record("network", "model_file_round_trip", 0.0, round_trip);
    }

    fn datagen(&mut self) {
        let sources = synthetic_digits(20, 7);
        let cfg = DataGenConfig { bandlimit: 12, seed: 3, ..DataGenConfig::default() };
        let det = (|| -> Result<f64> {
            let a = generate_record(&cfg, &sources, 5)?;
            let b = generate_record(&cfg, &sources, 5)?;
            let ds = Dataset { header: cfg.header(1), records: vec![a.clone()] };
            let back = Dataset::from_bytes(&ds.to_bytes())?;
            Ok(if a == b && back == ds { 0.0 } else { 1.0 })
        })();
        self.record("datagen", "record_determinism_and_io", 0.0, det);
        let ident = (|| -> Result<f64> {
            let r = generate_record(&cfg, &sources, 2)?;
            Ok((miou(&r.mask, &r.mask, cfg.num_classes, true)? - 1.0).abs())
        })();
        self.record("datagen", "miou_of_truth_is_one", 0.0, ident);
        let canvas_independent = (|| -> Result<f64> {
            let plain = DataGenConfig { rotated: false, ..cfg.clone() };
            let a = generate_record(&cfg, &sources, 9)?;
            let b = generate_record(&plain, &sources, 9)?;
            Ok(if a.source_ids == b.source_ids && b.rotation == Rotation::identity() { 0.0 } else { 1.0 })
        })();
        self.record("datagen", "rotation_stream_is_separate", 0.0, canvas_independent);

        let closure = (|| -> Result<f64> {
            let mut bad = 0usize;
            for i in 0..self.trials() as u64 {
                let r = generate_record(&cfg, &sources, i)?;
                let bg = r.mask.iter().filter(|&&m| m == 0).count() as f64 / r.mask.len() as f64;
                if r.mask.iter().any(|&m| m as usize >= cfg.num_classes) || !(bg > 0.0 && bg < 1.0) {
                    bad += 1;
                }
            }
            Ok(bad as f64)
        })();
        self.record("datagen", "mask_class_closure", 0.0, closure);
        let defaults = DataGenConfig::default().threshold == DIGIT_THRESHOLD && DIGIT_THRESHOLD == 150 && APPAREL_THRESHOLD == 10;
        self.record("datagen", "threshold_defaults", 0.0, Ok(if defaults { 0.0 } else { 1.0 }));
        let r = self.rotation();
        self.record("datagen", "smooth_canvas_rotation_consistency_L50", 0.05, smooth_rotation_consistency(50, &r));
    }

    fn cli(&mut self) {
        if self.level == VerifyLevel::Quick {
            return;
        }
        let repro = (|| -> Result<f64> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            let seed = self.rng.gen();
            let a = pool.install(|| tiny_training_run(seed))?;
            let b = pool.install(|| tiny_training_run(seed))?;
            Ok(if a == b { 0.0 } else { 1.0 })
        })();
        self.record("cli", "single_thread_training_is_bitwise", 0.0, repro);
    }
}

/// The 204k-parameter segmentation network used throughout the reference experiments.
pub fn reference_architecture() -> Result<ModelSpec> {
    let beta_ref = 0.1238 * PI;
    let table = [(1, 11, 50, 42), (11, 12, 42, 35), (12, 13, 35, 27), (13, 14, 27, 20), (14, 13, 20, 27), (13, 12, 27, 35), (12, 11, 35, 42), (11, 11, 42, 50)];
    let last = table.len() - 1;
    let layers = table
        .iter()
        .enumerate()
        .map(|(k, &(ni, no, bi, bo))| {
            let kind = match k {
                0 => LayerKind::S2So3Conv,
                k if k == last => LayerKind::So3S2Conv,
                _ => LayerKind::So3Conv,
            };
            LayerSpec::new(kind, ni, no, bi, bo, 50.0 * beta_ref / bi as f64)
        })
        .collect();
    ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)
}

/// Max relative error of the analytic gradient of `⟨w, output⟩` against central
/// differences on a small three-layer ReLU model.
fn gradient_check(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut layers = vec![
        LayerSpec::new(LayerKind::S2So3Conv, 1, 2, 5, 4, 0.6),
        LayerSpec::new(LayerKind::So3Conv, 2, 2, 4, 4, 0.6),
        LayerSpec::new(LayerKind::So3S2Conv, 2, 2, 4, 5, 0.6),
    ];
    layers[0].support_counts = (4, 2, 1);
    layers[1].support_counts = (3, 2, 3);
    layers[2].support_counts = (3, 2, 3);
    let net = Network::new(ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)?)?;
    let params = net.init_params(rng);
    let input = s2_synthesize(&S2Spectrum::random_real(bl(5), 1, rng))?;
    let (out, tape) = net.forward(&params, &input)?;
    let ModelOutput::Logits(o) = &out else { return Err(Error::Chain("expected logits".into())) };
    let w: Vec<f64> = (0..o.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gout = SphericalSignal::new(o.bandlimit, o.channels, w.clone())?;
    let grad = net.backward(&params, &tape, &ModelOutput::Logits(gout))?;
    let objective = |p: &[f64]| -> Result<f64> {
        let (ModelOutput::Logits(o), _) = net.forward(p, &input)? else { unreachable!() };
        Ok(o.values.iter().zip(&w).map(|(a, b)| a * b).sum())
    };
    let h = 1e-6;
    let mut fd = Vec::new();
    let idx: Vec<usize> = (0..12).map(|_| rng.gen_range(0..params.len())).collect();
    for &i in &idx {
        let mut p = params.clone();
        p[i] += h;
        let up = objective(&p)?;
        p[i] -= 2.0 * h;
        let down = objective(&p)?;
        fd.push((up - down) / (2.0 * h));
    }
    let floor = 1e-3 * fd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(idx
        .iter()
        .zip(&fd)
        .map(|(&i, &n)| (grad[i] - n).abs() / grad[i].abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}

/// Runs every module's property suite. Tolerances are multiplied by `tolerance_scale`.
pub fn run_verify(level: VerifyLevel, tolerance_scale: f64, seed: u64) -> Result<VerifyReport> {
    if !(tolerance_scale > 0.0) {
        return Err(Error::Config(format!("tolerance scale must be positive, got {tolerance_scale}")));
    }
    let mut s = Suite { level, scale: tolerance_scale, rng: ChaCha8Rng::seed_from_u64(seed), checks: Vec::new() };
    s.repr();
    s.grid();
    s.transforms();
    s.equivariant();
    s.network();
    s.datagen();
    s.cli();
    Ok(VerifyReport { level, tolerance_scale, checks: s.checks })
}

/// 99th percentile of χ² with 99 degrees of freedom.
pub const HAAR_CHI2_CRITICAL: f64 = 134.642;

/// χ² statistic of `R·e_z` over 10 equal-area z bands × 10 longitude sectors.
pub fn haar_chi_square<R: Rng + ?Sized>(rng: &mut R, n: usize) -> f64 {
    let mut counts = [0usize; 100];
    let v = [0.3, -0.5, 0.8];
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) as f64;
    let v = v.map(|c: f64| c / norm.sqrt());
    for _ in 0..n {
        let x = Rotation::random(rng).apply(v);
        let band = (((x[2] + 1.0) / 2.0 * 10.0) as usize).min(9);
        let phi = x[1].atan2(x[0]).rem_euclid(2.0 * PI);
        let sector = ((phi / (2.0 * PI) * 10.0) as usize).min(9);
        counts[band * 10 + sector] += 1;
    }
    let expected = n as f64 / 100.0;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

fn real_part(f: &S2Spectrum, c: usize, t: f64, p: f64) -> f64 {
    f.evaluate(c, t, p).re
}

/// Largest deviation of the final layer from its position-space form
/// `Σ_ℓ (2ℓ+1)/(8π²) ∫ F(S) Σ_n Y^ℓ_n(S⁻¹x) dS` at `points` grid samples,
/// relative to the largest output magnitude.
fn final_layer_projection_error(rng: &mut ChaCha8Rng, l: usize, points: usize) -> Result<f64> {
    let b = bl(l);
    let cf = So3Spectrum::random_real(b, 1, rng);
    let values = S2Plan::cached(b).synthesize_complex(&so3_to_s2_final_spectrum(&cf))?;
    let samples = so3_synthesize(&cf)?;
    let (s2, so3) = (S2Grid::new(b), So3Grid::new(b));
    let n = so3.betas.len();
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let (j, i) = (rng.gen_range(0..s2.thetas.len()), rng.gen_range(0..s2.phis.len()));
        let x = s2.point(j, i);
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..n {
            for (jb, w) in so3.weights.iter().enumerate() {
                let mut inner = Complex64::new(0.0, 0.0);
                for g in 0..n {
                    let s = Rotation::from_euler(so3.angles(a, jb, g));
                    let (t, p) = vector_to_angles(s.inverse().apply(x));
                    let mut kernel = Complex64::new(0.0, 0.0);
                    for ell in 0..l {
                        let li = ell as i64;
                        let k = (-li..=li).map(|m| spherical_harmonic(ell, m, t, p)).sum::<Result<Complex64>>()?;
                        kernel += k * (block_dim(ell) as f64 / (8.0 * PI * PI));
                    }
                    inner += kernel * samples.values[so3.index(a, jb, g)];
                }
                acc += inner * *w;
            }
        }
        worst = worst.max((values[j * s2.phis.len() + i] - acc).norm() / scale);
    }
    Ok(worst)
}

/// Relative error of the spectral lifting against `∫ κ(R⁻¹x) f(x) dx` by quadrature.
fn lifting_oracle_error(rng: &mut ChaCha8Rng, l: usize, r: &Rotation) -> Result<f64> {
    let b = bl(l);
    let kappa = S2Spectrum::random_real(b, 1, rng);
    let f = S2Spectrum::random_real(b, 1, rng);
    let out = conv_s2_to_so3(&KernelSpectrumS2::new(1, 1, kappa.clone())?, &f)?;
    let grid = S2Grid::new(b);
    let inv = r.inverse();
    let mut vals = Vec::with_capacity(grid.len());
    for &t in &grid.thetas {
        for &p in &grid.phis {
            let (ti, pi) = vector_to_angles(inv.apply(angles_to_vector(t, p)));
            vals.push(real_part(&kappa, 0, ti, pi) * real_part(&f, 0, t, p));
        }
    }
    let direct = grid.integrate(&vals);
    let spectral = out.evaluate(0, r.euler());
    Ok(((spectral.re - direct).powi(2) + spectral.im.powi(2)).sqrt() / direct.abs().max(1e-3 * kappa.norm() * f.norm()))
}

/// Relative error of the spectral SO(3) convolution against `∫ κ(S⁻¹R) f(S) dS` by quadrature.
fn so3_conv_oracle_error(rng: &mut ChaCha8Rng, l: usize, r: &Rotation) -> Result<f64> {
    let b = bl(l);
    let kappa = So3Spectrum::random_real(b, 1, rng);
    let f = So3Spectrum::random_real(b, 1, rng);
    let out = conv_so3(&KernelSpectrumSo3::new(1, 1, kappa.clone())?, &f)?;
    let grid = So3Grid::new(b);
    let mut vals = vec![0.0; grid.len()];
    let n = grid.betas.len();
    for a in 0..n {
        for j in 0..n {
            for g in 0..n {
                let s = Rotation::from_euler(grid.angles(a, j, g));
                let sr = s.inverse().compose(r);
                vals[grid.index(a, j, g)] = kappa.evaluate(0, sr.euler()).re * f.evaluate(0, s.euler()).re;
            }
        }
    }
    let direct = grid.integrate(&vals);
    let spectral = out.evaluate(0, r.euler());
    Ok(((spectral.re - direct).powi(2) + spectral.im.powi(2)).sqrt() / direct.abs().max(1e-3 * kappa.norm() * f.norm()))
}

/// A three-layer segmentation stack with small kernels at bandlimit `l`.
fn random_stack(rng: &mut ChaCha8Rng, l: usize) -> Result<ModelSpec> {
    let mid = rng.gen_range(3..l);
    let mut layers = vec![
        LayerSpec::new(LayerKind::S2So3Conv, 1, 2, l, mid, 0.7),
        LayerSpec::new(LayerKind::So3Conv, 2, 3, mid, mid, 0.7),
        LayerSpec::new(LayerKind::So3S2Conv, 3, 2, mid, l, 0.7),
    ];
    layers[0].support_counts = (4, 2, 1);
    layers[1].support_counts = (3, 2, 3);
    layers[2].support_counts = (3, 2, 3);
    ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)
}

/// Median ReLU-stack equivariance error at each bandlimit. The model keeps
/// its kernel geometry and weights fixed across bandlimits, and the input is
/// one smooth degree-3 signal.
pub fn relu_equivariance_by_bandlimit(bandlimits: &[usize], rotations: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = S2Spectrum::random_real(bl(4), 1, &mut rng);
    let rots: Vec<Rotation> = (0..rotations).map(|_| Rotation::random(&mut rng)).collect();
    let spec_at = |l: usize| {
        let layers = vec![
            LayerSpec::new(LayerKind::S2So3Conv, 1, 4, l, l, 0.5),
            LayerSpec::new(LayerKind::So3Conv, 4, 4, l, l, 0.5),
            LayerSpec::new(LayerKind::So3S2Conv, 4, 2, l, l, 0.5),
        ];
        ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)
    };
    let params = Network::new(spec_at(bandlimits[0])?)?.init_params(&mut rng);
    bandlimits
        .iter()
        .map(|&l| {
            let net = Network::new(spec_at(l)?)?;
            let x = resample_bandlimit_s2(&low, bl(l));
            let mut errs =
                rots.iter().map(|r| rotation_equivariance_error(&net, &params, &x, r)).collect::<Result<Vec<f64>>>()?;
            errs.sort_by(f64::total_cmp);
            Ok(errs[errs.len() / 2])
        })
        .collect()
}

/// Relative L2 gap between projecting a smooth canvas with rotation `R` and
/// rotating the spectrum of the unrotated projection.
pub fn smooth_rotation_consistency(l: usize, r: &Rotation) -> Result<f64> {
    let mut canvas = Canvas::blank();
    for row in 0..CANVAS_SIZE {
        for col in 0..CANVAS_SIZE {
            let (dy, dx) = (row as f64 - 29.5, col as f64 - 29.5);
            canvas.pixels[row * CANVAS_SIZE + col] = (-(dx * dx + dy * dy) / (2.0 * 7.0 * 7.0)).exp();
        }
    }
    let b = bl(l);
    let (base, _) = project_canvas_to_sphere(&canvas, b, ProjectionPoint::Pole, &Rotation::identity(), DEFAULT_CAP_RADIUS);
    let (rotated, _) = project_canvas_to_sphere(&canvas, b, ProjectionPoint::Pole, r, DEFAULT_CAP_RADIUS);
    let spectral = s2_synthesize(&rotate_s2_spectrum(&s2_analyze(&base)?, r))?;
    Ok(rel_r(&spectral.values, &rotated.values))
}

/// Serialized model after a short seeded training run.
fn tiny_training_run(seed: u64) -> Result<Vec<u8>> {
    let l = 6;
    let data = DataGenConfig { bandlimit: l, seed, ..DataGenConfig::default() };
    let ds = generate_dataset(&data, &synthetic_digits(20, seed), 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![
        LayerSpec::new(LayerKind::S2So3Conv, 1, 3, l, 4, 0.6),
        LayerSpec::new(LayerKind::So3S2Conv, 3, 11, 4, l, 0.6),
    ];
    layers[0].support_counts = (4, 2, 1);
    layers[1].support_counts = (3, 2, 3);
    let spec = ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)?;
    let net = Network::new(spec.clone())?;
    let params = net.init_params(&mut rng);
    let cfg = TrainConfig { epochs: 2, batch_size: 3, seed, ..TrainConfig::default() };
    let out = train(&net, params, None, &ds.records, None, &cfg, |_| {})?;
    Ok(ModelFile { spec, params: out.params, adam: Some(out.adam) }.to_bytes())
}
