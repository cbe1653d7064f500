#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2seg::grid::{Bandlimit, Rotation, S2Grid, So3Grid};
use s2seg::network::{softmax_xent_loss, Head, LayerKind, LayerSpec, ModelOutput, ModelSpec, Network, Nonlinearity};
use s2seg::repr::{angles_to_vector, spherical_harmonic, vector_to_angles};
use s2seg::transforms::{s2_synthesize, so3_synthesize, S2Spectrum, So3Spectrum, SphericalSignal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bl(l: usize) -> Bandlimit {
    Bandlimit::new(l).unwrap()
}

pub fn rel_c(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(1e-300)).sqrt()
}

pub fn rel_r(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Random real signal with bandlimit `l`, sampled on the grid of `l`.
pub fn random_signal(l: usize, channels: usize, r: &mut ChaCha8Rng) -> SphericalSignal {
    s2_synthesize(&S2Spectrum::random_real(bl(l), channels, r)).unwrap()
}

/// Random chain-valid segmentation stack with 2 or 3 layers at input bandlimit `l`.
pub fn random_segmentation_spec(l: usize, layers: usize, nl: Nonlinearity, r: &mut ChaCha8Rng) -> ModelSpec {
    let mut specs = Vec::new();
    let mut b = l;
    let mut c = r.gen_range(1..=2);
    let mid = (l - 1).max(2);
    for k in 0..layers {
        let last = k + 1 == layers;
        let kind = match (k, last) {
            (0, _) => LayerKind::S2So3Conv,
            (_, true) => LayerKind::So3S2Conv,
            _ => LayerKind::So3Conv,
        };
        let bo = if last { l } else { r.gen_range(2..=mid) };
        let co = r.gen_range(1..=3);
        let beta = r.gen_range(0.2..1.2);
        let mut layer = LayerSpec::new(kind, c, co, b, bo, beta);
        layer.support_counts = if kind == LayerKind::S2So3Conv { (4, 2, 1) } else { (3, 2, 3) };
        specs.push(layer);
        b = bo;
        c = co;
    }
    ModelSpec::new(specs, nl, Head::Segmentation).unwrap()
}

pub fn output_values(o: &ModelOutput) -> &[f64] {
    match o {
        ModelOutput::Logits(s) => &s.values,
        ModelOutput::Scores(s) => s,
    }
}

pub fn net(spec: ModelSpec) -> Network {
    Network::new(spec).unwrap()
}

pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config { cases: n, failure_persistence: None, ..Default::default() }
}

/// `∫_{S²} κ(R⁻¹x) f(x) dx` by grid quadrature, channel 0 of both.
pub fn lifting_by_quadrature(kappa: &S2Spectrum, f: &S2Spectrum, r: &Rotation) -> f64 {
    let grid = S2Grid::new(f.bandlimit);
    let inv = r.inverse();
    let mut vals = Vec::with_capacity(grid.len());
    for &t in &grid.thetas {
        for &p in &grid.phis {
            let (ti, pi) = vector_to_angles(inv.apply(angles_to_vector(t, p)));
            vals.push(kappa.evaluate(0, ti, pi).re * f.evaluate(0, t, p).re);
        }
    }
    grid.integrate(&vals)
}

/// `∫_{SO(3)} κ(S⁻¹R) f(S) dS` by grid quadrature, channel 0 of both.
pub fn so3_conv_by_quadrature(kappa: &So3Spectrum, f: &So3Spectrum, r: &Rotation) -> f64 {
    let grid = So3Grid::new(f.bandlimit);
    let n = grid.betas.len();
    let mut vals = vec![0.0; grid.len()];
    for a in 0..n {
        for j in 0..n {
            for g in 0..n {
                let s = Rotation::from_euler(grid.angles(a, j, g));
                vals[grid.index(a, j, g)] =
                    kappa.evaluate(0, s.inverse().compose(r).euler()).re * f.evaluate(0, s.euler()).re;
            }
        }
    }
    grid.integrate(&vals)
}

/// Position-space form of the final layer at `x`:
/// `Σ_ℓ (2ℓ+1)/(8π²) ∫ F(S) Σ_n Y^ℓ_n(S⁻¹x) dS`. For each `(α, β)` the
/// inner `γ` sum is accumulated before the outer quadrature.
pub fn final_layer_by_quadrature(cf: &So3Spectrum, c: usize, theta: f64, phi: f64) -> Complex64 {
    let l = cf.bandlimit.get();
    let grid = So3Grid::new(cf.bandlimit);
    let samples = so3_synthesize(cf).unwrap();
    let values = samples.channel(c);
    let x = angles_to_vector(theta, phi);
    let n = grid.betas.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..n {
        for (j, w) in grid.weights.iter().enumerate() {
            let mut inner = Complex64::new(0.0, 0.0);
            for g in 0..n {
                let s = Rotation::from_euler(grid.angles(a, j, g));
                let (t, p) = vector_to_angles(s.inverse().apply(x));
                let mut kernel = Complex64::new(0.0, 0.0);
                for ell in 0..l {
                    let li = ell as i64;
                    let k: Complex64 = (-li..=li).map(|m| spherical_harmonic(ell, m, t, p).unwrap()).sum();
                    kernel += k * ((2 * ell + 1) as f64 / (8.0 * PI * PI));
                }
                inner += kernel * values[grid.index(a, j, g)];
            }
            acc += inner * *w;
        }
    }
    acc
}

fn seg_loss(net: &Network, p: &[f64], x: &SphericalSignal, target: &[u8]) -> f64 {
    let (ModelOutput::Logits(out), _) = net.forward(p, x).unwrap() else { unreachable!() };
    softmax_xent_loss(&out, target).unwrap().0
}

/// Largest componentwise error, each scaled by the larger of the two values
/// or a floor at 1e-3 of the gradient's sup norm.
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

pub fn check_segmentation_gradient(seed: u64, layers: usize, nl: Nonlinearity) -> f64 {
    let mut r = rng(seed);
    let l = 6;
    let spec = random_segmentation_spec(l, layers, nl, &mut r);
    let classes = spec.output_channels();
    let net = net(spec);
    let p = net.init_params(&mut r);
    let x = random_signal(l, net.spec().input_channels(), &mut r);
    let target: Vec<u8> = (0..4 * l * l).map(|_| r.gen_range(0..classes) as u8).collect();
    let (out, tape) = net.forward(&p, &x).unwrap();
    let ModelOutput::Logits(logits) = &out else { unreachable!() };
    let (_, g) = softmax_xent_loss(logits, &target).unwrap();
    let analytic = net.backward(&p, &tape, &ModelOutput::Logits(g)).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..p.len())
        .map(|i| {
            let mut q = p.clone();
            q[i] += h;
            let up = seg_loss(&net, &q, &x, &target);
            q[i] -= 2.0 * h;
            let down = seg_loss(&net, &q, &x, &target);
            (up - down) / (2.0 * h)
        })
        .collect();
    max_rel_error(&analytic, &fd)
}
