use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, Normal};

use crate::equivariant::{
    conv_s2_to_so3, conv_s2_to_so3_adjoint, conv_so3, conv_so3_adjoint, invariant_readout, rotate_s2_spectrum,
    so3_to_s2_final_spectrum, so3_to_s2_final_spectrum_adjoint,
};
use crate::error::{Error, Result};
use crate::grid::{Bandlimit, Rotation};
use crate::transforms::{
    resample_bandlimit_s2, resample_bandlimit_so3, S2Plan, S2Spectrum, So3Plan, So3Signal, So3Spectrum,
    SphericalSignal,
};

use super::kernel::{KernelBasis, KernelSpectrum};
use super::spec::{Head, LayerKind, ModelSpec, Nonlinearity, ParamLayout};

/// Coarse operation classes used by the profiler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpCategory {
    /// Forward and inverse S² / SO(3) Fourier transforms.
    Transform,
    /// Spectral products inside the convolutions.
    BlockMultiply,
    /// ReLU, biases, resampling, readout and the dense head.
    Pointwise,
    /// Building kernel spectra from the weights.
    Kernel,
}

impl OpCategory {
    pub const ALL: [OpCategory; 4] =
        [OpCategory::Transform, OpCategory::BlockMultiply, OpCategory::Pointwise, OpCategory::Kernel];

    pub fn name(self) -> &'static str {
        match self {
            OpCategory::Transform => "transform",
            OpCategory::BlockMultiply => "block_multiply",
            OpCategory::Pointwise => "pointwise",
            OpCategory::Kernel => "kernel",
        }
    }
}

/// Wall-clock samples of individual operations, tagged by layer.
#[derive(Clone, Debug, Default)]
pub struct OpTimer {
    pub records: Vec<(usize, OpCategory, Duration)>,
}

fn timed<T>(timer: &mut Option<&mut OpTimer>, layer: usize, cat: OpCategory, f: impl FnOnce() -> T) -> T {
    match timer {
        Some(t) => {
            let start = Instant::now();
            let out = f();
            t.records.push((layer, cat, start.elapsed()));
            out
        }
        None => f(),
    }
}

/// Result of a forward pass. Also used to carry the loss gradient into
/// [`Network::backward`].
#[derive(Clone, Debug, PartialEq)]
pub enum ModelOutput {
    Logits(SphericalSignal),
    Scores(Vec<f64>),
}

#[derive(Clone, Debug)]
enum Feature {
    S2(S2Spectrum),
    So3(So3Spectrum),
}

#[derive(Clone, Debug)]
struct LayerTape {
    input: Feature,
    kernel: Arc<KernelSpectrum>,
    relu_mask: Option<(Bandlimit, Vec<bool>)>,
}

/// Activations recorded by [`Network::forward`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct Tape {
    fingerprint: u64,
    layers: Vec<LayerTape>,
    readout: Option<Vec<f64>>,
}

fn fingerprint(spec_text: &str, params: &[f64]) -> u64 {
    const PRIME: u64 = 0x100000001b3;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in spec_text.bytes().chain(params.iter().flat_map(|p| p.to_bits().to_le_bytes())) {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// `max(0, v)` per sample.
pub fn relu_in_place(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn relu_s2(sig: &SphericalSignal) -> SphericalSignal {
    let mut out = sig.clone();
    relu_in_place(&mut out.values);
    out
}

pub fn relu_so3(sig: &So3Signal) -> So3Signal {
    let mut out = sig.clone();
    relu_in_place(&mut out.values);
    out
}

/// Mean over grid points of `-log softmax(logits)[target]` and its gradient
/// with respect to the logits.
pub fn softmax_xent_loss(logits: &SphericalSignal, target: &[u8]) -> Result<(f64, SphericalSignal)> {
    let n = logits.points_per_channel();
    let c = logits.channels;
    if target.len() != n {
        return Err(Error::Shape(format!("mask has {} points, logits have {n}", target.len())));
    }
    if let Some(bad) = target.iter().find(|&&t| t as usize >= c) {
        return Err(Error::Domain(format!("target class {bad} out of range for {c} classes")));
    }
    let mut grad = SphericalSignal::zeros(logits.bandlimit, c);
    let mut loss = 0.0;
    let mut probs = vec![0.0; c];
    for (x, &t) in target.iter().enumerate() {
        let max = (0..c).map(|k| logits.values[k * n + x]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, p) in probs.iter_mut().enumerate() {
            *p = (logits.values[k * n + x] - max).exp();
            z += *p;
        }
        loss += z.ln() + max - logits.values[t as usize * n + x];
        for (k, p) in probs.iter().enumerate() {
            let onehot = if k == t as usize { 1.0 } else { 0.0 };
            grad.values[k * n + x] = (p / z - onehot) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Cross entropy of class scores against one label, with gradient.
pub fn softmax_xent_scores(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::Domain(format!("label {label} out of range for {} classes", scores.len())));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let grad = exps.iter().enumerate().map(|(k, e)| e / z - if k == label { 1.0 } else { 0.0 }).collect();
    Ok((z.ln() + max - scores[label], grad))
}

/// A validated model together with its precomputed kernel tables.
pub struct Network {
    spec: ModelSpec,
    spec_text: String,
    layout: ParamLayout,
    bases: Vec<KernelBasis>,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let bases = spec.layers.iter().map(KernelBasis::for_layer).collect::<Result<Vec<_>>>()?;
        let layout = ParamLayout::new(&spec);
        let spec_text = spec.to_canonical_text();
        Ok(Network { spec, spec_text, layout, bases })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// He-normal kernel weights scaled by fan-in, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.total];
        for (k, l) in self.spec.layers.iter().enumerate() {
            let std = (2.0 / (l.in_channels * l.support_len()) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            for w in &mut p[self.layout.weights[k].clone()] {
                *w = dist.sample(rng);
            }
        }
        if let Head::Classification { .. } = self.spec.head {
            let c = self.spec.layers.last().expect("validated").out_channels;
            let dist = Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("positive std");
            for w in &mut p[self.layout.head_weights.clone()] {
                *w = dist.sample(rng);
            }
        }
        p
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::Shape(format!("model needs {} parameters, got {}", self.layout.total, params.len())));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &SphericalSignal) -> Result<(ModelOutput, Tape)> {
        self.forward_impl(params, input, None, None)
    }

    /// Forward pass that records per-operation timings.
    pub fn forward_timed(&self, params: &[f64], input: &SphericalSignal, timer: &mut OpTimer) -> Result<ModelOutput> {
        Ok(self.forward_impl(params, input, None, Some(timer))?.0)
    }

    /// Kernel spectra of every layer for `params`.
    pub fn kernel_spectra(&self, params: &[f64]) -> Result<Vec<Arc<KernelSpectrum>>> {
        self.check_params(params)?;
        self.spec
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let w = &params[self.layout.weights[k].clone()];
                Ok(Arc::new(self.bases[k].to_spectrum(w, l.out_channels, l.in_channels)?))
            })
            .collect()
    }

    /// Forward passes over a batch sharing one set of kernel spectra.
    pub fn forward_batch(&self, params: &[f64], inputs: &[&SphericalSignal]) -> Result<Vec<(ModelOutput, Tape)>> {
        let kernels = self.kernel_spectra(params)?;
        inputs.par_iter().map(|x| self.forward_impl(params, x, Some(&kernels), None)).collect()
    }

    fn forward_impl(
        &self,
        params: &[f64],
        input: &SphericalSignal,
        kernels: Option<&[Arc<KernelSpectrum>]>,
        mut timer: Option<&mut OpTimer>,
    ) -> Result<(ModelOutput, Tape)> {
        self.check_params(params)?;
        let l0 = self.spec.input_bandlimit();
        if input.bandlimit.get() != l0 {
            return Err(Error::Chain(format!("input has bandlimit {}, model expects {l0}", input.bandlimit)));
        }
        if input.channels != self.spec.input_channels() {
            return Err(Error::Chain(format!(
                "input has {} channels, model expects {}",
                input.channels,
                self.spec.input_channels()
            )));
        }
        let mut cur = Feature::S2(timed(&mut timer, 0, OpCategory::Transform, || {
            S2Plan::cached(input.bandlimit).analyze(input)
        })?);
        let last = self.spec.layers.len() - 1;
        let mut tapes = Vec::with_capacity(self.spec.layers.len());
        for (k, layer) in self.spec.layers.iter().enumerate() {
            let lc = Bandlimit::new(layer.conv_bandlimit())?;
            let lo = Bandlimit::new(layer.out_bandlimit)?;
            let w = &params[self.layout.weights[k].clone()];
            let bias = &params[self.layout.biases[k].clone()];
            let kernel = match kernels {
                Some(ks) => ks[k].clone(),
                None => Arc::new(timed(&mut timer, k, OpCategory::Kernel, || {
                    self.bases[k].to_spectrum(w, layer.out_channels, layer.in_channels)
                })?),
            };
            let (input_c, z) = match (&cur, kernel.as_ref()) {
                (Feature::S2(s), KernelSpectrum::S2(ks)) => {
                    let f = timed(&mut timer, k, OpCategory::Pointwise, || resample_bandlimit_s2(s, lc));
                    let z = timed(&mut timer, k, OpCategory::BlockMultiply, || conv_s2_to_so3(ks, &f))?;
                    (Feature::S2(f), z)
                }
                (Feature::So3(s), KernelSpectrum::So3(ks)) => {
                    let f = timed(&mut timer, k, OpCategory::Pointwise, || resample_bandlimit_so3(s, lc));
                    let z = timed(&mut timer, k, OpCategory::BlockMultiply, || conv_so3(ks, &f))?;
                    (Feature::So3(f), z)
                }
                _ => return Err(Error::Chain(format!("layer {k} ({}) received the wrong feature type", layer.kind))),
            };
            let mut tape = LayerTape { input: input_c, kernel, relu_mask: None };

            if layer.kind == LayerKind::So3S2Conv {
                let g = timed(&mut timer, k, OpCategory::Pointwise, || {
                    let mut g = resample_bandlimit_s2(&so3_to_s2_final_spectrum(&z), lo);
                    let s = (4.0 * PI).sqrt();
                    for (c, b) in bias.iter().enumerate() {
                        let v = g.get(c, 0, 0) + b * s;
                        g.set(c, 0, 0, v);
                    }
                    g
                });
                let logits = timed(&mut timer, k, OpCategory::Transform, || S2Plan::cached(lo).synthesize(&g))?;
                tapes.push(tape);
                let fp = fingerprint(&self.spec_text, params);
                return Ok((ModelOutput::Logits(logits), Tape { fingerprint: fp, layers: tapes, readout: None }));
            }

            let out = timed(&mut timer, k, OpCategory::Pointwise, || {
                let mut out = resample_bandlimit_so3(&z, lo);
                for (c, b) in bias.iter().enumerate() {
                    let v = out.get(c, 0, 0, 0) + b;
                    out.set(c, 0, 0, 0, v);
                }
                out
            });

            if k < last {
                cur = match self.spec.nonlinearity {
                    Nonlinearity::Identity => Feature::So3(out),
                    Nonlinearity::Relu => {
                        let plan = So3Plan::cached(lo);
                        let mut sig = timed(&mut timer, k, OpCategory::Transform, || plan.synthesize(&out))?;
                        let mask = timed(&mut timer, k, OpCategory::Pointwise, || {
                            let mask: Vec<bool> = sig.values.iter().map(|&v| v > 0.0).collect();
                            relu_in_place(&mut sig.values);
                            mask
                        });
                        tape.relu_mask = Some((lo, mask));
                        Feature::So3(timed(&mut timer, k, OpCategory::Transform, || plan.analyze(&sig))?)
                    }
                };
                tapes.push(tape);
            } else {
                tapes.push(tape);
                let Head::Classification { num_classes } = self.spec.head else {
                    return Err(Error::Chain("segmentation model must end in SO3S2conv".into()));
                };
                let scores = timed(&mut timer, k, OpCategory::Pointwise, || {
                    let r = invariant_readout(&out);
                    let hw = &params[self.layout.head_weights.clone()];
                    let hb = &params[self.layout.head_biases.clone()];
                    let scores: Vec<f64> = (0..num_classes)
                        .map(|c| hb[c] + hw[c * r.len()..(c + 1) * r.len()].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>())
                        .collect();
                    (scores, r)
                });
                let fp = fingerprint(&self.spec_text, params);
                return Ok((
                    ModelOutput::Scores(scores.0),
                    Tape { fingerprint: fp, layers: tapes, readout: Some(scores.1) },
                ));
            }
        }
        unreachable!("validated specs end in an output layer")
    }

    /// Exact gradient of a scalar loss with respect to every parameter, given
    /// the loss gradient with respect to the forward output.
    pub fn backward(&self, params: &[f64], tape: &Tape, output_grad: &ModelOutput) -> Result<Vec<f64>> {
        let (mut grad, kernel_grads) = self.backward_spectral(params, tape, output_grad)?;
        for (k, gk) in kernel_grads.iter().enumerate() {
            grad[self.layout.weights[k].clone()].copy_from_slice(&self.bases[k].weight_gradient(gk));
        }
        Ok(grad)
    }

    /// Summed gradient over a batch of `(tape, output gradient)` pairs. Kernel
    /// gradients are accumulated in batch order before the weight projection.
    pub fn backward_batch(&self, params: &[f64], items: &[(&Tape, &ModelOutput)]) -> Result<Vec<f64>> {
        let parts = items
            .par_iter()
            .map(|(t, g)| self.backward_spectral(params, t, g))
            .collect::<Result<Vec<_>>>()?;
        let mut iter = parts.into_iter();
        let Some((mut grad, mut kernel_grads)) = iter.next() else {
            self.check_params(params)?;
            return Ok(vec![0.0; self.layout.total]);
        };
        for (g, ks) in iter {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            for (acc, k) in kernel_grads.iter_mut().zip(&ks) {
                acc.add_assign(k);
            }
        }
        for (k, gk) in kernel_grads.iter().enumerate() {
            grad[self.layout.weights[k].clone()].copy_from_slice(&self.bases[k].weight_gradient(gk));
        }
        Ok(grad)
    }

    /// Gradient with respect to biases and head parameters, plus the gradient
    /// with respect to each layer's kernel spectrum. Weight entries are left zero.
    fn backward_spectral(
        &self,
        params: &[f64],
        tape: &Tape,
        output_grad: &ModelOutput,
    ) -> Result<(Vec<f64>, Vec<KernelSpectrum>)> {
        self.check_params(params)?;
        if tape.fingerprint != fingerprint(&self.spec_text, params) || tape.layers.len() != self.spec.layers.len() {
            return Err(Error::StaleTape);
        }
        let mut grad = vec![0.0; self.layout.total];
        let mut kernel_grads = Vec::with_capacity(self.spec.layers.len());
        let last = self.spec.layers.len() - 1;
        // gradient with respect to the output spectrum of the current layer
        let mut g_out: So3Spectrum;
        let mut g_s2_out: Option<S2Spectrum> = None;

        match (output_grad, self.spec.head) {
            (ModelOutput::Logits(gl), Head::Segmentation) => {
                let layer = &self.spec.layers[last];
                if gl.bandlimit.get() != layer.out_bandlimit || gl.channels != layer.out_channels {
                    return Err(Error::Shape("logit gradient does not match the model output".into()));
                }
                g_s2_out = Some(S2Plan::cached(gl.bandlimit).synthesize_adjoint(gl)?);
                g_out = So3Spectrum::zeros(gl.bandlimit, 1);
            }
            (ModelOutput::Scores(gs), Head::Classification { num_classes }) => {
                if gs.len() != num_classes {
                    return Err(Error::Shape("score gradient does not match the class count".into()));
                }
                let r = tape.readout.as_ref().ok_or(Error::StaleTape)?;
                let hw = &params[self.layout.head_weights.clone()];
                let c = r.len();
                let mut gr = vec![0.0; c];
                for (k, g) in gs.iter().enumerate() {
                    grad[self.layout.head_biases.start + k] = *g;
                    for j in 0..c {
                        grad[self.layout.head_weights.start + k * c + j] = g * r[j];
                        gr[j] += g * hw[k * c + j];
                    }
                }
                let lo = Bandlimit::new(self.spec.layers[last].out_bandlimit)?;
                g_out = So3Spectrum::zeros(lo, c);
                for (j, v) in gr.iter().enumerate() {
                    g_out.set(j, 0, 0, 0, Complex64::new(8.0 * PI * PI * v, 0.0));
                }
            }
            _ => return Err(Error::Shape("output gradient does not match the model head".into())),
        }

        for k in (0..=last).rev() {
            let layer = &self.spec.layers[k];
            let lc = Bandlimit::new(layer.conv_bandlimit())?;
            let t = &tape.layers[k];
            let bias_range = self.layout.biases[k].clone();

            let g_z = if let Some(gs) = g_s2_out.take() {
                let s = (4.0 * PI).sqrt();
                for c in 0..layer.out_channels {
                    grad[bias_range.start + c] = s * gs.get(c, 0, 0).re;
                }
                so3_to_s2_final_spectrum_adjoint(&resample_bandlimit_s2(&gs, lc))
            } else {
                for c in 0..layer.out_channels {
                    grad[bias_range.start + c] = g_out.get(c, 0, 0, 0).re;
                }
                resample_bandlimit_so3(&g_out, lc)
            };

            let (g_kernel, g_input) = match (&t.input, t.kernel.as_ref()) {
                (Feature::S2(f), KernelSpectrum::S2(ks)) => {
                    let (gk, _) = conv_s2_to_so3_adjoint(ks, f, &g_z)?;
                    (KernelSpectrum::S2(gk), None)
                }
                (Feature::So3(f), KernelSpectrum::So3(ks)) => {
                    let (gk, gf) = conv_so3_adjoint(ks, f, &g_z)?;
                    (KernelSpectrum::So3(gk), Some(gf))
                }
                _ => return Err(Error::StaleTape),
            };
            kernel_grads.push(g_kernel);

            if k == 0 {
                break;
            }
            let gf = g_input.expect("SO(3) layers have SO(3) inputs");
            let l_in = Bandlimit::new(layer.in_bandlimit)?;
            let g_prev = resample_bandlimit_so3(&gf, l_in);
            let prev = &tape.layers[k - 1];
            g_out = match &prev.relu_mask {
                None => g_prev,
                Some((lo, mask)) => {
                    let plan = So3Plan::cached(*lo);
                    let mut gs = plan.analyze_adjoint(&g_prev)?;
                    for (v, &keep) in gs.values.iter_mut().zip(mask) {
                        if !keep {
                            *v = 0.0;
                        }
                    }
                    plan.synthesize_adjoint(&gs)?
                }
            };
        }
        kernel_grads.reverse();
        Ok((grad, kernel_grads))
    }
}

/// Relative deviation between `Φ(rotate(x, R))` and `rotate(Φ(x), R)` for a
/// bandlimited input spectrum `x`. Segmentation outputs are compared in the
/// spectral domain, classification scores directly.
pub fn rotation_equivariance_error(net: &Network, params: &[f64], input: &S2Spectrum, r: &Rotation) -> Result<f64> {
    let plan = S2Plan::cached(input.bandlimit);
    let x = plan.synthesize(input)?;
    let xr = plan.synthesize(&rotate_s2_spectrum(input, r))?;
    let (y, _) = net.forward(params, &x)?;
    let (yr, _) = net.forward(params, &xr)?;
    let (a, b): (Vec<Complex64>, Vec<Complex64>) = match (y, yr) {
        (ModelOutput::Logits(y), ModelOutput::Logits(yr)) => {
            let out = S2Plan::cached(y.bandlimit);
            (out.analyze(&yr)?.coeffs, rotate_s2_spectrum(&out.analyze(&y)?, r).coeffs)
        }
        (ModelOutput::Scores(y), ModelOutput::Scores(yr)) => (
            yr.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
            y.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        ),
        _ => unreachable!("one network gives one output kind"),
    };
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    Ok((num / den.max(1e-300)).sqrt())
}
