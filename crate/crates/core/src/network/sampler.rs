//! Random equivariant U-shaped architectures in a target parameter range.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

use super::spec::{count_parameters, Head, LayerKind, LayerSpec, ModelSpec, Nonlinearity};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub param_lo: usize,
    pub param_hi: usize,
    pub bandlimit: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub max_attempts: usize,
}

impl SamplerConfig {
    pub fn new(param_lo: usize, param_hi: usize, bandlimit: usize, in_channels: usize, out_channels: usize) -> Self {
        SamplerConfig { param_lo, param_hi, bandlimit, in_channels, out_channels, max_attempts: 100_000 }
    }
}

/// `floor` of the points `2..=n+1` of an `n+1`-point linear interpolation from `a` to `b`.
fn interpolate(a: f64, b: f64, n: usize) -> Vec<usize> {
    (1..=n).map(|k| (a + (b - a) * k as f64 / n as f64).floor() as usize).collect()
}

/// One unconstrained draw: depth, bottleneck bandlimit, channel maximum and
/// reference kernel size, mirrored into a down/up stack.
pub fn draw_architecture<R: Rng + ?Sized>(cfg: &SamplerConfig, rng: &mut R) -> Result<ModelSpec> {
    let l = cfg.bandlimit;
    let max_depth = (cfg.param_hi / 20_000).max(1);
    let depth = rng.gen_range(1..=max_depth);
    let bottleneck = rng.gen_range(3..=20usize.min(l.max(3)));
    let max_channels = rng.gen_range(11..=30usize);
    let beta_ref = rng.gen_range(0.02..=0.25) * PI;

    let down_b = interpolate(l as f64, bottleneck as f64, depth);
    let down_c = interpolate(11.0, max_channels as f64, depth);
    let beta = |b_in: usize| l as f64 * beta_ref / b_in as f64;

    let mut layers = Vec::with_capacity(2 * depth);
    let (mut b_prev, mut c_prev) = (l, cfg.in_channels);
    for (k, (&b, &c)) in down_b.iter().zip(&down_c).enumerate() {
        let kind = if k == 0 { LayerKind::S2So3Conv } else { LayerKind::So3Conv };
        layers.push(LayerSpec::new(kind, c_prev, c, b_prev, b.max(1), beta(b_prev)));
        b_prev = b.max(1);
        c_prev = c;
    }
    for k in (0..depth - 1).rev() {
        let (b, c) = (down_b[k].max(1), down_c[k]);
        layers.push(LayerSpec::new(LayerKind::So3Conv, c_prev, c, b_prev, b, beta(b_prev)));
        b_prev = b;
        c_prev = c;
    }
    layers.push(LayerSpec::new(LayerKind::So3S2Conv, c_prev, cfg.out_channels, b_prev, l, beta(b_prev)));
    ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)
}

/// Rejection-samples [`draw_architecture`] until the parameter count lies in
/// `[param_lo, param_hi]` and every kernel fits (`β̂ ≤ π`).
pub fn sample_equivariant_architecture<R: Rng + ?Sized>(cfg: &SamplerConfig, rng: &mut R) -> Result<ModelSpec> {
    if cfg.param_lo >= cfg.param_hi {
        return Err(Error::Config(format!("empty parameter range [{}, {}]", cfg.param_lo, cfg.param_hi)));
    }
    if cfg.bandlimit < 3 || cfg.in_channels == 0 || cfg.out_channels == 0 {
        return Err(Error::Config("sampler needs bandlimit ≥ 3 and positive channel counts".into()));
    }
    for _ in 0..cfg.max_attempts {
        let spec = match draw_architecture(cfg, rng) {
            Ok(s) => s,
            Err(Error::Config(_)) => continue,
            Err(e) => return Err(e),
        };
        let n = count_parameters(&spec);
        if (cfg.param_lo..=cfg.param_hi).contains(&n) {
            return Ok(spec);
        }
    }
    Err(Error::SamplingExhausted(cfg.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::ModelSpec;

    fn table_model(beta_ref: f64) -> ModelSpec {
        // the 204k reference architecture rebuilt by hand
        let b = |bi: usize| 50.0 * beta_ref / bi as f64;
        let l = |k, ni, no, bi, bo| LayerSpec::new(k, ni, no, bi, bo, b(bi));
        ModelSpec::new(
            vec![
                l(LayerKind::S2So3Conv, 1, 11, 50, 42),
                l(LayerKind::So3Conv, 11, 12, 42, 35),
                l(LayerKind::So3Conv, 12, 13, 35, 27),
                l(LayerKind::So3Conv, 13, 14, 27, 20),
                l(LayerKind::So3Conv, 14, 13, 20, 27),
                l(LayerKind::So3Conv, 13, 12, 27, 35),
                l(LayerKind::So3Conv, 12, 11, 35, 42),
                l(LayerKind::So3S2Conv, 11, 11, 42, 50),
            ],
            Nonlinearity::Relu,
            Head::Segmentation,
        )
        .unwrap()
    }

    #[test]
    fn interpolation_reproduces_reference_tables() {
        assert_eq!(interpolate(50.0, 20.0, 4), vec![42, 35, 27, 20]);
        assert_eq!(interpolate(11.0, 14.0, 4), vec![11, 12, 13, 14]);
        assert_eq!(interpolate(50.0, 10.0, 6), vec![43, 36, 30, 23, 16, 10]);
        assert_eq!(interpolate(11.0, 27.0, 6), vec![13, 16, 19, 21, 24, 27]);
    }

    #[test]
    fn reference_model_count() {
        assert_eq!(count_parameters(&table_model(0.1238 * PI)), 204_073);
    }

    #[test]
    fn empty_range_is_config_error() {
        let mut rng = rand::thread_rng();
        let cfg = SamplerConfig::new(10, 10, 16, 1, 11);
        assert!(matches!(sample_equivariant_architecture(&cfg, &mut rng), Err(Error::Config(_))));
    }
}
