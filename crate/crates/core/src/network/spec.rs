use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default kernel support counts `(n_α, n_β, n_γ)` for lifting layers.
pub const DEFAULT_S2_SUPPORT: (usize, usize, usize) = (8, 3, 1);
/// Default kernel support counts for layers with an SO(3) kernel.
pub const DEFAULT_SO3_SUPPORT: (usize, usize, usize) = (8, 3, 8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Lifting convolution, features on S² to features on SO(3).
    S2So3Conv,
    /// Group convolution on SO(3).
    So3Conv,
    /// Group convolution followed by the sum over `n`, features on SO(3) to S².
    So3S2Conv,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::S2So3Conv => "S2SO3conv",
            LayerKind::So3Conv => "SO3conv",
            LayerKind::So3S2Conv => "SO3S2conv",
        }
    }

    pub fn default_support(self) -> (usize, usize, usize) {
        match self {
            LayerKind::S2So3Conv => DEFAULT_S2_SUPPORT,
            _ => DEFAULT_SO3_SUPPORT,
        }
    }

    /// Whether the layer's kernel lives on S² rather than SO(3).
    pub fn has_s2_kernel(self) -> bool {
        self == LayerKind::S2So3Conv
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S2SO3conv" => Ok(LayerKind::S2So3Conv),
            "SO3conv" => Ok(LayerKind::So3Conv),
            "SO3S2conv" => Ok(LayerKind::So3S2Conv),
            other => Err(Error::Format(format!("unknown layer kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_bandlimit: usize,
    pub out_bandlimit: usize,
    /// Upper bound on the β angle of kernel support points.
    pub beta_hat: f64,
    pub support_counts: (usize, usize, usize),
}

impl LayerSpec {
    /// Layer with the default support counts for its kind.
    pub fn new(kind: LayerKind, in_channels: usize, out_channels: usize, in_bandlimit: usize, out_bandlimit: usize, beta_hat: f64) -> Self {
        LayerSpec {
            kind,
            in_channels,
            out_channels,
            in_bandlimit,
            out_bandlimit,
            beta_hat,
            support_counts: kind.default_support(),
        }
    }

    pub fn support_len(&self) -> usize {
        let (a, b, g) = self.support_counts;
        a * b * g
    }

    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.support_len()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    /// Bandlimit at which the convolution is evaluated.
    pub fn conv_bandlimit(&self) -> usize {
        self.in_bandlimit.min(self.out_bandlimit)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("{}: channel counts must be positive", self.kind)));
        }
        if self.in_bandlimit == 0 || self.out_bandlimit == 0 {
            return Err(Error::Config(format!("{}: bandlimits must be positive", self.kind)));
        }
        if !(self.beta_hat > 0.0 && self.beta_hat <= PI) {
            return Err(Error::Config(format!("{}: beta_hat {} outside (0, π]", self.kind, self.beta_hat)));
        }
        let (a, b, g) = self.support_counts;
        if a == 0 || b == 0 || g == 0 {
            return Err(Error::Config(format!("{}: support counts must be positive", self.kind)));
        }
        if self.kind.has_s2_kernel() && g != 1 {
            return Err(Error::Config("S2SO3conv kernels live on S², n_gamma must be 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({},{},{},{},{:.4}·π)",
            self.kind,
            self.in_channels,
            self.out_channels,
            self.in_bandlimit,
            self.out_bandlimit,
            self.beta_hat / PI
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    /// No nonlinearity; the whole stack is linear and exactly equivariant.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Per-point logits on S² from a final `SO3S2conv`.
    Segmentation,
    /// Invariant readout per channel followed by one dense affine map.
    Classification { num_classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub nonlinearity: Nonlinearity,
    pub head: Head,
}

const HEADER: &str = "s2seg-model 1";

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, nonlinearity: Nonlinearity, head: Head) -> Result<Self> {
        let spec = ModelSpec { layers, nonlinearity, head };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(Error::Chain("model has no layers".into()));
        };
        if first.kind != LayerKind::S2So3Conv {
            return Err(Error::Chain(format!("first layer must be S2SO3conv, got {}", first.kind)));
        }
        for l in &self.layers {
            l.validate()?;
        }
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate().skip(1) {
            let want = match self.head {
                Head::Segmentation if k == last => LayerKind::So3S2Conv,
                _ => LayerKind::So3Conv,
            };
            if l.kind != want {
                return Err(Error::Chain(format!("layer {k} must be {want}, got {}", l.kind)));
            }
            let prev = &self.layers[k - 1];
            if l.in_channels != prev.out_channels {
                return Err(Error::Chain(format!(
                    "layer {k} expects {} input channels, previous layer emits {}",
                    l.in_channels, prev.out_channels
                )));
            }
            if l.in_bandlimit != prev.out_bandlimit {
                return Err(Error::Chain(format!(
                    "layer {k} expects input bandlimit {}, previous layer emits {}",
                    l.in_bandlimit, prev.out_bandlimit
                )));
            }
        }
        match self.head {
            Head::Segmentation if self.layers.len() < 2 => {
                Err(Error::Chain("a segmentation model needs at least S2SO3conv and SO3S2conv".into()))
            }
            Head::Classification { num_classes: 0 } => Err(Error::Config("num_classes must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn input_bandlimit(&self) -> usize {
        self.layers[0].in_bandlimit
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn output_bandlimit(&self) -> usize {
        self.layers.last().expect("validated").out_bandlimit
    }

    /// Number of output channels (segmentation) or classes (classification).
    pub fn output_channels(&self) -> usize {
        match self.head {
            Head::Segmentation => self.layers.last().expect("validated").out_channels,
            Head::Classification { num_classes } => num_classes,
        }
    }

    pub fn head_param_count(&self) -> usize {
        match self.head {
            Head::Segmentation => 0,
            Head::Classification { num_classes } => {
                let c = self.layers.last().expect("validated").out_channels;
                num_classes * c + num_classes
            }
        }
    }

    /// Canonical text form, stable under a parse/print round trip.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        match self.head {
            Head::Segmentation => s.push_str("head segmentation\n"),
            Head::Classification { num_classes } => s.push_str(&format!("head classification {num_classes}\n")),
        }
        s.push_str(match self.nonlinearity {
            Nonlinearity::Relu => "nonlinearity relu\n",
            Nonlinearity::Identity => "nonlinearity identity\n",
        });
        for l in &self.layers {
            let (a, b, g) = l.support_counts;
            s.push_str(&format!(
                "layer {} {} {} {} {} {} {a} {b} {g}\n",
                l.kind, l.in_channels, l.out_channels, l.in_bandlimit, l.out_bandlimit, l.beta_hat
            ));
        }
        s
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(HEADER) {
            return Err(Error::Format(format!("model spec must start with {HEADER:?}")));
        }
        let mut head = None;
        let mut nonlinearity = Nonlinearity::Relu;
        let mut layers = Vec::new();
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["head", "segmentation"] => head = Some(Head::Segmentation),
                ["head", "classification", n] => {
                    head = Some(Head::Classification { num_classes: parse_num(n)? });
                }
                ["nonlinearity", "relu"] => nonlinearity = Nonlinearity::Relu,
                ["nonlinearity", "identity"] => nonlinearity = Nonlinearity::Identity,
                ["layer", kind, ni, no, bi, bo, beta, a, b, g] => layers.push(LayerSpec {
                    kind: kind.parse()?,
                    in_channels: parse_num(ni)?,
                    out_channels: parse_num(no)?,
                    in_bandlimit: parse_num(bi)?,
                    out_bandlimit: parse_num(bo)?,
                    beta_hat: beta.parse().map_err(|_| Error::Format(format!("bad beta_hat {beta:?}")))?,
                    support_counts: (parse_num(a)?, parse_num(b)?, parse_num(g)?),
                }),
                _ => return Err(Error::Format(format!("unrecognized model spec line {line:?}"))),
            }
        }
        let head = head.ok_or_else(|| Error::Format("model spec has no head line".into()))?;
        ModelSpec::new(layers, nonlinearity, head)
    }
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Format(format!("expected a non-negative integer, got {s:?}")))
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        if let Head::Classification { num_classes } = self.head {
            writeln!(f, "readout → dense({num_classes})")?;
        }
        write!(f, "params: {}", count_parameters(self))
    }
}

/// Total trainable parameters: kernel weights and biases of every layer plus the head.
pub fn count_parameters(spec: &ModelSpec) -> usize {
    spec.layers.iter().map(LayerSpec::param_count).sum::<usize>() + spec.head_param_count()
}

/// Where each layer's weights and biases live inside the flat parameter vector.
///
/// Weights of a layer are ordered `(out_channel, in_channel, support point)`,
/// followed by one bias per output channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub weights: Vec<std::ops::Range<usize>>,
    pub biases: Vec<std::ops::Range<usize>>,
    pub head_weights: std::ops::Range<usize>,
    pub head_biases: std::ops::Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut at = 0;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in &spec.layers {
            weights.push(at..at + l.weight_count());
            at += l.weight_count();
            biases.push(at..at + l.out_channels);
            at += l.out_channels;
        }
        let (hw, hb) = match spec.head {
            Head::Segmentation => (0, 0),
            Head::Classification { num_classes } => {
                (num_classes * spec.layers.last().expect("validated").out_channels, num_classes)
            }
        };
        let head_weights = at..at + hw;
        at += hw;
        let head_biases = at..at + hb;
        at += hb;
        ParamLayout { weights, biases, head_weights, head_biases, total: at }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(layers: Vec<LayerSpec>) -> ModelSpec {
        ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation).unwrap()
    }

    #[test]
    fn single_layer_count() {
        let mut l = LayerSpec::new(LayerKind::S2So3Conv, 1, 2, 8, 8, 0.3);
        l.support_counts = (8, 4, 1);
        assert_eq!(l.param_count(), 66);
        l.out_channels = 4;
        assert_eq!(l.weight_count(), 128);
    }

    #[test]
    fn chain_errors() {
        let a = LayerSpec::new(LayerKind::S2So3Conv, 1, 4, 8, 6, 0.3);
        let b = LayerSpec::new(LayerKind::So3S2Conv, 5, 3, 6, 8, 0.3);
        let err = ModelSpec::new(vec![a.clone(), b], Nonlinearity::Relu, Head::Segmentation);
        assert!(matches!(err, Err(Error::Chain(_))));
        let c = LayerSpec::new(LayerKind::So3S2Conv, 4, 3, 5, 8, 0.3);
        assert!(matches!(
            ModelSpec::new(vec![a.clone(), c], Nonlinearity::Relu, Head::Segmentation),
            Err(Error::Chain(_))
        ));
        assert!(matches!(
            ModelSpec::new(vec![a], Nonlinearity::Relu, Head::Segmentation),
            Err(Error::Chain(_))
        ));
    }

    #[test]
    fn canonical_text_round_trip() {
        let spec = seg(vec![
            LayerSpec::new(LayerKind::S2So3Conv, 1, 4, 8, 6, 0.1238 * PI),
            LayerSpec::new(LayerKind::So3Conv, 4, 5, 6, 4, 1.0 / 3.0),
            LayerSpec::new(LayerKind::So3S2Conv, 5, 3, 4, 8, 0.7),
        ]);
        let text = spec.to_canonical_text();
        let back = ModelSpec::from_canonical_text(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.to_canonical_text(), text);
    }

    #[test]
    fn layout_covers_every_parameter() {
        let spec = ModelSpec::new(
            vec![
                LayerSpec::new(LayerKind::S2So3Conv, 2, 3, 6, 4, 0.5),
                LayerSpec::new(LayerKind::So3Conv, 3, 4, 4, 4, 0.5),
            ],
            Nonlinearity::Relu,
            Head::Classification { num_classes: 5 },
        )
        .unwrap();
        let lay = ParamLayout::new(&spec);
        assert_eq!(lay.total, count_parameters(&spec));
        assert_eq!(lay.head_weights.len(), 20);
        assert_eq!(lay.head_biases.end, lay.total);
    }
}
