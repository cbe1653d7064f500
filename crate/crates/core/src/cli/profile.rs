use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, OpCategory, OpTimer};
use crate::transforms::SphericalSignal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub index: usize,
    pub name: String,
    pub mean_ms: f64,
    pub stderr_ms: f64,
    pub fraction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub threads: usize,
    pub batch: usize,
    pub iterations: usize,
    pub layers: Vec<LayerTiming>,
    /// Share of total time per operation class, percent.
    pub op_fractions: BTreeMap<String, f64>,
    pub total_mean_ms: f64,
}

impl ProfileReport {
    pub fn layer_fraction_sum(&self) -> f64 {
        self.layers.iter().map(|l| l.fraction_pct).sum()
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Times `iterations` forward passes over a batch after `warmup` untimed ones.
/// Layer latencies are per batch; the initial input transform is charged to
/// the first layer.
pub fn profile_network(
    net: &Network,
    params: &[f64],
    inputs: &[SphericalSignal],
    warmup: usize,
    iterations: usize,
) -> Result<ProfileReport> {
    if iterations == 0 || inputs.is_empty() {
        return Err(Error::Config("profiling needs at least one iteration and one input".into()));
    }
    let layers = net.spec().layers.len();
    let mut per_layer = vec![Vec::with_capacity(iterations); layers];
    let mut per_op: BTreeMap<OpCategory, f64> = BTreeMap::new();
    for it in 0..warmup + iterations {
        let mut timer = OpTimer::default();
        for x in inputs {
            net.forward_timed(params, x, &mut timer)?;
        }
        if it < warmup {
            continue;
        }
        let mut sums = vec![0.0; layers];
        for (layer, cat, d) in &timer.records {
            let ms = d.as_secs_f64() * 1e3;
            sums[*layer] += ms;
            *per_op.entry(*cat).or_default() += ms;
        }
        for (k, s) in sums.into_iter().enumerate() {
            per_layer[k].push(s);
        }
    }
    let stats: Vec<(f64, f64)> = per_layer.iter().map(|v| mean_stderr(v)).collect();
    let total: f64 = stats.iter().map(|s| s.0).sum();
    let layers_out = net
        .spec()
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| LayerTiming {
            index: k,
            name: l.kind.name().to_string(),
            mean_ms: stats[k].0,
            stderr_ms: stats[k].1,
            fraction_pct: 100.0 * stats[k].0 / total,
        })
        .collect();
    let op_total: f64 = per_op.values().sum();
    let op_fractions = OpCategory::ALL
        .iter()
        .map(|c| (c.name().to_string(), 100.0 * per_op.get(c).copied().unwrap_or(0.0) / op_total))
        .collect();
    Ok(ProfileReport {
        threads: rayon::current_num_threads(),
        batch: inputs.len(),
        iterations,
        layers: layers_out,
        op_fractions,
        total_mean_ms: total,
    })
}

/// Wall-clock of a closure in milliseconds.
pub fn time_ms<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

impl fmt::Display for ProfileReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threads {}  batch {}  iterations {}", self.threads, self.batch, self.iterations)?;
        writeln!(f, "{:>3}  {:<10} {:>14} {:>10}", "#", "layer", "latency (ms)", "fraction")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>3}  {:<10} {:>8.3} ± {:<5.3} {:>8.1} %",
                l.index, l.name, l.mean_ms, l.stderr_ms, l.fraction_pct
            )?;
        }
        writeln!(f, "total {:.3} ms", self.total_mean_ms)?;
        for (k, v) in &self.op_fractions {
            writeln!(f, "  {k:<15} {v:>6.1} %")?;
        }
        Ok(())
    }
}
