//! Mini-batch training with Adam, evaluation and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetRecord, IouAccumulator};
use crate::error::{Error, Result};
use crate::network::{adam_step, softmax_xent_loss, AdamConfig, AdamState, Head, ModelOutput, Network, Tape};
use crate::transforms::SphericalSignal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Epochs without improvement of the validation metric before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, batch_size: 32, adam: AdamConfig::default(), patience: 10, seed: 0 }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub miou: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by validation mIoU, or of the last epoch.
    pub params: Vec<f64>,
    pub adam: AdamState,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean IoU over non-background classes; `None` if no such class occurs.
    pub miou: Option<f64>,
    pub accuracy: f64,
}

fn check_compat(net: &Network, records: &[DatasetRecord]) -> Result<()> {
    if net.spec().head != Head::Segmentation {
        return Err(Error::Chain("training and evaluation need a segmentation model".into()));
    }
    let (li, lo) = (net.spec().input_bandlimit(), net.spec().output_bandlimit());
    if let Some(r) = records.iter().find(|r| r.signal.bandlimit.get() != li || li != lo) {
        return Err(Error::Chain(format!(
            "dataset bandlimit {} does not match model input {li} / output {lo}",
            r.signal.bandlimit
        )));
    }
    if net.spec().input_channels() != 1 {
        return Err(Error::Chain("dataset signals have one channel".into()));
    }
    Ok(())
}

/// Per-point argmax over the logit channels.
pub fn argmax_mask(logits: &SphericalSignal) -> Vec<u8> {
    let n = logits.points_per_channel();
    (0..n)
        .map(|x| {
            let mut best = 0;
            for c in 1..logits.channels {
                if logits.values[c * n + x] > logits.values[best * n + x] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

pub fn predict(net: &Network, params: &[f64], signal: &SphericalSignal) -> Result<(SphericalSignal, Vec<u8>)> {
    let (out, _) = net.forward(params, signal)?;
    let ModelOutput::Logits(logits) = out else {
        return Err(Error::Chain("prediction needs a segmentation model".into()));
    };
    let mask = argmax_mask(&logits);
    Ok((logits, mask))
}

pub fn evaluate(net: &Network, params: &[f64], records: &[DatasetRecord]) -> Result<EvalReport> {
    check_compat(net, records)?;
    let classes = net.spec().output_channels();
    let mut per: Vec<(f64, Vec<u8>)> = Vec::with_capacity(records.len());
    for chunk in records.chunks(64) {
        let inputs: Vec<&SphericalSignal> = chunk.iter().map(|r| &r.signal).collect();
        let outs = net.forward_batch(params, &inputs)?;
        let part = outs
            .into_par_iter()
            .zip(chunk)
            .map(|((out, _), r)| {
                let ModelOutput::Logits(logits) = out else { unreachable!("checked segmentation head") };
                Ok((softmax_xent_loss(&logits, &r.mask)?.0, argmax_mask(&logits)))
            })
            .collect::<Result<Vec<_>>>()?;
        per.extend(part);
    }
    let mut acc = IouAccumulator::new(classes);
    let mut loss = 0.0;
    for (r, (l, pred)) in records.iter().zip(&per) {
        loss += l;
        acc.add(pred, &r.mask)?;
    }
    let miou = match acc.miou(true) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        loss: loss / records.len().max(1) as f64,
        per_class_iou: acc.per_class(),
        miou,
        accuracy: acc.accuracy().unwrap_or(0.0),
    })
}

/// Mean loss and mean gradient over a batch, summed in batch order.
fn batch_gradient(net: &Network, params: &[f64], batch: &[&DatasetRecord]) -> Result<(f64, Vec<f64>)> {
    let inputs: Vec<&SphericalSignal> = batch.iter().map(|r| &r.signal).collect();
    let outs = net.forward_batch(params, &inputs)?;
    let losses = outs
        .par_iter()
        .zip(batch)
        .map(|((out, _), r)| {
            let ModelOutput::Logits(logits) = out else { unreachable!("checked segmentation head") };
            let (loss, g) = softmax_xent_loss(logits, &r.mask)?;
            Ok((loss, ModelOutput::Logits(g)))
        })
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<(&Tape, &ModelOutput)> = outs.iter().zip(&losses).map(|((_, t), (_, g))| (t, g)).collect();
    let mut grad = net.backward_batch(params, &items)?;
    let k = batch.len() as f64;
    grad.iter_mut().for_each(|v| *v /= k);
    let loss = losses.iter().map(|(l, _)| l).sum::<f64>() / k;
    Ok((loss, grad))
}

pub fn train(
    net: &Network,
    params: Vec<f64>,
    adam: Option<AdamState>,
    train_set: &[DatasetRecord],
    val_set: Option<&[DatasetRecord]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    check_compat(net, train_set)?;
    if let Some(v) = val_set {
        check_compat(net, v)?;
    }
    let mut params = params;
    let mut adam = adam.unwrap_or_else(|| AdamState::new(params.len()));
    if adam.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match the parameter count".into()));
    }
    let initial_loss = evaluate(net, &params, train_set)?.loss;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_gradient(net, &params, &batch)?;
            total += loss * batch.len() as f64;
            adam_step(&mut params, &grad, &mut adam, &cfg.adam);
        }
        let miou = match val_set {
            Some(v) => evaluate(net, &params, v)?.miou,
            None => None,
        };
        let entry = EpochLog {
            epoch,
            loss: total / train_set.len() as f64,
            miou,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if val_set.is_some() {
            let score = miou.unwrap_or(0.0);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome { params, adam, initial_loss, log, best_epoch })
}
