use std::fmt;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::haze::DEFAULT_C;
use crate::image::{clamp_unit, invert, ImagePlane};
use crate::iqa::{format_value, psnr, ssim_metric_with};
use crate::losses::{tape_loss, LossKind, LossTargets, LossWeights};
use crate::network::gradcheck::tape_prediction;
use crate::network::{tensor_to_plane, Network};
use crate::seeds;

use super::config::TrainConfig;
use super::data::{augment, Sample};
use super::optim::{adam_step, lr_on_plateau, OptimState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One row of `metrics.csv`. Training rows average over the epoch's
/// samples as seen during the epoch; validation rows are measured after it.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub round: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "round,epoch,split,loss,ssim,psnr,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.epoch,
            self.split,
            format_value(self.loss),
            format_value(self.ssim),
            format_value(self.psnr),
            self.lr
        )
    }
}

pub fn metrics_csv(records: &[EpochMetrics]) -> String {
    let mut out = String::from(EpochMetrics::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Curves of one supervised phase. Validation rows include an epoch-0 row
/// measured before any update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochMetrics>,
    pub epochs_run: usize,
    pub decays: usize,
    /// True when the phase ended on the decay count rather than the budget.
    pub stopped_on_plateau: bool,
}

impl TrainReport {
    fn curve(&self, split: Split, f: impl Fn(&EpochMetrics) -> f64) -> Vec<f64> {
        self.records.iter().filter(|r| r.split == split).map(f).collect()
    }

    pub fn train_loss_curve(&self) -> Vec<f64> {
        self.curve(Split::Train, |r| r.loss)
    }

    pub fn val_ssim_curve(&self) -> Vec<f64> {
        self.curve(Split::Val, |r| r.ssim)
    }

    pub fn val_psnr_curve(&self) -> Vec<f64> {
        self.curve(Split::Val, |r| r.psnr)
    }

    pub fn first_validation(&self) -> Option<&EpochMetrics> {
        self.records.iter().find(|r| r.split == Split::Val)
    }

    pub fn final_validation(&self) -> Option<&EpochMetrics> {
        self.records.iter().rev().find(|r| r.split == Split::Val)
    }
}

/// Mean objective, SSIM and PSNR over a set of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SetMetrics {
    pub loss: f64,
    pub ssim: f64,
    pub psnr: f64,
}

struct Accumulator {
    loss: f64,
    ssim: f64,
    psnr: f64,
    n: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            loss: 0.0,
            ssim: 0.0,
            psnr: 0.0,
            n: 0,
        }
    }

    fn add(&mut self, loss: f64, ssim: f64, psnr: f64) {
        self.loss += loss;
        self.ssim += ssim;
        self.psnr += psnr;
        self.n += 1;
    }

    fn mean(&self) -> SetMetrics {
        let n = self.n.max(1) as f64;
        SetMetrics {
            loss: self.loss / n,
            ssim: self.ssim / n,
            psnr: self.psnr / n,
        }
    }
}

/// Records the full pipeline and loss for one pair. Returns the objective
/// value, the clamped output and the gradients when `backward` is set.
fn run_pair(
    net: &Network<f32>,
    low: &ImagePlane,
    target: &ImagePlane,
    weights: &LossWeights,
    kind: LossKind,
    backward: bool,
) -> Result<(f64, ImagePlane, Option<crate::network::Gradients<f32>>)> {
    let inverted = invert(low);
    let mut pass = net.forward(&inverted)?;
    let y_p = tape_prediction(&mut pass.tape, pass.h, &inverted, DEFAULT_C)?;
    let targets = LossTargets::<f32>::new(target, weights)?;
    let nodes = tape_loss(&mut pass.tape, y_p, &targets, weights, kind)?;
    let loss = pass.tape.scalar(nodes.objective);
    let output = clamp_unit(&tensor_to_plane(pass.tape.value(y_p))?);
    let grads = if backward {
        Some(pass.tape.backward(nodes.objective, 1.0)?)
    } else {
        None
    };
    Ok((loss, output, grads))
}

fn quality(output: &ImagePlane, target: &ImagePlane, weights: &LossWeights) -> Result<(f64, f64)> {
    let ssim = ssim_metric_with(output, target, &weights.ssim_config())?.value;
    Ok((ssim, psnr(output, target)?.value))
}

/// Objective, SSIM and PSNR of the network's clamped outputs against the
/// sample targets. Samples without a target are skipped.
pub fn evaluate_set(net: &Network<f32>, samples: &[Sample], weights: &LossWeights, kind: LossKind) -> Result<SetMetrics> {
    let mut acc = Accumulator::new();
    for s in samples {
        if let Some(target) = s.target() {
            let (loss, output, _) = run_pair(net, s.low(), target, weights, kind, false)?;
            let (ssim, p) = quality(&output, target, weights)?;
            acc.add(loss, ssim, p);
        }
    }
    Ok(acc.mean())
}

/// SSIM and PSNR of the untouched inputs against their targets.
pub fn input_baseline(samples: &[Sample], weights: &LossWeights) -> Result<SetMetrics> {
    let mut acc = Accumulator::new();
    for s in samples {
        if let Some(target) = s.target() {
            let (ssim, p) = quality(s.low(), target, weights)?;
            acc.add(0.0, ssim, p);
        }
    }
    Ok(acc.mean())
}

/// Minibatch training on every sample that has a target. Each epoch visits
/// the samples in a seeded order; gradients within a batch are averaged in
/// that order. After each epoch the validation set is scored and fed to the
/// plateau rule (the epoch's training SSIM is used when there is no
/// validation set). `round` tags the metric rows and the random streams.
pub fn train_supervised(
    samples: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
    net: &mut Network<f32>,
    opt: &mut OptimState,
    round: usize,
) -> Result<TrainReport> {
    config.validate()?;
    let labeled: Vec<&Sample> = samples.iter().filter(|s| s.target().is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::Insufficient("no labeled samples to train on".into()));
    }
    let weights = &config.loss;
    let kind = config.objective;
    let has_val = validation.iter().any(|s| s.target().is_some());
    let mut report = TrainReport::default();
    let mut monitor = Vec::with_capacity(config.epochs);
    let decays_at_start = opt.decays();

    if has_val {
        let m = evaluate_set(net, validation, weights, kind)?;
        report.records.push(EpochMetrics {
            round,
            epoch: 0,
            split: Split::Val,
            loss: m.loss,
            ssim: m.ssim,
            psnr: m.psnr,
            lr: opt.lr(),
        });
    }

    for epoch in 1..=config.epochs {
        let stream = ((round as u64) << 32) | epoch as u64;
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.shuffle(&mut seeds::rng(config.seed, seeds::SHUFFLE, stream));
        let lr = opt.lr();
        let mut acc = Accumulator::new();
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            net.params_mut().zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for (k, &i) in batch.iter().enumerate() {
                let sample = if config.augment {
                    let key = (stream << 20) | (b * config.batch_size + k) as u64;
                    augment(labeled[i], seeds::derive(config.seed, seeds::AUGMENT, key))
                } else {
                    labeled[i].clone()
                };
                let target = sample.target().expect("filtered to labeled samples");
                let (loss, output, grads) = run_pair(net, sample.low(), target, weights, kind, true)?;
                net.params_mut().accumulate(&grads.expect("backward requested"), scale);
                let (ssim, p) = quality(&output, target, weights)?;
                acc.add(loss, ssim, p);
            }
            adam_step(net.params_mut(), opt)?;
        }
        let train = acc.mean();
        report.records.push(EpochMetrics {
            round,
            epoch,
            split: Split::Train,
            loss: train.loss,
            ssim: train.ssim,
            psnr: train.psnr,
            lr,
        });
        let monitored = if has_val {
            let m = evaluate_set(net, validation, weights, kind)?;
            report.records.push(EpochMetrics {
                round,
                epoch,
                split: Split::Val,
                loss: m.loss,
                ssim: m.ssim,
                psnr: m.psnr,
                lr,
            });
            m.ssim
        } else {
            train.ssim
        };
        monitor.push(monitored);
        lr_on_plateau(opt, &monitor);
        report.epochs_run = epoch;
        report.decays = opt.decays() - decays_at_start;
        if config.stop_after_decays.is_some_and(|k| report.decays >= k) {
            report.stopped_on_plateau = true;
            break;
        }
    }
    Ok(report)
}
