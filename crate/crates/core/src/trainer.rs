//! Per-pixel linear classifier trained by full-batch gradient descent.
//!
//! The model is `z = sum_k w_k * f_k + b` over the feature channels of each
//! pixel. The loss gradient with respect to the logits is pushed through the
//! linear map, averaged over the training samples, and applied as one step
//! per epoch. Weights start at zero and the bias at the logit of the training
//! foreground rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{check_shape, logit, Grid2D};
use crate::losses::{loss_value_and_grad, LossKind, LossParams};
use crate::metrics::{binarize, confusion, metrics, ConfusionCounts, MetricReport, DEFAULT_THRESHOLD};
use crate::synth::{DatasetSpec, SynthSample};

pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub loss_params: LossParams,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dataset: Vec<SynthSample>,
    /// Fraction of samples held out, taken from the end of the dataset.
    pub val_split: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl TrainConfig {
    pub fn new(loss_kind: LossKind, loss_params: LossParams, dataset: Vec<SynthSample>) -> Self {
        TrainConfig {
            loss_kind,
            loss_params,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            dataset,
            val_split: 0.25,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_params.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(param(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(param("epochs must be >= 1"));
        }
        if self.dataset.len() < 2 {
            return Err(param("training needs at least 2 samples"));
        }
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(param(format!("val_split must lie in (0, 1), got {}", self.val_split)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(param(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        let channels = self.dataset[0].features.len();
        if self.dataset.iter().any(|s| s.features.len() != channels) {
            return Err(param("all samples need the same number of feature channels"));
        }
        Ok(())
    }

    /// Number of training samples; the remainder is validation.
    pub fn n_train(&self) -> usize {
        let n = self.dataset.len();
        let n_train = ((1.0 - self.val_split) * n as f64).round() as usize;
        n_train.clamp(1, n - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PixelModel {
    fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Logits `z[i] = sum_k w_k * f_k[i] + b`.
pub fn forward(model: &PixelModel, features: &[Grid2D]) -> Result<Grid2D> {
    if features.len() != model.weights.len() {
        return Err(param(format!(
            "model has {} weights but {} feature channels were given",
            model.weights.len(),
            features.len()
        )));
    }
    let first = features
        .first()
        .ok_or_else(|| param("forward needs at least one feature channel"))?;
    let mut z = Grid2D::filled(first.height(), first.width(), model.bias)?;
    for (w, f) in model.weights.iter().zip(features) {
        check_shape(first.shape(), f.shape())?;
        for (zi, fi) in z.data_mut().iter_mut().zip(f.data()) {
            *zi += w * fi;
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss at the parameters entering the epoch.
    pub train_loss: f64,
    /// Mean validation loss after the epoch's update.
    pub val_loss: f64,
    pub val_metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub loss_kind: LossKind,
    pub loss_params: LossParams,
    pub learning_rate: f64,
    pub epochs: usize,
    pub val_split: f64,
    pub threshold: f64,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: ConfigEcho,
    pub history: Vec<EpochRecord>,
    pub model: PixelModel,
}

impl TrainReport {
    pub fn final_metrics(&self) -> MetricReport {
        self.history.last().expect("at least one epoch").val_metrics
    }
}

struct Evaluation {
    loss: f64,
    grad_weights: Vec<f64>,
    grad_bias: f64,
}

fn evaluate(cfg: &TrainConfig, model: &PixelModel, samples: &[SynthSample]) -> Result<Evaluation> {
    let mut eval = Evaluation {
        loss: 0.0,
        grad_weights: vec![0.0; model.weights.len()],
        grad_bias: 0.0,
    };
    for s in samples {
        let z = forward(model, &s.features)?;
        let out = loss_value_and_grad(cfg.loss_kind, &z, &s.mask, &cfg.loss_params)?;
        eval.loss += out.value;
        let gz = out.grad_logits.data();
        eval.grad_bias += gz.iter().sum::<f64>();
        for (gw, f) in eval.grad_weights.iter_mut().zip(&s.features) {
            *gw += gz.iter().zip(f.data()).map(|(g, x)| g * x).sum::<f64>();
        }
    }
    let n = samples.len() as f64;
    eval.loss /= n;
    eval.grad_bias /= n;
    eval.grad_weights.iter_mut().for_each(|g| *g /= n);
    Ok(eval)
}

fn validation_metrics(cfg: &TrainConfig, model: &PixelModel, samples: &[SynthSample]) -> Result<MetricReport> {
    let mut counts = ConfusionCounts::default();
    for s in samples {
        let prob = forward(model, &s.features)?.sigmoid();
        counts = counts + confusion(&binarize(&prob, cfg.threshold)?, &s.mask)?;
    }
    Ok(metrics(&counts))
}

/// Initial parameters: zero weights, bias at the logit of the training foreground rate.
pub fn initial_model(cfg: &TrainConfig) -> PixelModel {
    let train = &cfg.dataset[..cfg.n_train()];
    let (ones, total) = train.iter().fold((0usize, 0usize), |(o, t), s| {
        (o + s.mask.count_ones(), t + s.mask.len())
    });
    PixelModel {
        weights: vec![0.0; train[0].features.len()],
        bias: logit(ones as f64 / total as f64, cfg.loss_params.eps),
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n_train = cfg.n_train();
    let (train_set, val_set) = cfg.dataset.split_at(n_train);
    let mut model = initial_model(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let step = evaluate(cfg, &model, train_set)?;
        if !step.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                what: format!("training loss is {}", step.loss),
            });
        }
        for (w, g) in model.weights.iter_mut().zip(&step.grad_weights) {
            *w -= cfg.learning_rate * g;
        }
        model.bias -= cfg.learning_rate * step.grad_bias;
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                what: "model parameters became non-finite".into(),
            });
        }
        let val = evaluate(cfg, &model, val_set)?;
        if !val.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                what: format!("validation loss is {}", val.loss),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: step.loss,
            val_loss: val.loss,
            val_metrics: validation_metrics(cfg, &model, val_set)?,
        });
    }

    Ok(TrainReport {
        seed: cfg.seed,
        config: ConfigEcho {
            loss_kind: cfg.loss_kind,
            loss_params: cfg.loss_params,
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            val_split: cfg.val_split,
            threshold: cfg.threshold,
            n_train,
            n_val: val_set.len(),
        },
        history,
        model,
    })
}

/// One row of a loss comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub kind: LossKind,
    pub params: LossParams,
}

impl Variant {
    pub fn new(kind: LossKind, params: LossParams) -> Self {
        Variant {
            label: kind.name().to_string(),
            kind,
            params,
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Number of runs where the metric was defined.
    pub n: usize,
}

fn stats(values: impl Iterator<Item = Option<f64>>) -> MetricStats {
    let defined: Vec<f64> = values.flatten().collect();
    let n = defined.len();
    if n == 0 {
        return MetricStats::default();
    }
    let mean = defined.iter().sum::<f64>() / n as f64;
    // sample standard deviation; a single run has none
    let std = if n > 1 {
        (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricStats {
        mean: Some(mean),
        std: Some(std),
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub kind: LossKind,
    pub params: LossParams,
    pub runs: usize,
    pub iou: MetricStats,
    pub f1: MetricStats,
    pub recall: MetricStats,
    pub precision: MetricStats,
    /// Final validation metrics of each successful run, by repeat.
    pub per_run: Vec<MetricReport>,
    /// `"repeat <r> (seed <s>): <error>"` for each failed run.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub base_seed: u64,
    pub repeats: usize,
    pub rows: Vec<ComparisonRow>,
}

/// Trains every variant `repeats` times; repeat `r` uses seed `base.seed + r`
/// for both the generated dataset and the run. `base.dataset` is ignored.
/// Failed runs are recorded in their row instead of aborting the sweep.
pub fn compare_losses(
    base: &TrainConfig,
    data: &DatasetSpec,
    variants: &[Variant],
    repeats: usize,
) -> Result<ComparisonTable> {
    if repeats == 0 {
        return Err(param("repeats must be >= 1"));
    }
    let seeds: Vec<u64> = (0..repeats as u64).map(|r| base.seed.wrapping_add(r)).collect();
    let datasets = seeds
        .par_iter()
        .map(|&s| data.build(s))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..repeats).map(move |r| (v, r)))
        .collect();
    let results: Vec<Result<TrainReport>> = cells
        .par_iter()
        .map(|&(v, r)| {
            let cfg = TrainConfig {
                loss_kind: variants[v].kind,
                loss_params: variants[v].params,
                dataset: datasets[r].clone(),
                seed: seeds[r],
                ..base.clone()
            };
            train(&cfg)
        })
        .collect();

    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let mut per_run = Vec::new();
            let mut failures = Vec::new();
            for r in 0..repeats {
                match &results[v * repeats + r] {
                    Ok(report) => per_run.push(report.final_metrics()),
                    Err(e) => failures.push(format!("repeat {r} (seed {}): {e}", seeds[r])),
                }
            }
            ComparisonRow {
                label: variant.label.clone(),
                kind: variant.kind,
                params: variant.params,
                runs: per_run.len(),
                iou: stats(per_run.iter().map(|m| m.iou)),
                f1: stats(per_run.iter().map(|m| m.f1)),
                recall: stats(per_run.iter().map(|m| m.recall)),
                precision: stats(per_run.iter().map(|m| m.precision)),
                per_run,
                failures,
            }
        })
        .collect();

    Ok(ComparisonTable {
        base_seed: base.seed,
        repeats,
        rows,
    })
}
