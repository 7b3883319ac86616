//! One function per subcommand. Each writes its result to stdout and returns
//! whether the run counts as a success.

use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use focalmargin::audit::{reduce_audit, DEFAULT_TOLERANCE};
use focalmargin::format::write_grid;
use focalmargin::gradcheck::{self, GradCheckOptions};
use focalmargin::losses::entropy_terms;
use focalmargin::metrics::{confusion, metrics, ConfusionCounts, DEFAULT_THRESHOLD};
use focalmargin::synth::{load_manifest, write_dataset};
use focalmargin::trainer::{
    compare_losses, train, MetricStats, TrainConfig, Variant, DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
};
use focalmargin::{loss_value_and_grad, LossKind, MetricReport};
use serde::Serialize;

use crate::args::{
    parse_m_list, parse_variant, read_grid_file, read_mask_file, read_prediction_file, LossArgs,
    SynthArgs,
};

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn emit_json<T: Serialize>(body: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &Envelope { schema: "v1", body })?;
    writeln!(out)?;
    Ok(())
}

fn csv_writer() -> csv::Writer<io::StdoutLock<'static>> {
    csv::Writer::from_writer(io::stdout().lock())
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Rounds to 15 significant digits.
fn sig15(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format!("{v:.14e}").parse().expect("formatted float parses")
}

#[derive(Debug, Args)]
pub struct LossCmd {
    /// Loss kind, e.g. BCE, ASYM_FOCAL_MARGIN, OURS (case-insensitive)
    #[arg(long)]
    kind: LossKind,
    #[command(flatten)]
    loss: LossArgs,
    /// Logit grid in text format
    #[arg(long)]
    logits: PathBuf,
    /// Ground-truth mask: binary PGM or a 0/1 grid text file
    #[arg(long)]
    mask: PathBuf,
    /// Write the gradient with respect to the logits here, in grid text format
    #[arg(long)]
    grad_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LossResult {
    kind: LossKind,
    params: focalmargin::LossParams,
    height: usize,
    width: usize,
    value: f64,
    grad_out: Option<String>,
}

pub fn loss(cmd: &LossCmd) -> Result<bool> {
    let params = cmd.loss.resolve()?;
    let z = read_grid_file(&cmd.logits)?;
    let t = read_mask_file(&cmd.mask)?;
    let out = loss_value_and_grad(cmd.kind, &z, &t, &params)?;
    if let Some(path) = &cmd.grad_out {
        write_grid(path, &out.grad_logits)?;
    }
    emit_json(&LossResult {
        kind: cmd.kind,
        params,
        height: z.height(),
        width: z.width(),
        value: sig15(out.value),
        grad_out: cmd.grad_out.as_ref().map(|p| p.display().to_string()),
    })?;
    Ok(true)
}

#[derive(Debug, Args)]
pub struct MarginTableCmd {
    /// Entropy loss kind to tabulate
    #[arg(long, default_value = "ASYM_FOCAL_MARGIN")]
    kind: LossKind,
    /// Comma-separated margins; duplicates are dropped and the list sorted
    #[arg(long, default_value = "0,0.5,1.0,1.5")]
    m_list: String,
    #[command(flatten)]
    loss: LossArgs,
    /// Logit grid in text format
    #[arg(long)]
    logits: PathBuf,
    /// Ground-truth mask: binary PGM or a 0/1 grid text file
    #[arg(long)]
    mask: PathBuf,
    /// Print CSV rows (m,value,foreground,background) instead of JSON
    #[arg(long)]
    csv: bool,
}

#[derive(Serialize)]
struct MarginRow {
    m: f64,
    value: f64,
    foreground: f64,
    background: f64,
}

#[derive(Serialize)]
struct MarginTable {
    kind: LossKind,
    params: focalmargin::LossParams,
    rows: Vec<MarginRow>,
}

pub fn margin_table(cmd: &MarginTableCmd) -> Result<bool> {
    let base = cmd.loss.resolve()?;
    let requested = parse_m_list(&cmd.m_list)?;
    if requested.is_empty() {
        bail!(focalmargin::Error::Usage("--m-list is empty".into()));
    }
    let mut ms = requested.clone();
    ms.sort_by(f64::total_cmp);
    ms.dedup();
    if ms != requested {
        eprintln!("note: --m-list normalized to {ms:?} (sorted, duplicates removed)");
    }
    let z = read_grid_file(&cmd.logits)?;
    let t = read_mask_file(&cmd.mask)?;
    let rows = ms
        .iter()
        .map(|&m| {
            let p = base.with_margin(m);
            let terms = entropy_terms(cmd.kind, &z, &t, &p)?;
            let value = loss_value_and_grad(cmd.kind, &z, &t, &p)?.value;
            Ok(MarginRow {
                m,
                value,
                foreground: terms.foreground,
                background: terms.background,
            })
        })
        .collect::<focalmargin::Result<Vec<_>>>()?;
    if cmd.csv {
        let mut w = csv_writer();
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    } else {
        emit_json(&MarginTable {
            kind: cmd.kind,
            params: base,
            rows,
        })?;
    }
    Ok(true)
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    /// Loss kind to check; repeat for several. Defaults to every kind.
    #[arg(long)]
    kind: Vec<LossKind>,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    /// Relative error bound per gradient entry
    #[arg(long, default_value_t = 1e-5)]
    rel_tol: f64,
    /// Absolute error floor; an entry passes if either bound holds
    #[arg(long, default_value_t = 1e-8)]
    abs_tol: f64,
    /// Central-difference step
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print one CSV row per kind instead of JSON
    #[arg(long)]
    csv: bool,
}

#[derive(Serialize)]
struct GradcheckSummary {
    pass: bool,
    reports: Vec<gradcheck::GradCheckReport>,
}

pub fn gradcheck(cmd: &GradcheckCmd) -> Result<bool> {
    let params = cmd.loss.resolve()?;
    let opts = GradCheckOptions {
        trials: cmd.trials,
        height: cmd.height,
        width: cmd.width,
        rel_tol: cmd.rel_tol,
        abs_tol: cmd.abs_tol,
        h: cmd.h,
        seed: cmd.seed,
    };
    let kinds: Vec<LossKind> = if cmd.kind.is_empty() {
        LossKind::ALL.to_vec()
    } else {
        cmd.kind.clone()
    };
    let reports = kinds
        .iter()
        .map(|&k| gradcheck::check(k, &params, &opts))
        .collect::<focalmargin::Result<Vec<_>>>()?;
    let pass = reports.iter().all(|r| r.pass);
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!(
            "gradcheck failed for {}: max rel err {:e} at trial {} index {:?}",
            r.kind, r.max_rel_err, r.worst_trial, r.worst_index
        );
    }
    if cmd.csv {
        let mut w = csv_writer();
        w.write_record(["kind", "max_rel_err", "max_abs_err", "checked", "skipped", "pass"])?;
        for r in &reports {
            w.write_record([
                r.kind.name().to_string(),
                num(r.max_rel_err),
                num(r.max_abs_err),
                r.checked.to_string(),
                r.skipped.to_string(),
                r.pass.to_string(),
            ])?;
        }
        w.flush()?;
    } else {
        emit_json(&GradcheckSummary { pass, reports })?;
    }
    Ok(pass)
}

#[derive(Debug, Args)]
pub struct AuditCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per reduction edge
    #[arg(long, default_value_t = 500)]
    trials: usize,
    /// Largest relative error accepted on the value and every gradient entry
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Print one CSV row per edge instead of JSON
    #[arg(long)]
    csv: bool,
}

pub fn reduce_audit_cmd(cmd: &AuditCmd) -> Result<bool> {
    let report = reduce_audit(cmd.seed, cmd.trials, cmd.tolerance)?;
    for e in report.edges.iter().filter(|e| !e.pass) {
        eprintln!("edge {} failed: max rel err {:e}", e.edge, e.max_rel_err);
    }
    if cmd.csv {
        let mut w = csv_writer();
        for e in &report.edges {
            w.serialize(e)?;
        }
        w.flush()?;
    } else {
        emit_json(&report)?;
    }
    Ok(report.pass)
}

#[derive(Debug, Args)]
pub struct MetricsCmd {
    /// Prediction: binary PGM, or a probability grid text file thresholded at --threshold.
    /// Repeat to micro-average over several images.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Ground truth mask, paired with --pred in order
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// Probabilities at or above this are foreground
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Report ratio metrics in percent
    #[arg(long)]
    percent: bool,
    /// Print CSV rows (one per image plus a micro-averaged total) instead of JSON
    #[arg(long)]
    csv: bool,
}

#[derive(Serialize)]
struct ImageMetrics {
    pred: String,
    truth: String,
    counts: ConfusionCounts,
    metrics: MetricReport,
}

#[derive(Serialize)]
struct MetricsResult {
    threshold: f64,
    percent: bool,
    counts: ConfusionCounts,
    metrics: MetricReport,
    per_image: Vec<ImageMetrics>,
}

fn scaled(m: MetricReport, percent: bool) -> MetricReport {
    if percent {
        m.as_percent()
    } else {
        m
    }
}

pub fn metrics_cmd(cmd: &MetricsCmd) -> Result<bool> {
    if cmd.pred.len() != cmd.truth.len() {
        bail!(focalmargin::Error::Usage(format!(
            "{} --pred files but {} --truth files",
            cmd.pred.len(),
            cmd.truth.len()
        )));
    }
    let mut total = ConfusionCounts::default();
    let mut per_image = Vec::with_capacity(cmd.pred.len());
    for (p, t) in cmd.pred.iter().zip(&cmd.truth) {
        let pred = read_prediction_file(p, cmd.threshold)?;
        let truth = read_mask_file(t)?;
        let counts = confusion(&pred, &truth)?;
        total = total + counts;
        per_image.push(ImageMetrics {
            pred: p.display().to_string(),
            truth: t.display().to_string(),
            counts,
            metrics: scaled(metrics(&counts), cmd.percent),
        });
    }
    let overall = scaled(metrics(&total), cmd.percent);
    if cmd.csv {
        let mut w = csv_writer();
        w.write_record(["image", "tp", "fp", "fn", "tn", "iou", "f1", "recall", "precision"])?;
        let rows = per_image
            .iter()
            .map(|im| (im.pred.clone(), im.counts, im.metrics))
            .chain(std::iter::once(("total".to_string(), total, overall)));
        for (name, c, m) in rows {
            w.write_record([
                name,
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                opt(m.iou),
                opt(m.f1),
                opt(m.recall),
                opt(m.precision),
            ])?;
        }
        w.flush()?;
    } else {
        emit_json(&MetricsResult {
            threshold: cmd.threshold,
            percent: cmd.percent,
            counts: total,
            metrics: overall,
            per_image,
        })?;
    }
    Ok(true)
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Output directory; created if missing
    #[arg(long)]
    out: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[command(flatten)]
    synth: SynthArgs,
}

pub fn synth(cmd: &SynthCmd) -> Result<bool> {
    let manifest = write_dataset(&cmd.out, &cmd.synth.config()?, cmd.count)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    writeln!(out)?;
    Ok(true)
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    /// Step size of full-batch gradient descent
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    /// Fraction of samples held out for validation (taken from the end)
    #[arg(long, default_value_t = 0.25)]
    val_split: f64,
    /// Probabilities at or above this are foreground
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Number of synthetic samples to generate
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Report ratio metrics in percent
    #[arg(long)]
    percent: bool,
    /// Print CSV instead of JSON
    #[arg(long)]
    csv: bool,
}

impl TrainingArgs {
    fn config(&self, kind: LossKind, params: focalmargin::LossParams, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            val_split: self.val_split,
            threshold: self.threshold,
            seed,
            ..TrainConfig::new(kind, params, Vec::new())
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Loss kind to train with
    #[arg(long, default_value = "OURS")]
    kind: LossKind,
    #[command(flatten)]
    loss: LossArgs,
    /// Train on a dataset written by `synth` instead of generating one
    #[arg(long, value_name = "MANIFEST")]
    data: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    synth: SynthArgs,
}

pub fn train_cmd(cmd: &TrainCmd) -> Result<bool> {
    let params = cmd.loss.resolve()?;
    let dataset = match &cmd.data {
        Some(path) => load_manifest(path)?,
        None => cmd.synth.dataset(cmd.training.samples)?.build(cmd.synth.seed)?,
    };
    let cfg = TrainConfig {
        dataset,
        ..cmd.training.config(cmd.kind, params, cmd.synth.seed)
    };
    let mut report = train(&cfg)?;
    if cmd.training.percent {
        for rec in &mut report.history {
            rec.val_metrics = rec.val_metrics.as_percent();
        }
    }
    if cmd.training.csv {
        let mut w = csv_writer();
        w.write_record(["epoch", "train_loss", "val_loss", "iou", "f1", "recall", "precision"])?;
        for rec in &report.history {
            let m = rec.val_metrics;
            w.write_record([
                rec.epoch.to_string(),
                num(rec.train_loss),
                num(rec.val_loss),
                opt(m.iou),
                opt(m.f1),
                opt(m.recall),
                opt(m.precision),
            ])?;
        }
        w.flush()?;
    } else {
        emit_json(&report)?;
    }
    Ok(true)
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    /// Variant as KIND or KIND,key=value,... (keys are loss parameter names, applied over
    /// the shared loss flags). Repeatable.
    /// [default: HYBRID_FOCAL and OURS,margin=1.5]
    #[arg(long)]
    variant: Vec<String>,
    /// Training repeats per variant; repeat r uses seed --seed + r
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[command(flatten)]
    loss: LossArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    synth: SynthArgs,
}

fn scale_stats(s: MetricStats) -> MetricStats {
    MetricStats {
        mean: s.mean.map(|v| v * 100.0),
        std: s.std.map(|v| v * 100.0),
        n: s.n,
    }
}

pub fn sweep(cmd: &SweepCmd) -> Result<bool> {
    let base_params = cmd.loss.resolve()?;
    let specs: Vec<String> = if cmd.variant.is_empty() {
        vec!["HYBRID_FOCAL".into(), "OURS,margin=1.5".into()]
    } else {
        cmd.variant.clone()
    };
    let variants = specs
        .iter()
        .map(|s| {
            let (kind, params) = parse_variant(s, &base_params)?;
            Ok(Variant::new(kind, params).labelled(s.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let base = cmd
        .training
        .config(LossKind::Bce, base_params, cmd.synth.seed);
    let data = cmd.synth.dataset(cmd.training.samples)?;
    let mut table = compare_losses(&base, &data, &variants, cmd.repeats)?;
    for row in &mut table.rows {
        for f in &row.failures {
            eprintln!("warning: {}: {f}", row.label);
        }
        if cmd.training.percent {
            row.iou = scale_stats(row.iou);
            row.f1 = scale_stats(row.f1);
            row.recall = scale_stats(row.recall);
            row.precision = scale_stats(row.precision);
            row.per_run.iter_mut().for_each(|m| *m = m.as_percent());
        }
    }
    if cmd.training.csv {
        let mut w = csv_writer();
        w.write_record([
            "label", "kind", "runs", "failures", "iou_mean", "iou_std", "f1_mean", "f1_std",
            "recall_mean", "recall_std", "precision_mean", "precision_std",
        ])?;
        for row in &table.rows {
            let mut rec = vec![
                row.label.clone(),
                row.kind.name().to_string(),
                row.runs.to_string(),
                row.failures.len().to_string(),
            ];
            for s in [row.iou, row.f1, row.recall, row.precision] {
                rec.push(opt(s.mean));
                rec.push(opt(s.std));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
    } else {
        emit_json(&table)?;
    }
    Ok(true)
}
