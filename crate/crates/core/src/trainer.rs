//! Full-batch training of masked-diffusion and supervised objectives on
//! parity, accuracy evaluation and grokking-gap measurement.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::masking::{corrupt, sample_mask, MaskVector, Schedule};
use crate::model::{Arch, EmbeddingSpec, MlpParams, ModelParams, TransformerParams};
use crate::objective::{md_sample_loss_grad, supervised_sample_loss_grad, PointLoss};
use crate::optim::{Optimizer, OptimizerKind};
use crate::parity::{sample_dataset, sample_heldout, Dataset, TaskSpec};
use crate::report::csv_float;
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Md,
    Supervised,
}

impl std::str::FromStr for Objective {
    type Err = MdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" => Ok(Objective::Md),
            "supervised" | "sup" => Ok(Objective::Supervised),
            other => Err(MdError::Config(format!("unknown objective '{other}'"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Md => "md",
            Objective::Supervised => "supervised",
        })
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub n: usize,
    pub k: usize,
    pub secret_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub t0: f64,
    pub t1: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    /// Hidden width D.
    #[serde(alias = "D")]
    pub width: usize,
    /// Standard deviations of the initial weights are `init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    pub point_loss: PointLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Mlp,
            n: 10,
            k: 4,
            secret_seed: 0,
            n_train: 2000,
            n_val: 2000,
            t0: 0.0,
            t1: 0.2,
            optimizer: OptimizerKind::Sgd,
            lr: 0.05,
            weight_decay: 0.1,
            steps: 2000,
            eval_every: 50,
            seed: 0,
            width: 512,
            init_scale: 1.0,
            point_loss: PointLoss::Mse,
        }
    }
}

pub const PRESETS: [&str; 3] = ["desk", "desk-supervised", "paper-20-6"];

impl TrainConfig {
    /// Named configurations.
    ///
    /// `desk`: (10,4), D=512, AdamW lr 1e-3, weight decay 0.1, U[0,0.2].
    /// `desk-supervised`: `desk` with a memorizable 300-sample training set and 12000 steps.
    /// `paper-20-6`: (20,6), D=2560, full batch 5000, AdamW lr 1e-3, weight decay 0.1, U[0,0.2].
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            optimizer: OptimizerKind::Adamw,
            lr: 1e-3,
            weight_decay: 0.1,
            ..Self::default()
        };
        match name {
            "desk" => Ok(Self {
                steps: 6000,
                init_scale: 6.0,
                ..base
            }),
            "desk-supervised" => Ok(Self {
                n_train: 300,
                steps: 12000,
                init_scale: 6.0,
                ..base
            }),
            "paper-20-6" => Ok(Self {
                n: 20,
                k: 6,
                n_train: 5000,
                n_val: 5000,
                width: 2560,
                steps: 20000,
                eval_every: 100,
                ..base
            }),
            other => Err(MdError::Config(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.t0, self.t1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(MdError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if self.n_train == 0 || self.n_val == 0 {
            return fail("n_train and n_val must be at least 1");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        if self.width == 0 {
            return fail("width must be at least 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail("init_scale must be positive");
        }
        if self.k == 0 || self.k > self.n {
            return Err(MdError::InvalidTask(format!(
                "need 1 <= k <= n, got n={}, k={}",
                self.n, self.k
            )));
        }
        self.schedule()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: [&str; 5] = ["step", "train_loss", "val_loss", "train_acc", "val_acc"];

impl MetricsSeries {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                csv_float(r.train_loss),
                csv_float(r.val_loss),
                csv_float(r.train_acc),
                csv_float(r.val_acc),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().ne(METRICS_HEADER) {
            return Err(MdError::Config("unexpected metrics header".into()));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| MdError::Config(format!("bad number '{s}': {e}")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(MetricsRow {
                step: rec[0]
                    .parse()
                    .map_err(|e| MdError::Config(format!("bad step: {e}")))?,
                train_loss: parse(&rec[1])?,
                val_loss: parse(&rec[2])?,
                train_acc: parse(&rec[3])?,
                val_acc: parse(&rec[4])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Task, training set and held-out validation set of a config.
///
/// Validation inputs never occur in the training set.
pub fn build_data(config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let spec = TaskSpec::random(config.n, config.k, config.secret_seed)?;
    let train = sample_dataset(&spec, config.n_train, config.seed)?;
    let val = sample_heldout(&spec, config.n_val, config.seed, &train)?;
    Ok((train, val))
}

/// Fresh parameters for a config, drawn from the init stream of its seed.
pub fn init_params(config: &TrainConfig) -> ModelParams {
    let d = EmbeddingSpec::new(config.n + 1).d();
    let mut rng = stream_rng(config.seed, Stream::Init);
    match config.arch {
        Arch::Mlp => ModelParams::Mlp(MlpParams::init(
            config.width,
            d,
            config.init_scale,
            &mut rng,
        )),
        Arch::Transformer => ModelParams::Transformer(TransformerParams::init(
            config.width,
            d,
            None,
            config.init_scale,
            &mut rng,
        )),
    }
}

/// Fraction of samples whose parity bit is predicted with the right sign when
/// only the parity position is masked. A zero output counts as wrong.
pub fn evaluate_accuracy(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    let n_prime = dataset.spec.n_prime();
    let spec = EmbeddingSpec::new(n_prime);
    let m = MaskVector::eval(n_prime);
    let mut correct = 0usize;
    for x in &dataset.samples {
        let f = params.parity_outputs(&corrupt(x, &m)?, &spec, &[n_prime])?[0];
        if f * x.label() as f64 > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.samples.len() as f64)
}

/// Objective value on a dataset. The MD value uses one (t, m) draw per sample from `rng`.
fn objective_loss(
    params: &ModelParams,
    dataset: &Dataset,
    objective: Objective,
    schedule: &Schedule,
    point: PointLoss,
    rng: &mut crate::rng::Rng,
) -> Result<f64> {
    let n_prime = dataset.spec.n_prime();
    let mut total = 0.0;
    for x in &dataset.samples {
        total += match objective {
            Objective::Md => {
                let t = schedule.sample_rate(rng);
                let m = sample_mask(t, n_prime, rng);
                md_sample_loss_grad(params, x, t, &m, point, None)?
            }
            Objective::Supervised => supervised_sample_loss_grad(params, x, point, None)?,
        };
    }
    Ok(total / dataset.samples.len() as f64)
}

fn evaluate(
    params: &ModelParams,
    step: u64,
    train: &Dataset,
    val: &Dataset,
    objective: Objective,
    config: &TrainConfig,
    schedule: &Schedule,
) -> Result<MetricsRow> {
    // The same evaluation draws at every step, so loss curves are comparable across steps.
    let mut rng = stream_rng(config.seed, Stream::Eval);
    let train_loss = objective_loss(
        params,
        train,
        objective,
        schedule,
        config.point_loss,
        &mut rng,
    )?;
    let val_loss = objective_loss(
        params,
        val,
        objective,
        schedule,
        config.point_loss,
        &mut rng,
    )?;
    Ok(MetricsRow {
        step,
        train_loss,
        val_loss,
        train_acc: evaluate_accuracy(params, train)?,
        val_acc: evaluate_accuracy(params, val)?,
    })
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub metrics: MetricsSeries,
    pub params: ModelParams,
    pub spec: TaskSpec,
}

/// Trains with full-batch updates, calling `observer` after every evaluation.
///
/// MD steps draw a fresh rate and mask for every sample at every step.
pub fn train_observed(
    config: &TrainConfig,
    objective: Objective,
    observer: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainRun> {
    config.validate()?;
    let schedule = config.schedule()?;
    let (train, val) = build_data(config)?;
    let n_prime = config.n + 1;
    let mut params = init_params(config);
    let mut opt = Optimizer::new(config.optimizer, config.lr, config.weight_decay, &params);
    let mut mask_rng = stream_rng(config.seed, Stream::Masks);
    let mut metrics = MetricsSeries::default();

    let first = evaluate(&params, 0, &train, &val, objective, config, &schedule)?;
    observer(&first);
    metrics.rows.push(first);

    let inv_n = 1.0 / train.samples.len() as f64;
    for step in 1..=config.steps {
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for x in &train.samples {
            loss += match objective {
                Objective::Md => {
                    let t = schedule.sample_rate(&mut mask_rng);
                    let m = sample_mask(t, n_prime, &mut mask_rng);
                    md_sample_loss_grad(&params, x, t, &m, config.point_loss, Some(&mut grads))?
                }
                Objective::Supervised => {
                    supervised_sample_loss_grad(&params, x, config.point_loss, Some(&mut grads))?
                }
            };
        }
        if !loss.is_finite() {
            return Err(MdError::Diverged {
                step,
                detail: format!("training loss {loss}"),
            });
        }
        for g in grads.tensors_mut() {
            g.iter_mut().for_each(|v| *v *= inv_n);
        }
        opt.step(&mut params, &grads);
        if !params.is_finite() {
            return Err(MdError::Diverged {
                step,
                detail: "non-finite parameters".into(),
            });
        }
        if step % config.eval_every == 0 || step == config.steps {
            let row = evaluate(&params, step, &train, &val, objective, config, &schedule)?;
            if !(row.train_loss.is_finite() && row.val_loss.is_finite()) {
                return Err(MdError::Diverged {
                    step,
                    detail: format!("evaluation loss {} / {}", row.train_loss, row.val_loss),
                });
            }
            observer(&row);
            metrics.rows.push(row);
        }
    }
    Ok(TrainRun {
        metrics,
        params,
        spec: train.spec,
    })
}

pub fn train(config: &TrainConfig, objective: Objective) -> Result<TrainRun> {
    train_observed(config, objective, &mut |_| {})
}

pub fn train_md(config: &TrainConfig) -> Result<MetricsSeries> {
    Ok(train(config, Objective::Md)?.metrics)
}

pub fn train_supervised(config: &TrainConfig) -> Result<MetricsSeries> {
    Ok(train(config, Objective::Supervised)?.metrics)
}

/// Sustained threshold crossings of train and validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrokkingGap {
    pub step_train: Option<u64>,
    pub step_val: Option<u64>,
    /// step_val - step_train, infinite when either crossing is absent.
    pub gap: f64,
}

/// Number of consecutive evaluations that must all reach the threshold.
pub const SUSTAIN: usize = 3;

fn sustained_crossing(
    metrics: &MetricsSeries,
    threshold: f64,
    acc: impl Fn(&MetricsRow) -> f64,
) -> Option<u64> {
    metrics
        .rows
        .windows(SUSTAIN)
        .find(|w| w.iter().all(|r| acc(r) >= threshold))
        .map(|w| w[0].step)
}

pub fn grokking_gap(metrics: &MetricsSeries, threshold: f64) -> Result<GrokkingGap> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(MdError::Config(format!(
            "threshold must lie in (0.5, 1], got {threshold}"
        )));
    }
    let step_train = sustained_crossing(metrics, threshold, |r| r.train_acc);
    let step_val = sustained_crossing(metrics, threshold, |r| r.val_acc);
    let gap = match (step_train, step_val) {
        (Some(a), Some(b)) => b as f64 - a as f64,
        _ => f64::INFINITY,
    };
    Ok(GrokkingGap {
        step_train,
        step_val,
        gap,
    })
}

/// First evaluated step with perfect training accuracy.
pub fn train_convergence_step(metrics: &MetricsSeries) -> Option<u64> {
    metrics
        .rows
        .iter()
        .find(|r| r.train_acc == 1.0)
        .map(|r| r.step)
}

/// Stretch of evaluations with perfect training accuracy and validation accuracy below a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorizationWindow {
    pub start: u64,
    pub end: u64,
}

impl MemorizationWindow {
    pub fn length(&self) -> u64 {
        self.end - self.start
    }
}

/// Longest contiguous run of evaluations with train_acc = 1 and val_acc < `val_below`.
pub fn memorization_window(metrics: &MetricsSeries, val_below: f64) -> Option<MemorizationWindow> {
    let mut best: Option<MemorizationWindow> = None;
    let mut current: Option<MemorizationWindow> = None;
    for r in &metrics.rows {
        if r.train_acc == 1.0 && r.val_acc < val_below {
            let w = current.get_or_insert(MemorizationWindow {
                start: r.step,
                end: r.step,
            });
            w.end = r.step;
            if best.is_none_or(|b| w.length() > b.length()) {
                best = Some(*w);
            }
        } else {
            current = None;
        }
    }
    best
}

/// Summary JSON of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub objective: Objective,
    pub config: TrainConfig,
    pub secret: Vec<usize>,
    pub final_metrics: Option<MetricsRow>,
    pub threshold: f64,
    pub grokking: GrokkingGap,
    pub train_convergence_step: Option<u64>,
    pub memorization_window: Option<MemorizationWindow>,
}

/// Validation accuracy below which a memorizing model counts as not generalizing.
pub const CHANCE_BAND: f64 = 0.6;

impl RunSummary {
    pub fn new(
        objective: Objective,
        config: &TrainConfig,
        run: &TrainRun,
        threshold: f64,
    ) -> Result<Self> {
        Ok(Self {
            objective,
            config: config.clone(),
            secret: run.spec.secret().to_vec(),
            final_metrics: run.metrics.last().copied(),
            threshold,
            grokking: grokking_gap(&run.metrics, threshold)?,
            train_convergence_step: train_convergence_step(&run.metrics),
            memorization_window: memorization_window(&run.metrics, CHANCE_BAND),
        })
    }
}

/// Gap comparison of an MD run against a supervised run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapComparison {
    pub threshold: f64,
    pub md: GrokkingGap,
    pub supervised: GrokkingGap,
    /// supervised gap / MD gap.
    pub ratio: f64,
}

impl GapComparison {
    pub fn new(md: &MetricsSeries, supervised: &MetricsSeries, threshold: f64) -> Result<Self> {
        let md = grokking_gap(md, threshold)?;
        let supervised = grokking_gap(supervised, threshold)?;
        // A non-positive MD gap means validation kept pace with training.
        let ratio = supervised.gap / md.gap.max(1.0);
        Ok(Self {
            threshold,
            md,
            supervised,
            ratio,
        })
    }
}

/// One (range, repeat) cell of a schedule sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t0: f64,
    pub t1: f64,
    pub repeat: u64,
    pub seed: u64,
    pub step_train: Option<u64>,
    pub step_val: Option<u64>,
    pub gap: f64,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    pub error: Option<String>,
}

/// Trains MD once per (range, repeat) on up to `workers` threads.
///
/// Repeat r of every range uses the seed derived from (base seed, r), so all
/// ranges see the same data and initializations and results do not depend on
/// scheduling order.
pub fn sweep_schedules(
    base: &TrainConfig,
    ranges: &[(f64, f64)],
    repeats: u64,
    threshold: f64,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    grokking_gap(&MetricsSeries::default(), threshold)?;
    for &(t0, t1) in ranges {
        Schedule::new(t0, t1)?;
    }
    let cells: Vec<(f64, f64, u64)> = ranges
        .iter()
        .flat_map(|&(a, b)| (0..repeats).map(move |r| (a, b, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| MdError::Config(format!("worker pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|&(t0, t1, repeat)| {
                let seed = if repeats == 1 {
                    base.seed
                } else {
                    derive_seed(base.seed, repeat)
                };
                let config = TrainConfig {
                    t0,
                    t1,
                    seed,
                    ..base.clone()
                };
                let mut row = SweepRow {
                    t0,
                    t1,
                    repeat,
                    seed,
                    step_train: None,
                    step_val: None,
                    gap: f64::INFINITY,
                    final_train_acc: f64::NAN,
                    final_val_acc: f64::NAN,
                    error: None,
                };
                match train_md(&config) {
                    Ok(m) => {
                        let g = grokking_gap(&m, threshold).expect("threshold checked");
                        let last = m.last().expect("step 0 is always recorded");
                        row.step_train = g.step_train;
                        row.step_val = g.step_val;
                        row.gap = g.gap;
                        row.final_train_acc = last.train_acc;
                        row.final_val_acc = last.val_acc;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row
            })
            .collect()
    });
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t0",
        "t1",
        "repeat",
        "seed",
        "step_train",
        "step_val",
        "gap",
        "final_train_acc",
        "final_val_acc",
        "error",
    ])?;
    let opt = |s: Option<u64>| s.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            csv_float(r.t0),
            csv_float(r.t1),
            r.repeat.to_string(),
            r.seed.to_string(),
            opt(r.step_train),
            opt(r.step_val),
            csv_float(r.gap),
            csv_float(r.final_train_acc),
            csv_float(r.final_val_acc),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
