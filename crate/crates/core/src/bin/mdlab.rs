use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mdlab::landscape::{
    collapse_check, enumerate_configs, pure_signal_configs, write_energy_scan_csv,
};
use mdlab::masking::{signal_probability, Schedule};
use mdlab::model::{save_checkpoint, Arch};
use mdlab::objective::{decomposition_check, PointLoss};
use mdlab::optim::OptimizerKind;
use mdlab::parity::{Dataset, TaskSpec};
use mdlab::report::{to_json_string, write_json, RunManifest};
use mdlab::schedule::{
    complexity_optimal_schedule, moments, sample_complexity_bound, signal_optimal_rate,
};
use mdlab::textlab::{interval_sweep, Corpus, TextConfig};
use mdlab::trainer::{
    sweep_schedules, train_observed, write_sweep_csv, GapComparison, Objective, RunSummary,
    TrainConfig,
};
use mdlab::{MdError, Result};

/// Masked-diffusion parity laboratory.
#[derive(Parser)]
#[command(name = "mdlab", version, about)]
struct Cli {
    /// Master seed. Falls back to $MDLAB_SEED, then to the config file or preset.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on parity with the MD and/or supervised objective.
    ParityTrain(ParityTrainArgs),
    /// Check that the MD loss minus its Signal and Noise terms is parameter-independent.
    DecomposeCheck(DecomposeArgs),
    /// Signal-optimal and complexity-optimal masking schedules.
    ScheduleOpt(ScheduleArgs),
    /// Energy E(W) over random first layers.
    EnergyScan(EnergyArgs),
    /// Interval sweep of the masked-diffusion character model.
    Textlab(TextArgs),
    /// Train MD over a grid of uniform schedules.
    Sweep(SweepArgs),
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Named configuration: desk, desk-supervised, paper-20-6.
    #[arg(long)]
    preset: Option<String>,
    /// JSON file with TrainConfig fields; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    secret_seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Hidden width D.
    #[arg(long, visible_alias = "D")]
    width: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    point_loss: Option<PointLoss>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveChoice {
    Md,
    Supervised,
    Both,
}

#[derive(Args)]
struct ParityTrainArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, value_enum, default_value = "md")]
    objective: ObjectiveChoice,
    /// Accuracy threshold for the grokking gap.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Training-set size of the supervised run when --objective both.
    #[arg(long)]
    sup_n_train: Option<usize>,
    /// Step count of the supervised run when --objective both.
    #[arg(long)]
    sup_steps: Option<u64>,
    /// Save final parameters per objective (binary checkpoint).
    #[arg(long)]
    checkpoint: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    secret_seed: u64,
    /// Point-mass rate; overrides --t0/--t1.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long, default_value_t = 0.5)]
    t1: f64,
    /// Random parameter draws.
    #[arg(long, default_value_t = 5)]
    draws: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Deviation above which the command fails.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    k: usize,
    /// Input length for the sample bound.
    #[arg(long, requires = "delta")]
    n: Option<usize>,
    /// Failure probability for the sample bound.
    #[arg(long, requires = "n")]
    delta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    /// Only single-secret-position masks at a point rate.
    PureSignal,
    /// Every mask under the schedule.
    Mixed,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    secret_seed: u64,
    #[arg(long, value_enum, default_value = "pure-signal")]
    regime: Regime,
    /// Rate of the pure-signal configurations.
    #[arg(long, default_value_t = 0.2)]
    t: f64,
    /// Schedule of the mixed configurations.
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long, default_value_t = 0.5)]
    t1: f64,
    #[arg(long, visible_alias = "D", default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    draws: usize,
}

#[derive(Args)]
struct TextArgs {
    /// UTF-8 text file; the bundled text when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON file with TextConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long, visible_alias = "D")]
    width: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_blocks: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Comma-separated t0:t1 ranges.
    #[arg(long, default_value = "0:0.1,0:0.2,0:0.3,0:0.4")]
    ranges: String,
    #[arg(long, default_value_t = 1)]
    repeats: u64,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MDLAB_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| MdError::Config(format!("MDLAB_SEED is not an integer: '{s}'"))),
        Err(_) => Ok(None),
    }
}

/// Overlays the keys of a JSON object onto a serializable base.
fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, path: &Path) -> Result<T> {
    let mut merged = serde_json::to_value(base)?;
    let file: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let Value::Object(fields) = file else {
        return Err(MdError::Config(format!(
            "{} must hold a JSON object",
            path.display()
        )));
    };
    let target = merged
        .as_object_mut()
        .expect("configs serialize to objects");
    for (k, v) in fields {
        let key = if k == "D" { "width".to_string() } else { k };
        target.insert(key, v);
    }
    Ok(serde_json::from_value(merged)?)
}

/// Defaults, then preset, then config file, then flags.
fn resolve_train_config(f: &TrainFlags, seed: Option<u64>) -> Result<TrainConfig> {
    let mut c = match &f.preset {
        Some(name) => TrainConfig::preset(name)?,
        None => TrainConfig::default(),
    };
    if let Some(path) = &f.config {
        c = overlay(&c, path)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = f.$field.clone() { c.$field = v; } )* };
    }
    set!(
        arch,
        n,
        k,
        secret_seed,
        n_train,
        n_val,
        t0,
        t1,
        optimizer,
        lr,
        weight_decay,
        steps,
        eval_every,
        width,
        init_scale,
        point_loss
    );
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

struct Session {
    out: PathBuf,
    manifest: RunManifest,
    start: Instant,
}

impl Session {
    fn new(out: &Path, command: &str, config: Value, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest::new(command, config, seed),
            start: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.manifest.record(&p);
        p
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        let p = self
            .out
            .join(format!("manifest_{}.json", self.manifest.command));
        write_json(&self.manifest, &p)?;
        eprintln!("wrote {}", p.display());
        Ok(())
    }
}

fn progress(tag: &'static str, every: u64) -> impl FnMut(&mdlab::trainer::MetricsRow) {
    move |r| {
        if r.step % every == 0 {
            eprintln!("[{tag}] step {:>7} train_loss {:.4e} val_loss {:.4e} train_acc {:.4} val_acc {:.4}", r.step, r.train_loss, r.val_loss, r.train_acc, r.val_acc);
        }
    }
}

fn cmd_parity_train(a: &ParityTrainArgs, cli: &Cli, seed: Option<u64>) -> Result<()> {
    let config = resolve_train_config(&a.train, seed)?;
    let mut runs = Vec::new();
    match a.objective {
        ObjectiveChoice::Md => runs.push((Objective::Md, config.clone())),
        ObjectiveChoice::Supervised => runs.push((Objective::Supervised, config.clone())),
        ObjectiveChoice::Both => {
            runs.push((Objective::Md, config.clone()));
            let mut sup = config.clone();
            sup.n_train = a.sup_n_train.unwrap_or(sup.n_train);
            sup.steps = a.sup_steps.unwrap_or(sup.steps);
            sup.validate()?;
            runs.push((Objective::Supervised, sup));
        }
    }
    let snapshot = json!({ "runs": runs.iter().map(|(o, c)| json!({ "objective": o, "config": c })).collect::<Vec<_>>(), "threshold": a.threshold });
    let mut session = Session::new(&cli.out, "parity-train", snapshot, config.seed)?;
    let every = (config.steps / 20)
        .max(config.eval_every)
        .div_ceil(config.eval_every)
        * config.eval_every;
    let mut series = Vec::new();
    for (objective, c) in &runs {
        let tag = if *objective == Objective::Md {
            "md"
        } else {
            "supervised"
        };
        let run = train_observed(c, *objective, &mut progress(tag, every))?;
        run.metrics
            .save_csv(&session.path(&format!("{objective}_metrics.csv")))?;
        let summary = RunSummary::new(*objective, c, &run, a.threshold)?;
        write_json(
            &summary,
            &session.path(&format!("{objective}_summary.json")),
        )?;
        if a.checkpoint {
            save_checkpoint(
                &session.path(&format!("{objective}_params.ckpt")),
                &run.params,
                Some(c.n + 1),
            )?;
        }
        println!("{}", to_json_string(&summary.grokking)?.trim_end());
        series.push(run.metrics);
    }
    if let [md, sup] = series.as_slice() {
        let cmp = GapComparison::new(md, sup, a.threshold)?;
        write_json(&cmp, &session.path("gap_comparison.json"))?;
        println!("gap ratio supervised/md: {}", cmp.ratio);
    }
    session.finish()
}

fn cmd_decompose_check(a: &DecomposeArgs, cli: &Cli, seed: Option<u64>) -> Result<bool> {
    let seed = seed.unwrap_or(0);
    let schedule = match a.t {
        Some(t) => Schedule::point(t)?,
        None => Schedule::new(a.t0, a.t1)?,
    };
    let spec = TaskSpec::random(a.n, a.k, a.secret_seed)?;
    if spec.n_prime() > mdlab::masking::MAX_ENUMERABLE {
        return Err(MdError::EnumerationInfeasible {
            n_prime: spec.n_prime(),
            max: mdlab::masking::MAX_ENUMERABLE,
        });
    }
    let dataset = Dataset::complete(&spec)?;
    let report = decomposition_check(&dataset, &schedule, a.draws, a.width, seed)?;
    let config = json!({ "n": a.n, "k": a.k, "secret": spec.secret(), "t0": schedule.t0(), "t1": schedule.t1(), "draws": a.draws, "width": a.width, "tolerance": a.tolerance });
    let mut session = Session::new(&cli.out, "decompose-check", config.clone(), seed)?;
    let pass = report.relative_deviation < a.tolerance;
    let out = json!({ "config": config, "report": report, "pass": pass });
    write_json(&out, &session.path("decompose_check.json"))?;
    println!(
        "max relative constant deviation: {:e} ({})",
        report.relative_deviation,
        if pass { "ok" } else { "FAIL" }
    );
    session.finish()?;
    Ok(pass)
}

fn cmd_schedule_opt(a: &ScheduleArgs, cli: &Cli) -> Result<()> {
    if a.k == 0 {
        return Err(MdError::InvalidTask("k must be at least 1".into()));
    }
    let signal = signal_optimal_rate(a.k);
    let complexity = complexity_optimal_schedule(a.k)?;
    let describe = |r: &mdlab::schedule::OptimalScheduleResult| -> Result<Value> {
        let s = r.schedule();
        let m = moments(&s, a.k);
        let mut v = json!({
            "t0": r.t0,
            "t1": r.t1,
            "mean_t": m.mean_t,
            "rho_k": m.rho_k,
            "p_signal": signal_probability(&s, a.k).signal,
            "objective_value": r.objective_value,
            "residual": r.residual,
        });
        if let (Some(n), Some(delta)) = (a.n, a.delta) {
            v["n_min"] = json!(sample_complexity_bound(n, a.k, delta, &s)?);
        }
        Ok(v)
    };
    let report = json!({
        "k": a.k,
        "n": a.n,
        "delta": a.delta,
        "signal_optimal": describe(&signal)?,
        "complexity_optimal": describe(&complexity)?,
    });
    let mut session = Session::new(
        &cli.out,
        "schedule-opt",
        json!({ "k": a.k, "n": a.n, "delta": a.delta }),
        0,
    )?;
    write_json(&report, &session.path("schedule_opt.json"))?;
    print!("{}", to_json_string(&report)?);
    session.finish()
}

fn cmd_energy_scan(a: &EnergyArgs, cli: &Cli, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let spec = TaskSpec::random(a.n, a.k, a.secret_seed)?;
    let dataset = Dataset::complete(&spec)?;
    let (regime, configs) = match a.regime {
        Regime::PureSignal => ("pure-signal", pure_signal_configs(&dataset, a.t)?),
        Regime::Mixed => (
            "mixed",
            enumerate_configs(&dataset, &Schedule::new(a.t0, a.t1)?)?,
        ),
    };
    let config = json!({ "n": a.n, "k": a.k, "secret": spec.secret(), "regime": regime, "t": a.t, "t0": a.t0, "t1": a.t1, "width": a.width, "draws": a.draws });
    let mut session = Session::new(&cli.out, "energy-scan", config.clone(), seed)?;
    let report = collapse_check(&configs, a.width, a.draws, seed)?;
    write_energy_scan_csv(&report, &session.path("energy_scan.csv"))?;
    write_json(
        &json!({ "config": config, "report": report }),
        &session.path("energy_scan.json"),
    )?;
    println!(
        "{regime}: {} distinct inputs, relative spread {:e}, max error vs constant {:e}, {}",
        report.distinct_inputs,
        report.relative_spread,
        report.max_relative_error,
        if report.collapsed { "flat" } else { "not flat" }
    );
    session.finish()
}

fn cmd_textlab(a: &TextArgs, cli: &Cli, seed: Option<u64>) -> Result<()> {
    let mut c = TextConfig::default();
    if let Some(path) = &a.config {
        c = overlay(&c, path)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { c.$field = v; } )* };
    }
    set!(block_size, width, batch_size, steps, lr, eval_blocks);
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    let corpus = match &a.corpus {
        Some(p) => Corpus::from_file(p, c.block_size)?,
        None => Corpus::bundled(c.block_size)?,
    };
    let corpus_name = a
        .corpus
        .as_ref()
        .map_or("bundled".to_string(), |p| p.display().to_string());
    let mut session = Session::new(
        &cli.out,
        "textlab",
        json!({ "config": c, "corpus": corpus_name }),
        c.seed,
    )?;
    eprintln!(
        "corpus: {} symbols, vocabulary {}; training 11 models of {} steps",
        corpus.len(),
        corpus.num_symbols(),
        c.steps
    );
    let report = interval_sweep(&corpus, &c, workers(cli))?;
    report.write_csv(std::fs::File::create(session.path("textlab_sweep.csv"))?)?;
    let u = report.u_shape();
    write_json(
        &json!({ "report": report, "u_shape": u }),
        &session.path("textlab_sweep.json"),
    )?;
    for r in &report.rows {
        println!(
            "[{:.1}, {:.1}] {:.6}{}",
            r.t_lo,
            r.t_hi,
            r.final_test_loss,
            r.error
                .as_deref()
                .map(|e| format!("  ({e})"))
                .unwrap_or_default()
        );
    }
    session.finish()
}

fn parse_ranges(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| MdError::Config(format!("range '{part}' is not t0:t1")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| MdError::Config(format!("bad number in range '{part}'")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn cmd_sweep(a: &SweepArgs, cli: &Cli, seed: Option<u64>) -> Result<()> {
    let base = resolve_train_config(&a.train, seed)?;
    let ranges = parse_ranges(&a.ranges)?;
    let mut session = Session::new(
        &cli.out,
        "sweep",
        json!({ "base": base, "ranges": ranges, "repeats": a.repeats, "threshold": a.threshold }),
        base.seed,
    )?;
    let rows = sweep_schedules(&base, &ranges, a.repeats, a.threshold, workers(cli))?;
    write_sweep_csv(&rows, std::fs::File::create(session.path("sweep.csv"))?)?;
    write_json(&rows, &session.path("sweep.json"))?;
    for r in &rows {
        println!(
            "U[{}, {}] repeat {}: train {:?} val {:?} gap {}",
            r.t0, r.t1, r.repeat, r.step_train, r.step_val, r.gap
        );
    }
    session.finish()
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn is_usage_error(e: &MdError) -> bool {
    matches!(
        e,
        MdError::Config(_) | MdError::InvalidSchedule { .. } | MdError::InvalidTask(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = match cli
        .seed
        .map(Ok)
        .or_else(|| env_seed().transpose())
        .transpose()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::ParityTrain(a) => cmd_parity_train(a, &cli, seed).map(|_| true),
        Command::DecomposeCheck(a) => cmd_decompose_check(a, &cli, seed),
        Command::ScheduleOpt(a) => cmd_schedule_opt(a, &cli).map(|_| true),
        Command::EnergyScan(a) => cmd_energy_scan(a, &cli, seed).map(|_| true),
        Command::Textlab(a) => cmd_textlab(a, &cli, seed).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a, &cli, seed).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
