//! The `pars` command line: train, eval, compare, oracle and bench.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ars::{CurveRow, Learner, TrainState};
use crate::baselines::{oracle_search, replay_oracle, schedule_count, OracleResult};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::env::Task;
use crate::error::{ParsError, Result};
use crate::eval::{
    compare, evaluate_policy, evaluate_uvls, speedup_benchmark, write_eval_csv,
    write_histogram_csv, write_outcomes_csv, write_speedup_csv, TaskOutcome,
};
use crate::rollout::WorkerPool;

pub const CURVE_FILE: &str = "curve.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
pub const BEST_CHECKPOINT: &str = "best.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(
    name = "pars",
    version,
    about = "Parallel augmented random search for emergency load shedding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy; resumes when --checkpoint is given.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint on a task set.
    Eval(EvalArgs),
    /// Per-task reward differences of a checkpoint against UVLS or another checkpoint.
    Compare(CompareArgs),
    /// Exhaustive search over discrete shedding schedules.
    Oracle(OracleArgs),
    /// Time a fixed training budget at several worker counts.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker count, overriding `parallel.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Master seed, overriding `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskSet {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to resume from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Iteration budget, overriding `ars.iterations`.
    #[arg(long)]
    pub iterations: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub tasks: TaskSet,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Checkpoint to compare against instead of the UVLS relays.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub tasks: TaskSet,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "train")]
    pub tasks: TaskSet,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub worker_counts: Vec<usize>,
    /// Iteration budget per timing run, overriding `ars.iterations`.
    #[arg(long)]
    pub iterations: Option<u64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| ParsError::InvalidArgument(e.to_string()))?;
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Loads the config and applies command-line overrides.
pub fn load_config(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut cfg = RunConfig::default();
            cfg.resolve()?;
            cfg
        }
    };
    if let Some(w) = common.workers {
        cfg.parallel.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    Ok((cfg, out))
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_atomic(&out.join(RESOLVED_CONFIG), cfg.to_toml_string()?.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_csv_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_csv_with(path, |buf| {
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(buf);
        wtr.write_record([
            "iteration",
            "wall_time_s",
            "alpha",
            "nu",
            "mean_reward",
            "max_reward",
            "min_reward",
            "eval_reward",
        ])?;
        for r in rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    })
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .map(|r| r.map_err(ParsError::from))
        .collect()
}

fn checkpoint_name(iteration: u64) -> String {
    format!("iter_{iteration:06}.json")
}

/// Checks that a checkpoint fits the configured policy, naming both sides
/// when it does not.
pub fn check_against_config(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<()> {
    let env = cfg.env_spec()?;
    ckpt.ensure_compatible(env.obs_dim(), env.act_dim())?;
    let arch = cfg.architecture()?;
    if ckpt.architecture != arch {
        return Err(ParsError::Incompatible(format!(
            "checkpoint holds a {} policy with hidden {:?} and history_stack {}, config asks for {} with hidden {:?} and history_stack {}",
            ckpt.architecture.kind,
            ckpt.architecture.hidden_sizes,
            ckpt.architecture.history_stack,
            arch.kind,
            arch.hidden_sizes,
            arch.history_stack
        )));
    }
    Ok(())
}

/// Trains according to `cfg`, writing all artifacts below `out`.
pub fn train_to_dir(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainState> {
    let train_cfg = cfg.train_config()?;
    let hyper = train_cfg.hyper.clone();
    let arch = train_cfg.architecture.clone();
    let digest = cfg.digest()?;
    let curve_path = out.join(CURVE_FILE);

    let (mut learner, mut curve) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            check_against_config(&ckpt, cfg)?;
            if ckpt.config_digest != digest {
                log::warn!(
                    "checkpoint {} was produced under a different configuration (digest {} vs {})",
                    path.display(),
                    &ckpt.config_digest[..ckpt.config_digest.len().min(12)],
                    &digest[..12]
                );
            }
            let resumed_at = ckpt.iteration;
            let prior = if curve_path.exists() {
                read_curve(&curve_path)?
                    .into_iter()
                    .filter(|r| r.iteration <= resumed_at)
                    .collect()
            } else {
                Vec::new()
            };
            log::info!("resuming from iteration {resumed_at}");
            (Learner::resume(train_cfg, ckpt.to_state())?, prior)
        }
        None => (Learner::new(train_cfg)?, Vec::new()),
    };
    std::fs::create_dir_all(out)?;
    write_resolved(cfg, out)?;

    let period = cfg.eval.checkpoint_every;
    let mut best = curve
        .iter()
        .filter_map(|r| r.eval_reward)
        .fold(f64::NEG_INFINITY, f64::max);
    let rows = learner.run(|state, row| {
        log::info!(
            "iter {:>4}  mean {:>10.3}  max {:>10.3}  eval {}",
            row.iteration,
            row.mean_reward,
            row.max_reward,
            row.eval_reward
                .map_or_else(|| "-".into(), |e| format!("{e:.4}"))
        );
        curve.push(row.clone());
        let ckpt = Checkpoint::from_state(state, &arch, &hyper, digest.clone());
        if let Some(e) = row.eval_reward {
            if e > best {
                best = e;
                ckpt.save(&out.join(BEST_CHECKPOINT))?;
            }
        }
        if period > 0 && row.iteration % period == 0 {
            ckpt.save(&out.join("checkpoints").join(checkpoint_name(row.iteration)))?;
            write_curve(&curve_path, &curve)?;
        }
        Ok(())
    })?;
    let state = learner.into_state();
    if rows.is_empty() {
        log::info!("nothing to do: iteration budget already reached");
    }
    Checkpoint::from_state(&state, &arch, &hyper, digest).save(&out.join(FINAL_CHECKPOINT))?;
    write_curve(&curve_path, &curve)?;
    Ok(state)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainState> {
    let (mut cfg, out) = load_config(&args.common)?;
    if let Some(h) = args.iterations {
        cfg.ars.iterations = h;
        cfg.validate()?;
    }
    train_to_dir(&cfg, &out, args.checkpoint.as_deref())
}

fn tasks_for(cfg: &RunConfig, set: TaskSet) -> Result<Vec<Task>> {
    match set {
        TaskSet::Train => cfg.train_tasks(),
        TaskSet::Test => cfg.test_tasks(),
    }
}

fn policy_outcomes(
    cfg: &RunConfig,
    path: &Path,
    tasks: &[Task],
    pool: &WorkerPool,
) -> Result<Vec<TaskOutcome>> {
    let ckpt = Checkpoint::load(path)?;
    let env = cfg.env_spec()?;
    ckpt.ensure_compatible(env.obs_dim(), env.act_dim())?;
    evaluate_policy(
        &ckpt.architecture,
        &ckpt.weights,
        &ckpt.normalizer,
        &env,
        tasks,
        pool,
    )
}

#[derive(Debug, Serialize)]
struct EvalDocument {
    checkpoint: String,
    tasks: usize,
    mean_reward: f64,
    failures: usize,
    total_load_shed: f64,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (cfg, out) = load_config(&args.common)?;
    let tasks = tasks_for(&cfg, args.tasks)?;
    let pool = WorkerPool::new(cfg.parallel.clone())?;
    let rows = policy_outcomes(&cfg, &args.checkpoint, &tasks, &pool)?;
    let n = rows.len();
    let doc = EvalDocument {
        checkpoint: args.checkpoint.display().to_string(),
        tasks: n,
        mean_reward: if n == 0 {
            0.0
        } else {
            rows.iter().map(|r| r.reward).sum::<f64>() / n as f64
        },
        failures: rows.iter().filter(|r| r.failed).count(),
        total_load_shed: rows.iter().map(|r| r.load_shed).sum(),
    };
    write_resolved(&cfg, &out)?;
    write_csv_with(&out.join("eval.csv"), |buf| write_outcomes_csv(buf, &rows))?;
    write_json(&out.join("eval_summary.json"), &doc)?;
    println!(
        "{} tasks, mean reward {:.4}, {} failures",
        doc.tasks, doc.mean_reward, doc.failures
    );
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let (cfg, out) = load_config(&args.common)?;
    let tasks = tasks_for(&cfg, args.tasks)?;
    let pool = WorkerPool::new(cfg.parallel.clone())?;
    let policy = policy_outcomes(&cfg, &args.checkpoint, &tasks, &pool)?;
    let baseline = match &args.baseline {
        Some(path) => policy_outcomes(&cfg, path, &tasks, &pool)?,
        None => evaluate_uvls(&cfg.env_spec()?, &tasks, &cfg.uvls, &pool)?,
    };
    let report = compare(&policy, &baseline, cfg.eval.bin_width)?;
    write_resolved(&cfg, &out)?;
    write_csv_with(&out.join("compare.csv"), |buf| write_eval_csv(buf, &report))?;
    write_csv_with(&out.join("histogram.csv"), |buf| {
        write_histogram_csv(buf, &report.histogram)
    })?;
    write_json(&out.join("compare_summary.json"), &report.summary)?;
    let s = &report.summary;
    println!(
        "{} tasks, policy better on {:.2}%, mean difference {:.4}, failures policy {} / baseline {}",
        s.tasks,
        100.0 * s.positive_fraction,
        s.mean_difference,
        s.policy_failures,
        s.baseline_failures
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleRow {
    task_id: String,
    best_reward: f64,
    failed: bool,
    first_decision_step: usize,
    evaluated: u64,
    schedule: String,
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let (cfg, out) = load_config(&args.common)?;
    let env = cfg.env_spec()?;
    let spec = &cfg.oracle;
    let limit = spec.max_schedules;
    match schedule_count(spec.levels.len(), env.act_dim(), spec.decision_steps) {
        Some(c) if c <= limit => {}
        Some(c) => {
            return Err(ParsError::OracleGuard {
                size: c.to_string(),
                limit,
            })
        }
        None => {
            return Err(ParsError::OracleGuard {
                size: format!(
                    "{}^({}x{})",
                    spec.levels.len(),
                    env.act_dim(),
                    spec.decision_steps
                ),
                limit,
            })
        }
    }
    let tasks = tasks_for(&cfg, args.tasks)?;
    let pool = WorkerPool::new(cfg.parallel.clone())?;
    let results: Vec<(Task, OracleResult, bool)> = pool.install(|| {
        tasks
            .iter()
            .map(|&task| {
                let r = oracle_search(&env, task, spec)?;
                let (summary, _) = replay_oracle(&env, task, &r)?;
                Ok((task, r, summary.failed))
            })
            .collect::<Result<_>>()
    })?;
    let rows: Vec<OracleRow> = results
        .iter()
        .map(|(task, r, failed)| {
            Ok(OracleRow {
                task_id: task.id(),
                best_reward: r.best_reward,
                failed: *failed,
                first_decision_step: r.first_decision_step,
                evaluated: r.evaluated_count,
                schedule: serde_json::to_string(&r.best_schedule)?,
            })
        })
        .collect::<Result<_>>()?;
    write_resolved(&cfg, &out)?;
    write_csv_with(&out.join("oracle.csv"), |buf| {
        let mut wtr = csv::Writer::from_writer(buf);
        for r in &rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    let total: f64 = rows.iter().map(|r| r.best_reward).sum();
    println!("{} tasks, oracle total reward {:.4}", rows.len(), total);
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (mut cfg, out) = load_config(&args.common)?;
    if let Some(h) = args.iterations {
        cfg.ars.iterations = h;
    }
    cfg.eval.every = 0;
    cfg.validate()?;
    let report = speedup_benchmark(&cfg.train_config()?, &args.worker_counts)?;
    write_resolved(&cfg, &out)?;
    write_csv_with(&out.join("speedup.csv"), |buf| {
        write_speedup_csv(buf, &report)
    })?;
    write_json(&out.join("bench_summary.json"), &report)?;
    for r in &report.rows {
        println!(
            "{:>3} workers  {:>9.3} s  speedup {:.2}",
            r.workers, r.wall_seconds, r.speedup
        );
    }
    println!(
        "final weights identical across worker counts: {}",
        report.theta_identical
    );
    if !report.theta_identical {
        return Err(ParsError::InvalidArgument(
            "training diverged across worker counts".into(),
        ));
    }
    Ok(())
}
