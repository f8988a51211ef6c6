//! Test-set evaluation, policy-vs-baseline comparison and the parallel
//! speedup benchmark.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ars::{train, TrainConfig};
use crate::baselines::{run_uvls, UvlsSettings};
use crate::env::{EnvSpec, Task};
use crate::error::{ParsError, Result};
use crate::normalizer::Normalizer;
use crate::policy::{PolicyArchitecture, WeightVector};
use crate::rollout::{greedy_rollouts, ParallelConfig, WorkerPool};

pub const DEFAULT_BIN_WIDTH: f64 = 500.0;

/// Result of one deterministic episode on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub reward: f64,
    pub load_shed: f64,
    pub failed: bool,
}

/// One greedy episode per task with frozen normalizer statistics.
pub fn evaluate_policy(
    arch: &PolicyArchitecture,
    theta: &WeightVector,
    normalizer: &Normalizer,
    env: &EnvSpec,
    tasks: &[Task],
    pool: &WorkerPool,
) -> Result<Vec<TaskOutcome>> {
    if arch.obs_dim != env.obs_dim() || arch.act_dim != env.act_dim() {
        return Err(ParsError::Incompatible(format!(
            "policy expects obs {} / act {}, environment '{}' provides obs {} / act {}",
            arch.obs_dim,
            arch.act_dim,
            env.model.name,
            env.obs_dim(),
            env.act_dim()
        )));
    }
    let results = greedy_rollouts(arch, theta, normalizer, env, tasks, pool)?;
    Ok(tasks
        .iter()
        .zip(results)
        .map(|(task, r)| TaskOutcome {
            task_id: task.id(),
            reward: r.total_reward,
            load_shed: r.load_shed_total,
            failed: r.failed,
        })
        .collect())
}

/// Runs the UVLS relays on every task.
pub fn evaluate_uvls(
    env: &EnvSpec,
    tasks: &[Task],
    settings: &UvlsSettings,
    pool: &WorkerPool,
) -> Result<Vec<TaskOutcome>> {
    pool.install(|| {
        tasks
            .par_iter()
            .map(|&task| {
                let (summary, _) = run_uvls(env, task, settings)?;
                Ok(TaskOutcome {
                    task_id: task.id(),
                    reward: summary.total_reward,
                    load_shed: summary.load_shed_total,
                    failed: summary.failed,
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task_id: String,
    pub policy_reward: f64,
    pub baseline_reward: f64,
    pub reward_difference: f64,
    pub policy_shed_pu: f64,
    pub baseline_shed_pu: f64,
    pub policy_failed: bool,
    pub baseline_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tasks: usize,
    /// Share of strictly positive differences; ties count as non-positive.
    pub positive_fraction: f64,
    pub mean_difference: f64,
    pub policy_failures: usize,
    pub baseline_failures: usize,
    pub policy_mean_reward: f64,
    pub baseline_mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub histogram: Vec<HistogramBin>,
    pub summary: EvalSummary,
}

/// Bins `values` into contiguous `[k*w, (k+1)*w)` intervals spanning the
/// data; empty input gives no bins.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(ParsError::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ParsError::NonFinite("histogram input"));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let index = |v: f64| (v / bin_width).floor() as i64;
    let lo = values.iter().map(|&v| index(v)).min().unwrap_or(0);
    let hi = values.iter().map(|&v| index(v)).max().unwrap_or(0);
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(index(v) - lo) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let k = lo + i as i64;
            HistogramBin {
                bin_low: k as f64 * bin_width,
                bin_high: (k + 1) as f64 * bin_width,
                count,
            }
        })
        .collect())
}

/// Per-task `policy - baseline` differences with histogram and summary.
pub fn compare(
    policy: &[TaskOutcome],
    baseline: &[TaskOutcome],
    bin_width: f64,
) -> Result<EvalReport> {
    if policy.len() != baseline.len() {
        return Err(ParsError::Misaligned(format!(
            "{} policy results vs {} baseline results",
            policy.len(),
            baseline.len()
        )));
    }
    let rows: Vec<EvalRow> = policy
        .iter()
        .zip(baseline)
        .map(|(p, b)| {
            if p.task_id != b.task_id {
                return Err(ParsError::Misaligned(format!(
                    "task {} paired with {}",
                    p.task_id, b.task_id
                )));
            }
            Ok(EvalRow {
                task_id: p.task_id.clone(),
                policy_reward: p.reward,
                baseline_reward: b.reward,
                reward_difference: p.reward - b.reward,
                policy_shed_pu: p.load_shed,
                baseline_shed_pu: b.load_shed,
                policy_failed: p.failed,
                baseline_failed: b.failed,
            })
        })
        .collect::<Result<_>>()?;
    let diffs: Vec<f64> = rows.iter().map(|r| r.reward_difference).collect();
    let n = rows.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        if n == 0 {
            0.0
        } else {
            xs.sum::<f64>() / n as f64
        }
    };
    let summary = EvalSummary {
        tasks: n,
        positive_fraction: if n == 0 {
            0.0
        } else {
            diffs.iter().filter(|&&d| d > 0.0).count() as f64 / n as f64
        },
        mean_difference: mean(&mut diffs.iter().copied()),
        policy_failures: rows.iter().filter(|r| r.policy_failed).count(),
        baseline_failures: rows.iter().filter(|r| r.baseline_failed).count(),
        policy_mean_reward: mean(&mut rows.iter().map(|r| r.policy_reward)),
        baseline_mean_reward: mean(&mut rows.iter().map(|r| r.baseline_reward)),
    };
    Ok(EvalReport {
        histogram: histogram(&diffs, bin_width)?,
        rows,
        summary,
    })
}

/// Header is written even when there are no rows.
fn write_table<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_outcomes_csv<W: Write>(out: W, rows: &[TaskOutcome]) -> Result<()> {
    write_table(out, &["task_id", "reward", "load_shed", "failed"], rows)
}

pub fn write_eval_csv<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let header = [
        "task_id",
        "policy_reward",
        "baseline_reward",
        "reward_difference",
        "policy_shed_pu",
        "baseline_shed_pu",
        "policy_failed",
        "baseline_failed",
    ];
    write_table(out, &header, &report.rows)
}

pub fn write_histogram_csv<W: Write>(out: W, bins: &[HistogramBin]) -> Result<()> {
    write_table(out, &["bin_low", "bin_high", "count"], bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub workers: usize,
    pub wall_seconds: f64,
    /// Relative to the first entry.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub rows: Vec<SpeedupRow>,
    /// Final weights matched bit for bit across all worker counts.
    pub theta_identical: bool,
}

/// Trains `config` once per worker count and times each run.
pub fn speedup_benchmark(config: &TrainConfig, worker_counts: &[usize]) -> Result<SpeedupReport> {
    if worker_counts.is_empty() {
        return Err(ParsError::InvalidArgument("no worker counts given".into()));
    }
    let mut rows: Vec<SpeedupRow> = Vec::with_capacity(worker_counts.len());
    let mut reference: Option<WeightVector> = None;
    let mut identical = true;
    for &workers in worker_counts {
        let mut cfg = config.clone();
        cfg.parallel = ParallelConfig {
            workers,
            ..config.parallel.clone()
        };
        let started = Instant::now();
        let (state, _) = train(cfg)?;
        let wall = started.elapsed().as_secs_f64();
        let base = rows.first().map_or(wall, |r| r.wall_seconds);
        log::info!("bench: {workers} workers, {wall:.2} s");
        rows.push(SpeedupRow {
            workers,
            wall_seconds: wall,
            speedup: base / wall,
        });
        match &reference {
            None => reference = Some(state.theta),
            Some(theta) => identical &= *theta == state.theta,
        }
    }
    Ok(SpeedupReport {
        rows,
        theta_identical: identical,
    })
}

pub fn write_speedup_csv<W: Write>(out: W, report: &SpeedupReport) -> Result<()> {
    write_table(out, &["workers", "wall_seconds", "speedup"], &report.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: &str, reward: f64) -> TaskOutcome {
        TaskOutcome {
            task_id: id.into(),
            reward,
            load_shed: 0.0,
            failed: reward <= -1000.0,
        }
    }

    #[test]
    fn single_task_difference() {
        let r = compare(
            &[outcome("a", -94.09)],
            &[outcome("a", -2367.21)],
            DEFAULT_BIN_WIDTH,
        )
        .unwrap();
        assert!((r.rows[0].reward_difference - 2273.12).abs() < 1e-9);
        assert_eq!(r.summary.positive_fraction, 1.0);
        assert_eq!(r.summary.baseline_failures, 1);
        assert_eq!(r.histogram.len(), 1);
        assert_eq!(
            (r.histogram[0].bin_low, r.histogram[0].bin_high),
            (2000.0, 2500.0)
        );
    }

    #[test]
    fn positive_fraction_counts_strict_wins() {
        let ids: Vec<String> = (0..170).map(|i| format!("t{i}")).collect();
        let policy: Vec<_> = ids.iter().map(|i| outcome(i, -10.0)).collect();
        let baseline: Vec<_> = ids
            .iter()
            .enumerate()
            .map(|(k, i)| {
                outcome(
                    i,
                    if k < 168 {
                        -20.0
                    } else if k == 168 {
                        -10.0
                    } else {
                        -5.0
                    },
                )
            })
            .collect();
        let r = compare(&policy, &baseline, DEFAULT_BIN_WIDTH).unwrap();
        assert!((r.summary.positive_fraction - 168.0 / 170.0).abs() < 1e-15);
        assert!((r.summary.positive_fraction - 0.9882).abs() < 1e-4);
    }

    #[test]
    fn self_comparison_is_all_zero() {
        let xs = vec![outcome("a", -3.0), outcome("b", -1500.0), outcome("c", 0.0)];
        let r = compare(&xs, &xs, 10.0).unwrap();
        assert!(r.rows.iter().all(|row| row.reward_difference == 0.0));
        assert_eq!(r.summary.positive_fraction, 0.0);
        assert_eq!(r.summary.mean_difference, 0.0);
        assert_eq!(
            r.histogram,
            vec![HistogramBin {
                bin_low: 0.0,
                bin_high: 10.0,
                count: 3
            }]
        );
    }

    #[test]
    fn empty_and_misaligned() {
        let r = compare(&[], &[], DEFAULT_BIN_WIDTH).unwrap();
        assert!(r.rows.is_empty() && r.histogram.is_empty());
        assert_eq!(r.summary.positive_fraction, 0.0);
        assert!(matches!(
            compare(&[outcome("a", 0.0)], &[], 1.0),
            Err(ParsError::Misaligned(_))
        ));
        assert!(matches!(
            compare(&[outcome("a", 0.0)], &[outcome("b", 0.0)], 1.0),
            Err(ParsError::Misaligned(_))
        ));
    }

    #[test]
    fn histogram_bins_are_contiguous() {
        let bins = histogram(&[-600.0, 10.0, 499.9, 500.0, 1700.0], 500.0).unwrap();
        let lows: Vec<f64> = bins.iter().map(|b| b.bin_low).collect();
        assert_eq!(lows, vec![-1000.0, -500.0, 0.0, 500.0, 1000.0, 1500.0]);
        let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 0, 2, 1, 0, 1]);
        assert!(histogram(&[1.0], 0.0).is_err());
        assert!(histogram(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn csv_layouts() {
        let r = compare(
            &[outcome("bus1_0.100s", -1.0)],
            &[outcome("bus1_0.100s", -1001.0)],
            500.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "task_id,policy_reward,baseline_reward,reward_difference,policy_shed_pu,baseline_shed_pu,policy_failed,baseline_failed\n"
        ));
        assert!(text.contains("bus1_0.100s,-1.0,-1001.0,1000.0,"));
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, &r.histogram).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_low,bin_high,count\n1000.0,1500.0,1\n"
        );
    }
}
