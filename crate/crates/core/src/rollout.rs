//! Hierarchical rollout execution.
//!
//! The learner hands an immutable [`Snapshot`] to the worker layer, which
//! evaluates one perturbation direction per work item; each worker fans the
//! `2m` signed-task episodes of its direction out to the executor layer.
//! Both layers run on one rayon pool sized `workers x executors_per_worker`.
//! Results come back in direction-index order whatever the completion order,
//! and every episode is a pure function of its request, so the outcome of an
//! iteration does not depend on the pool size.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, GridEnv, Task};
use crate::error::{ParsError, Result};
use crate::normalizer::Normalizer;
use crate::policy::{perturb, EpisodePolicy, PolicyArchitecture, Sign, WeightVector};

/// One episode to execute with fixed (already perturbed) weights.
#[derive(Debug, Clone)]
pub struct RolloutRequest<'a> {
    pub weights: &'a WeightVector,
    pub frozen_normalizer: &'a Normalizer,
    pub task: Task,
    pub architecture: &'a PolicyArchitecture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub total_reward: f64,
    pub steps: usize,
    /// Raw observations seen during the episode.
    pub normalizer_delta: Normalizer,
    pub failed: bool,
    pub load_shed_total: f64,
}

/// Runs one episode: normalize with the frozen statistics, infer, step.
pub fn run_rollout(req: &RolloutRequest<'_>, spec: &EnvSpec) -> Result<RolloutResult> {
    let mut env = GridEnv::new(spec, req.task)?;
    let mut policy = EpisodePolicy::new(req.architecture, req.weights)?;
    let mut delta = Normalizer::new(spec.obs_dim());
    let mut obs = env.observe();
    while !env.is_done() {
        delta.update(&obs)?;
        let action = policy.act(req.frozen_normalizer.normalize(&obs)?)?;
        env.step(&action)?;
        obs = env.observe();
    }
    let summary = env.summary();
    if !summary.total_reward.is_finite() {
        return Err(ParsError::Numeric {
            step: summary.steps,
            msg: "non-finite episode reward".into(),
        });
    }
    Ok(RolloutResult {
        total_reward: summary.total_reward,
        steps: summary.steps,
        normalizer_delta: delta,
        failed: summary.failed,
        load_shed_total: summary.load_shed_total,
    })
}

/// Immutable learner state published to the workers for one iteration.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub theta: &'a WeightVector,
    pub normalizer: &'a Normalizer,
    pub nu: f64,
    pub architecture: &'a PolicyArchitecture,
    pub env: &'a EnvSpec,
}

/// Paired evaluation of one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionOutcome {
    pub r_plus: f64,
    pub r_minus: f64,
    pub delta: Normalizer,
    pub episodes: usize,
    pub env_steps: usize,
}

/// Mean reward of `theta + nu*delta` and `theta - nu*delta` over the same
/// task list, with the observation statistics of all `2m` episodes merged
/// (plus-sign episodes first, then minus, each in task order).
pub fn evaluate_direction(
    snapshot: &Snapshot<'_>,
    direction: &[f64],
    tasks: &[Task],
) -> Result<DirectionOutcome> {
    if tasks.is_empty() {
        return Err(ParsError::InvalidArgument(
            "a direction needs at least one task".into(),
        ));
    }
    let plus = perturb(snapshot.theta, direction, snapshot.nu, Sign::Plus)?;
    let minus = perturb(snapshot.theta, direction, snapshot.nu, Sign::Minus)?;
    let jobs: Vec<(&WeightVector, Task)> = tasks
        .iter()
        .map(|&t| (&plus, t))
        .chain(tasks.iter().map(|&t| (&minus, t)))
        .collect();
    let results = jobs
        .par_iter()
        .with_max_len(1)
        .map(|&(weights, task)| {
            let req = RolloutRequest {
                weights,
                frozen_normalizer: snapshot.normalizer,
                task,
                architecture: snapshot.architecture,
            };
            run_rollout(&req, snapshot.env)
        })
        .collect::<Result<Vec<_>>>()?;

    let m = tasks.len();
    let mean = |rs: &[RolloutResult]| rs.iter().map(|r| r.total_reward).sum::<f64>() / m as f64;
    let mut delta = Normalizer::new(snapshot.env.obs_dim());
    for r in &results {
        delta.merge_in_place(&r.normalizer_delta)?;
    }
    Ok(DirectionOutcome {
        r_plus: mean(&results[..m]),
        r_minus: mean(&results[m..]),
        delta,
        episodes: results.len(),
        env_steps: results.iter().map(|r| r.steps).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelConfig {
    pub workers: usize,
    pub executors_per_worker: usize,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            executors_per_worker: 1,
        }
    }
}

impl ParallelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.executors_per_worker == 0 {
            return Err(ParsError::Config(
                "parallel.workers and parallel.executors_per_worker must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub struct WorkerPool {
    pool: rayon::ThreadPool,
    config: ParallelConfig,
}

impl WorkerPool {
    pub fn new(config: ParallelConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers * config.executors_per_worker)
            .thread_name(|i| format!("pars-rollout-{i}"))
            .build()
            .map_err(|e| ParsError::Config(format!("cannot build worker pool: {e}")))?;
        Ok(Self { pool, config })
    }

    pub fn config(&self) -> &ParallelConfig {
        &self.config
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("config", &self.config)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchReport {
    /// Indexed by direction.
    pub outcomes: Vec<DirectionOutcome>,
    pub episodes: usize,
    pub env_steps: usize,
    pub retries: usize,
}

/// Evaluates every direction on the pool. A direction whose evaluation fails
/// is retried once before the iteration is aborted.
pub fn dispatch_iteration(
    snapshot: &Snapshot<'_>,
    directions: &[Vec<f64>],
    tasks: &[Task],
    pool: &WorkerPool,
    iteration: u64,
) -> Result<DispatchReport> {
    dispatch_with(pool, directions.len(), iteration, |i| {
        evaluate_direction(snapshot, &directions[i], tasks)
    })
}

pub(crate) fn dispatch_with<F>(
    pool: &WorkerPool,
    n: usize,
    iteration: u64,
    eval: F,
) -> Result<DispatchReport>
where
    F: Fn(usize) -> Result<DirectionOutcome> + Sync,
{
    let retries = AtomicUsize::new(0);
    let outcomes = pool.install(|| {
        (0..n)
            .into_par_iter()
            .with_max_len(1)
            .map(|i| {
                eval(i)
                    .or_else(|first| {
                        log::warn!(
                            "iteration {iteration}: direction {i} failed ({first}), retrying"
                        );
                        retries.fetch_add(1, Ordering::Relaxed);
                        eval(i)
                    })
                    .map_err(|e| ParsError::Rollout {
                        iteration,
                        direction: i,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(DispatchReport {
        episodes: outcomes.iter().map(|o| o.episodes).sum(),
        env_steps: outcomes.iter().map(|o| o.env_steps).sum(),
        retries: retries.into_inner(),
        outcomes,
    })
}

/// Greedy (unperturbed, frozen-normalizer) episodes over a task list, in
/// task order.
pub fn greedy_rollouts(
    arch: &PolicyArchitecture,
    theta: &WeightVector,
    normalizer: &Normalizer,
    env: &EnvSpec,
    tasks: &[Task],
    pool: &WorkerPool,
) -> Result<Vec<RolloutResult>> {
    pool.install(|| {
        tasks
            .par_iter()
            .with_max_len(1)
            .map(|&task| {
                let req = RolloutRequest {
                    weights: theta,
                    frozen_normalizer: normalizer,
                    task,
                    architecture: arch,
                };
                run_rollout(&req, env)
            })
            .collect()
    })
}

/// Picks the iteration's task list: fault locations drawn uniformly without
/// replacement, crossed with every duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSampler {
    pub locations: Vec<usize>,
    pub durations: Vec<f64>,
    pub fault_start: f64,
    pub locations_per_iteration: usize,
}

impl TaskSampler {
    pub fn validate(&self) -> Result<()> {
        if self.locations.is_empty() || self.durations.is_empty() {
            return Err(ParsError::Config(
                "task sampler needs locations and durations".into(),
            ));
        }
        if self.locations_per_iteration == 0 || self.locations_per_iteration > self.locations.len()
        {
            return Err(ParsError::Config(format!(
                "cannot sample {} of {} fault locations",
                self.locations_per_iteration,
                self.locations.len()
            )));
        }
        Ok(())
    }

    /// Episodes per signed perturbation, `m`.
    pub fn tasks_per_iteration(&self) -> usize {
        self.locations_per_iteration * self.durations.len()
    }

    pub fn all_tasks(&self) -> Vec<Task> {
        crate::env::task_sweep(&self.locations, &self.durations, self.fault_start)
    }

    pub fn sample(&self, seed: u64) -> Vec<Task> {
        let k = self.locations_per_iteration;
        let mut picked: Vec<usize> = if k == self.locations.len() {
            self.locations.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, self.locations.len(), k)
                .into_iter()
                .map(|i| self.locations[i])
                .collect()
        };
        picked.sort_unstable();
        crate::env::task_sweep(&picked, &self.durations, self.fault_start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{surrogate_3bus, RewardParams, SimSettings};
    use crate::policy::init_weights;

    fn spec() -> EnvSpec {
        EnvSpec::new(
            surrogate_3bus(),
            RewardParams::default(),
            SimSettings::default(),
        )
        .unwrap()
    }

    fn fnn(spec: &EnvSpec) -> PolicyArchitecture {
        PolicyArchitecture::fnn(spec.obs_dim(), spec.act_dim(), 1, &[8])
    }

    #[test]
    fn zero_fnn_on_no_fault_task_is_penalized() {
        let spec = spec();
        let arch = fnn(&spec);
        let w = WeightVector::zeros(arch.param_count().unwrap());
        let norm = Normalizer::new(spec.obs_dim());
        let req = RolloutRequest {
            weights: &w,
            frozen_normalizer: &norm,
            task: Task::new(1, 0.0),
            architecture: &arch,
        };
        let r = run_rollout(&req, &spec).unwrap();
        assert!(r.total_reward < 0.0);
        assert!(r.load_shed_total > 0.0);
        assert_eq!(r.normalizer_delta.count, r.steps as u64);
        assert_eq!(run_rollout(&req, &spec).unwrap(), r);
    }

    #[test]
    fn do_nothing_policy_on_no_fault_task_scores_zero() {
        let spec = spec();
        let arch = PolicyArchitecture::linear(spec.obs_dim(), spec.act_dim(), 0);
        let w = WeightVector::zeros(arch.param_count().unwrap());
        let norm = Normalizer::new(spec.obs_dim());
        let req = RolloutRequest {
            weights: &w,
            frozen_normalizer: &norm,
            task: Task::new(2, 0.0),
            architecture: &arch,
        };
        let r = run_rollout(&req, &spec).unwrap();
        assert_eq!(r.total_reward, 0.0);
        assert!(!r.failed);
        assert_eq!(r.load_shed_total, 0.0);
        assert_eq!(r.steps, 80);
    }

    #[test]
    fn direction_rewards_are_task_means() {
        let spec = spec();
        let arch = fnn(&spec);
        let theta = init_weights(&arch, 3).unwrap();
        let norm = Normalizer::new(spec.obs_dim());
        let snap = Snapshot {
            theta: &theta,
            normalizer: &norm,
            nu: 0.5,
            architecture: &arch,
            env: &spec,
        };
        let dir: Vec<f64> = (0..theta.len())
            .map(|i| ((i * 7919) % 13) as f64 - 6.0)
            .collect();
        let tasks = [Task::new(0, 0.1), Task::new(1, 0.05), Task::new(2, 0.1)];
        let out = evaluate_direction(&snap, &dir, &tasks).unwrap();
        assert_eq!(out.episodes, 6);

        let plus = perturb(&theta, &dir, 0.5, Sign::Plus).unwrap();
        let each: Vec<f64> = tasks
            .iter()
            .map(|&task| {
                let req = RolloutRequest {
                    weights: &plus,
                    frozen_normalizer: &norm,
                    task,
                    architecture: &arch,
                };
                run_rollout(&req, &spec).unwrap().total_reward
            })
            .collect();
        assert_eq!(out.r_plus, (each[0] + each[1] + each[2]) / 3.0);

        let single = evaluate_direction(&snap, &dir, &tasks[1..2]).unwrap();
        assert_eq!(single.r_plus, each[1]);

        let zero = vec![0.0; theta.len()];
        let same = evaluate_direction(&snap, &zero, &tasks).unwrap();
        assert_eq!(same.r_plus, same.r_minus);
    }

    #[test]
    fn dispatch_order_and_accounting() {
        let spec = spec();
        let arch = fnn(&spec);
        let theta = init_weights(&arch, 9).unwrap();
        let norm = Normalizer::new(spec.obs_dim());
        let snap = Snapshot {
            theta: &theta,
            normalizer: &norm,
            nu: 1.0,
            architecture: &arch,
            env: &spec,
        };
        let dirs = crate::ars::sample_directions(4, theta.len(), 11);
        let tasks = [Task::new(1, 0.1), Task::new(2, 0.0)];
        let one = WorkerPool::new(ParallelConfig::default()).unwrap();
        let many = WorkerPool::new(ParallelConfig {
            workers: 3,
            executors_per_worker: 2,
        })
        .unwrap();
        let a = dispatch_iteration(&snap, &dirs, &tasks, &one, 1).unwrap();
        let b = dispatch_iteration(&snap, &dirs, &tasks, &many, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes, 2 * 4 * 2);
        for (i, o) in a.outcomes.iter().enumerate() {
            assert_eq!(o, &evaluate_direction(&snap, &dirs[i], &tasks).unwrap());
        }
    }

    #[test]
    fn flaky_direction_is_retried_once() {
        let pool = WorkerPool::new(ParallelConfig::default()).unwrap();
        let calls = AtomicUsize::new(0);
        let ok = DirectionOutcome {
            r_plus: 1.0,
            r_minus: 0.0,
            delta: Normalizer::new(1),
            episodes: 2,
            env_steps: 0,
        };
        let report = dispatch_with(&pool, 3, 5, |i| {
            if i == 1 && calls.fetch_add(1, Ordering::SeqCst) == 0 {
                return Err(ParsError::Numeric {
                    step: 0,
                    msg: "transient".into(),
                });
            }
            Ok(ok.clone())
        })
        .unwrap();
        assert_eq!(report.retries, 1);
        assert_eq!(report.outcomes.len(), 3);

        let err = dispatch_with(&pool, 3, 5, |i| {
            if i == 2 {
                return Err(ParsError::Numeric {
                    step: 4,
                    msg: "broken".into(),
                });
            }
            Ok(ok.clone())
        })
        .unwrap_err();
        assert!(matches!(
            err,
            ParsError::Rollout {
                iteration: 5,
                direction: 2,
                ..
            }
        ));
    }

    #[test]
    fn task_sampling() {
        let sampler = TaskSampler {
            locations: vec![0, 1, 2, 3, 4],
            durations: vec![0.0, 0.1],
            fault_start: 1.0,
            locations_per_iteration: 3,
        };
        sampler.validate().unwrap();
        let a = sampler.sample(17);
        assert_eq!(a, sampler.sample(17));
        assert_eq!(a.len(), 6);
        let mut locs: Vec<usize> = a.iter().map(|t| t.fault_bus).collect();
        locs.dedup();
        assert_eq!(locs.len(), 3);
        assert!(locs.windows(2).all(|w| w[0] < w[1]));
        let all = TaskSampler {
            locations_per_iteration: 5,
            ..sampler.clone()
        };
        assert_eq!(all.sample(1), all.all_tasks());
        let bad = TaskSampler {
            locations_per_iteration: 6,
            ..sampler
        };
        assert!(bad.validate().is_err());
    }
}
