//! Reference controllers: a local three-stage under-voltage load-shedding
//! relay, and an exhaustive search over discretized shedding schedules for
//! tiny instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    episode_step, reset, simulate, EnvSpec, EpisodeSummary, GridModel, GridState, Task,
    TrajectoryRow,
};
use crate::error::{ParsError, Result};
use crate::policy::ACTION_MIN;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UvlsStage {
    /// Pickup voltage (p.u.).
    pub threshold: f64,
    /// Seconds below `threshold` before the stage trips.
    pub delay: f64,
    /// Fraction of the initial bus load shed on trip.
    pub shed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UvlsSettings {
    pub stages: Vec<UvlsStage>,
}

impl Default for UvlsSettings {
    fn default() -> Self {
        let stage = |threshold, delay| UvlsStage {
            threshold,
            delay,
            shed: 0.2,
        };
        Self {
            stages: vec![stage(0.70, 0.33), stage(0.80, 0.5), stage(0.90, 1.5)],
        }
    }
}

impl UvlsSettings {
    pub fn validate(&self) -> Result<()> {
        for (k, st) in self.stages.iter().enumerate() {
            let ok = st.threshold > 0.0
                && st.threshold < 1.2
                && st.delay >= 0.0
                && st.shed > 0.0
                && st.shed <= -ACTION_MIN;
            if !ok {
                return Err(ParsError::Config(format!(
                    "uvls stage {k}: need threshold in (0, 1.2), delay >= 0 and shed in (0, {}]",
                    -ACTION_MIN
                )));
            }
        }
        Ok(())
    }
}

/// Relay state for every controllable bus. Each relay only senses its own
/// bus voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct UvlsStageState {
    stages: Vec<UvlsStage>,
    /// `[bus][stage]`
    pub tripped: Vec<Vec<bool>>,
    /// `[bus][stage]`, seconds spent below the stage threshold.
    pub timers: Vec<Vec<f64>>,
    /// Shedding owed but not yet issued because of the per-step action bound.
    pub pending: Vec<f64>,
}

impl UvlsStageState {
    pub fn new(settings: &UvlsSettings, n_controllable: usize) -> Self {
        let k = settings.stages.len();
        Self {
            stages: settings.stages.clone(),
            tripped: vec![vec![false; k]; n_controllable],
            timers: vec![vec![0.0; k]; n_controllable],
            pending: vec![0.0; n_controllable],
        }
    }

    /// Advances the relay by one action interval and returns the action.
    pub fn step(&mut self, state: &GridState, model: &GridModel, dt_action: f64) -> Vec<f64> {
        let mut action = vec![0.0; model.n_controllable()];
        for (j, &bus) in model.controllable.iter().enumerate() {
            let v = state.v[bus];
            for (s, stage) in self.stages.iter().enumerate() {
                if self.tripped[j][s] {
                    continue;
                }
                if v < stage.threshold {
                    self.timers[j][s] += dt_action;
                    if self.timers[j][s] >= stage.delay - TIME_EPS {
                        self.tripped[j][s] = true;
                        self.pending[j] += stage.shed;
                    }
                } else {
                    self.timers[j][s] = 0.0;
                }
            }
            let issue = self.pending[j].min(-ACTION_MIN);
            if issue > 0.0 {
                self.pending[j] -= issue;
                action[j] = -issue;
            }
        }
        action
    }
}

/// Functional form of [`UvlsStageState::step`].
pub fn uvls_action(
    state: &GridState,
    relay: &UvlsStageState,
    model: &GridModel,
    dt_action: f64,
) -> (Vec<f64>, UvlsStageState) {
    let mut next = relay.clone();
    let action = next.step(state, model, dt_action);
    (action, next)
}

/// Runs one episode under UVLS control.
pub fn run_uvls(
    spec: &EnvSpec,
    task: Task,
    settings: &UvlsSettings,
) -> Result<(EpisodeSummary, Vec<TrajectoryRow>)> {
    let mut relay = UvlsStageState::new(settings, spec.model.n_controllable());
    simulate(spec, task, |state, _| {
        relay.step(state, &spec.model, spec.sim.dt_action)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSpec {
    /// Discrete action levels, searched in the given order.
    pub levels: Vec<f64>,
    /// Number of agent steps, starting at fault clearance, that receive a
    /// searched action; all other steps shed nothing.
    pub decision_steps: usize,
    /// Refuse searches with more schedules than this.
    pub max_schedules: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            levels: vec![0.0, -0.1, -0.2],
            decision_steps: 5,
            max_schedules: 1_000_000,
        }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.decision_steps == 0 {
            return Err(ParsError::Config(
                "oracle needs at least one level and one decision step".into(),
            ));
        }
        if self.levels.iter().any(|l| !(ACTION_MIN..=0.0).contains(l)) {
            return Err(ParsError::Config(format!(
                "oracle levels must lie in [{ACTION_MIN}, 0], got {:?}",
                self.levels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_reward: f64,
    /// `[decision step][controllable bus]`
    pub best_schedule: Vec<Vec<f64>>,
    /// Agent step index of the first decision.
    pub first_decision_step: usize,
    pub evaluated_count: u64,
}

impl OracleResult {
    /// Full per-step action sequence realizing the best schedule.
    pub fn action_at(&self, step: usize, n_controllable: usize) -> Vec<f64> {
        step.checked_sub(self.first_decision_step)
            .and_then(|k| self.best_schedule.get(k).cloned())
            .unwrap_or_else(|| vec![0.0; n_controllable])
    }
}

/// Number of schedules `levels^(buses * steps)`, or `None` on overflow.
pub fn schedule_count(levels: usize, buses: usize, steps: usize) -> Option<u64> {
    let exp = u32::try_from(buses.checked_mul(steps)?).ok()?;
    (levels as u64).checked_pow(exp)
}

#[derive(Clone)]
struct Partial {
    state: GridState,
    reward: f64,
    done: bool,
    step: usize,
}

fn advance(spec: &EnvSpec, task: &Task, node: &Partial, action: &[f64]) -> Result<Partial> {
    if node.done {
        return Ok(Partial {
            step: node.step + 1,
            ..node.clone()
        });
    }
    let out = episode_step(
        &node.state,
        action,
        &spec.model,
        task,
        &spec.reward,
        &spec.sim,
    )?;
    Ok(Partial {
        state: out.state,
        reward: node.reward + out.reward,
        done: out.done,
        step: node.step + 1,
    })
}

fn finish(spec: &EnvSpec, task: &Task, mut node: Partial) -> Result<f64> {
    let zero = vec![0.0; spec.model.n_controllable()];
    while !node.done {
        node = advance(spec, task, &node, &zero)?;
    }
    Ok(node.reward)
}

/// Exhaustive search over discretized shedding schedules.
///
/// Every schedule is simulated to the end of the episode; the best total
/// reward wins and ties go to the lexicographically smallest schedule (in
/// level order, decision steps outermost, buses innermost).
pub fn oracle_search(spec: &EnvSpec, task: Task, oracle: &OracleSpec) -> Result<OracleResult> {
    let nb = spec.model.n_controllable();
    let nl = oracle.levels.len();
    if nl == 0 || oracle.decision_steps == 0 {
        return Err(ParsError::InvalidArgument(
            "oracle needs levels and decision steps".into(),
        ));
    }
    let count = schedule_count(nl, nb, oracle.decision_steps);
    match count {
        Some(c) if c <= oracle.max_schedules => {}
        _ => {
            return Err(ParsError::OracleGuard {
                size: format!("{nl}^({nb}x{})", oracle.decision_steps),
                limit: oracle.max_schedules,
            })
        }
    }
    task.validate(&spec.model, spec.sim.horizon)?;

    let first = ((task.clearance() - TIME_EPS) / spec.sim.dt_action)
        .ceil()
        .max(0.0) as usize;
    let zero = vec![0.0; nb];
    let mut node = Partial {
        state: reset(&spec.model, &task)?,
        reward: 0.0,
        done: false,
        step: 0,
    };
    while node.step < first {
        node = advance(spec, &task, &node, &zero)?;
    }

    let combos: Vec<Vec<f64>> = (0..nl.pow(nb as u32))
        .map(|mut code| {
            let mut a = vec![0.0; nb];
            for j in (0..nb).rev() {
                a[j] = oracle.levels[code % nl];
                code /= nl;
            }
            a
        })
        .collect();

    // Branch on the first decision in parallel; each branch is searched
    // depth-first and the branch results are reduced in order.
    let branches: Vec<(f64, Vec<usize>)> = combos
        .par_iter()
        .enumerate()
        .map(|(c, action)| {
            let child = advance(spec, &task, &node, action)?;
            let mut path = vec![c];
            let mut best = (f64::NEG_INFINITY, Vec::new());
            search(
                spec,
                &task,
                &combos,
                child,
                oracle.decision_steps - 1,
                &mut path,
                &mut best,
            )?;
            Ok(best)
        })
        .collect::<Result<_>>()?;

    let (best_reward, best_path) =
        branches
            .into_iter()
            .fold((f64::NEG_INFINITY, Vec::new()), |acc, b| {
                if b.0 > acc.0 {
                    b
                } else {
                    acc
                }
            });
    Ok(OracleResult {
        best_reward,
        best_schedule: best_path.iter().map(|&c| combos[c].clone()).collect(),
        first_decision_step: first,
        evaluated_count: count.expect("guarded above"),
    })
}

fn search(
    spec: &EnvSpec,
    task: &Task,
    combos: &[Vec<f64>],
    node: Partial,
    remaining: usize,
    path: &mut Vec<usize>,
    best: &mut (f64, Vec<usize>),
) -> Result<()> {
    if remaining == 0 {
        let total = finish(spec, task, node)?;
        if total > best.0 {
            *best = (total, path.clone());
        }
        return Ok(());
    }
    for (c, action) in combos.iter().enumerate() {
        let child = advance(spec, task, &node, action)?;
        path.push(c);
        search(spec, task, combos, child, remaining - 1, path, best)?;
        path.pop();
    }
    Ok(())
}

/// Replays an oracle result and returns its trajectory.
pub fn replay_oracle(
    spec: &EnvSpec,
    task: Task,
    result: &OracleResult,
) -> Result<(EpisodeSummary, Vec<TrajectoryRow>)> {
    let nb = spec.model.n_controllable();
    simulate(spec, task, |_, k| result.action_at(k, nb))
}
