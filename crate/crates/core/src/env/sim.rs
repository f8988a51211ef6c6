use serde::{Deserialize, Serialize};

use super::model::{GridModel, Task};
use super::reward::{step_reward, RewardParams};
use crate::error::{ParsError, Result};
use crate::policy::{ACTION_MAX, ACTION_MIN};

const TIME_EPS: f64 = 1e-9;

/// Integration and control timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    /// Dynamics substep (s).
    pub dt: f64,
    /// Agent action interval (s); a whole multiple of `dt`.
    pub dt_action: f64,
    /// Episode length (s).
    pub horizon: f64,
    /// Shed requests smaller than this fraction of initial load are below
    /// the actuator resolution and executed as "no action".
    pub action_deadband: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: 0.02,
            dt_action: 0.1,
            horizon: 8.0,
            action_deadband: 0.02,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.dt_action > 0.0) || !(self.horizon > 0.0) {
            return Err(ParsError::Config(
                "dt, dt_action and horizon must be positive".into(),
            ));
        }
        if !(0.0..=-ACTION_MIN).contains(&self.action_deadband) {
            return Err(ParsError::Config(format!(
                "action_deadband must lie in [0, {}], got {}",
                -ACTION_MIN, self.action_deadband
            )));
        }
        let ratio = self.dt_action / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(ParsError::Config(format!(
                "dt_action {} is not a multiple of dt {}",
                self.dt_action, self.dt
            )));
        }
        Ok(())
    }

    pub fn substeps_per_action(&self) -> usize {
        (self.dt_action / self.dt).round() as usize
    }

    pub fn max_steps(&self) -> usize {
        (self.horizon / self.dt_action - TIME_EPS).ceil() as usize
    }
}

/// Dynamic simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Number of dynamics substeps taken; `t = substeps * dt`.
    pub substeps: u64,
    pub t: f64,
    /// Per-bus voltage (p.u.).
    pub v: Vec<f64>,
    /// Remaining load fraction per controllable bus.
    pub p: Vec<f64>,
    /// Stall fraction per controllable bus.
    pub w: Vec<f64>,
    /// Cumulative load shed (p.u.).
    pub shed_log: f64,
}

/// Flat start: nominal voltages, full load, no stall.
pub fn reset(model: &GridModel, task: &Task) -> Result<GridState> {
    if model.fault_gain(task.fault_bus).is_none() {
        return Err(ParsError::InvalidTask(format!(
            "bus {} is not a fault candidate of '{}'",
            task.fault_bus, model.name
        )));
    }
    Ok(GridState {
        substeps: 0,
        t: 0.0,
        v: model.nominal_v.clone(),
        p: vec![1.0; model.n_controllable()],
        w: vec![0.0; model.n_controllable()],
        shed_log: 0.0,
    })
}

fn fault_active(task: &Task, t: f64) -> bool {
    task.fault_duration > 0.0 && t >= task.fault_start - TIME_EPS && t < task.clearance() - TIME_EPS
}

/// One forward-Euler substep: stall update from the current voltages, then
/// the algebraic voltage solve, then the clock advances.
pub fn dynamics_substep(
    state: &GridState,
    model: &GridModel,
    task: &Task,
    dt: f64,
) -> Result<GridState> {
    let d = &model.dynamics;
    let mut next = state.clone();
    for (j, &bus) in model.controllable.iter().enumerate() {
        let v = state.v[bus];
        let w = state.w[j];
        let stall = d.stall_rate * (d.stall_onset - v).max(0.0) * (1.0 - w);
        let recover = d.recovery_rate * (v - d.recovery_onset).max(0.0) * w;
        next.w[j] = (w + dt * (stall - recover)).clamp(0.0, 1.0);
    }
    let fault = if fault_active(task, state.t) {
        model.fault_gain(task.fault_bus)
    } else {
        None
    };
    for i in 0..model.n_bus() {
        let depression: f64 = model.coupling[i]
            .iter()
            .zip(next.p.iter().zip(&next.w))
            .map(|(k, (p, w))| k * p * (d.base_depression + d.stall_depression * w))
            .sum();
        let dip = fault.map_or(0.0, |g| g[i]);
        next.v[i] = (model.nominal_v[i] - depression - dip).clamp(0.0, 1.2);
    }
    if next.v.iter().chain(&next.w).any(|x| !x.is_finite()) {
        return Err(ParsError::Numeric {
            step: state.substeps as usize,
            msg: "non-finite grid state".into(),
        });
    }
    next.substeps += 1;
    next.t = next.substeps as f64 * dt;
    Ok(next)
}

/// What an action did at each controllable bus.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEffect {
    pub invalid: Vec<bool>,
    /// Load actually shed this step (p.u.).
    pub shed_pu: Vec<f64>,
}

/// Applies a shedding action. Each component is clipped to `[-0.2, 0]` and
/// read as a fraction of the bus's initial load.
///
/// A shed request is invalid when the bus is already fully shed or the system
/// is in normal operation (all monitored voltages at or above
/// `normal_threshold`), judged on the state before the action.
pub fn apply_action(
    state: &GridState,
    action: &[f64],
    model: &GridModel,
    normal_threshold: f64,
) -> Result<(GridState, ActionEffect)> {
    if action.len() != model.n_controllable() {
        return Err(ParsError::Shape {
            what: "action",
            expected: model.n_controllable(),
            actual: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(ParsError::NonFinite("action"));
    }
    let normal = model
        .monitored
        .iter()
        .all(|&i| state.v[i] >= normal_threshold);
    let mut next = state.clone();
    let mut effect = ActionEffect {
        invalid: vec![false; action.len()],
        shed_pu: vec![0.0; action.len()],
    };
    for (j, &raw) in action.iter().enumerate() {
        let a = raw.clamp(ACTION_MIN, ACTION_MAX);
        if a < 0.0 {
            effect.invalid[j] = state.p[j] <= 0.0 || normal;
            let shed = state.p[j].min(-a);
            next.p[j] = (state.p[j] - shed).max(0.0);
            effect.shed_pu[j] = shed * model.load_pu[j];
        }
    }
    next.shed_log += effect.shed_pu.iter().sum::<f64>();
    Ok((next, effect))
}

/// `[v at monitored buses; p at controllable buses]`.
pub fn observe(state: &GridState, model: &GridModel) -> Vec<f64> {
    model
        .monitored
        .iter()
        .map(|&i| state.v[i])
        .chain(state.p.iter().copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub reward: f64,
    pub done: bool,
    pub failed: bool,
    pub effect: ActionEffect,
}

/// One agent step: apply the action, integrate `dt_action`, score.
pub fn episode_step(
    state: &GridState,
    action: &[f64],
    model: &GridModel,
    task: &Task,
    params: &RewardParams,
    sim: &SimSettings,
) -> Result<StepOutcome> {
    let action: Vec<f64> = action
        .iter()
        .map(|&a| {
            if a > -sim.action_deadband {
                a.max(0.0)
            } else {
                a
            }
        })
        .collect();
    let (mut next, effect) = apply_action(state, &action, model, params.invalid_normal_threshold)?;
    for _ in 0..sim.substeps_per_action() {
        next = dynamics_substep(&next, model, task, sim.dt)?;
    }
    let scored = step_reward(&next, &effect.shed_pu, &effect.invalid, params, task, model);
    let done = scored.failed || next.t >= sim.horizon - TIME_EPS;
    Ok(StepOutcome {
        state: next,
        reward: scored.reward,
        done,
        failed: scored.failed,
        effect,
    })
}

/// Everything an episode needs besides the task: shared read-only by all
/// concurrent rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub model: GridModel,
    pub reward: RewardParams,
    pub sim: SimSettings,
}

impl EnvSpec {
    pub fn new(model: GridModel, reward: RewardParams, sim: SimSettings) -> Result<Self> {
        model.validate()?;
        reward.validate()?;
        sim.validate()?;
        Ok(Self { model, reward, sim })
    }

    pub fn obs_dim(&self) -> usize {
        self.model.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.model.n_controllable()
    }
}

/// Episode summary shared by rollouts, baselines and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub steps: usize,
    pub failed: bool,
    pub load_shed_total: f64,
}

/// Single-threaded, episode-local environment.
#[derive(Debug, Clone)]
pub struct GridEnv<'a> {
    spec: &'a EnvSpec,
    task: Task,
    state: GridState,
    summary: EpisodeSummary,
    done: bool,
}

impl<'a> GridEnv<'a> {
    pub fn new(spec: &'a EnvSpec, task: Task) -> Result<Self> {
        task.validate(&spec.model, spec.sim.horizon)?;
        let state = reset(&spec.model, &task)?;
        Ok(Self {
            spec,
            task,
            state,
            summary: EpisodeSummary::default(),
            done: false,
        })
    }

    pub fn reset(&mut self) -> Result<Vec<f64>> {
        self.state = reset(&self.spec.model, &self.task)?;
        self.summary = EpisodeSummary::default();
        self.done = false;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Vec<f64> {
        observe(&self.state, &self.spec.model)
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn spec(&self) -> &EnvSpec {
        self.spec
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn summary(&self) -> EpisodeSummary {
        self.summary
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(ParsError::InvalidArgument(
                "episode already finished".into(),
            ));
        }
        let out = episode_step(
            &self.state,
            action,
            &self.spec.model,
            &self.task,
            &self.spec.reward,
            &self.spec.sim,
        )
        .map_err(|e| match e {
            ParsError::Numeric { msg, .. } => ParsError::Numeric {
                step: self.summary.steps,
                msg,
            },
            other => other,
        })?;
        self.state = out.state.clone();
        self.done = out.done;
        self.summary.total_reward += out.reward;
        self.summary.steps += 1;
        self.summary.failed |= out.failed;
        self.summary.load_shed_total = self.state.shed_log;
        Ok(out)
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    /// Monitored-bus voltages, in `model.monitored` order.
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// Writes `t, v_<bus>..., p_<bus>..., a_<bus>..., reward` rows.
pub fn write_trajectory_csv<W: std::io::Write>(
    out: W,
    model: &GridModel,
    rows: &[TrajectoryRow],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(model.monitored.iter().map(|b| format!("v_{b}")));
    header.extend(model.controllable.iter().map(|b| format!("p_{b}")));
    header.extend(model.controllable.iter().map(|b| format!("a_{b}")));
    header.push("reward".into());
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        rec.extend(
            r.v.iter()
                .chain(&r.p)
                .chain(&r.action)
                .map(|x| x.to_string()),
        );
        rec.push(r.reward.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Runs one episode with an open-loop or state-feedback controller and
/// records the trajectory.
pub fn simulate<F>(
    spec: &EnvSpec,
    task: Task,
    mut controller: F,
) -> Result<(EpisodeSummary, Vec<TrajectoryRow>)>
where
    F: FnMut(&GridState, usize) -> Vec<f64>,
{
    let mut env = GridEnv::new(spec, task)?;
    let mut rows = Vec::with_capacity(spec.sim.max_steps());
    let mut k = 0;
    while !env.is_done() {
        let action = controller(env.state(), k);
        let out = env.step(&action)?;
        rows.push(TrajectoryRow {
            t: out.state.t,
            v: spec
                .model
                .monitored
                .iter()
                .map(|&i| out.state.v[i])
                .collect(),
            p: out.state.p.clone(),
            action,
            reward: out.reward,
        });
        k += 1;
    }
    Ok((env.summary(), rows))
}
