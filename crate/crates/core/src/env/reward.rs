use serde::{Deserialize, Serialize};

use super::model::{GridModel, Task};
use super::sim::GridState;
use crate::error::{ParsError, Result};

/// Voltage every monitored bus must hold once the failure delay has passed.
pub const RECOVERED_VOLTAGE: f64 = 0.95;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Weight of the envelope-violation term.
    pub c1: f64,
    /// Weight of the load-shed term (per p.u.).
    pub c2: f64,
    /// Weight of the invalid-action count.
    pub c3: f64,
    /// Failure penalty `M`.
    pub failure_penalty: f64,
    /// All monitored voltages at or above this count as normal operation.
    pub invalid_normal_threshold: f64,
    /// Seconds after clearance at which unrecovered voltage is a failure.
    pub failure_delay: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 2.0,
            c3: 1.0,
            failure_penalty: 1000.0,
            invalid_normal_threshold: 0.95,
            failure_delay: 4.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.c1, self.c2, self.c3];
        if weights.iter().any(|c| !(*c >= 0.0)) {
            return Err(ParsError::Config(
                "reward weights c1, c2, c3 must be non-negative".into(),
            ));
        }
        if !(self.failure_penalty > 0.0) || !(self.failure_delay >= 0.0) {
            return Err(ParsError::Config(
                "failure_penalty must be positive and failure_delay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Transient voltage recovery floor `dt_since_clear` seconds after the fault
/// clears. Boundary instants take the later (higher) threshold.
pub fn envelope(dt_since_clear: f64) -> Result<f64> {
    if !(dt_since_clear >= 0.0) {
        return Err(ParsError::InvalidArgument(format!(
            "time since clearance must be non-negative, got {dt_since_clear}"
        )));
    }
    let t = dt_since_clear + TIME_EPS;
    Ok(if t < 0.33 {
        0.7
    } else if t < 0.5 {
        0.8
    } else if t < 1.5 {
        0.9
    } else {
        0.95
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReward {
    pub reward: f64,
    pub failed: bool,
}

/// Reward of one agent step, evaluated on the state after the step.
///
/// `shed_pu` is the p.u. load shed at each controllable bus during the step
/// and `invalid` the per-bus invalid-action flags.
pub fn step_reward(
    state: &GridState,
    shed_pu: &[f64],
    invalid: &[bool],
    params: &RewardParams,
    task: &Task,
    model: &GridModel,
) -> StepReward {
    let clear = task.clearance();
    let monitored = model.monitored.iter().map(|&i| state.v[i]);
    if state.t > clear + params.failure_delay + TIME_EPS
        && monitored.clone().any(|v| v < RECOVERED_VOLTAGE)
    {
        return StepReward {
            reward: -params.failure_penalty,
            failed: true,
        };
    }
    let floor = if state.t > clear + TIME_EPS {
        envelope(state.t - clear).expect("positive elapsed time")
    } else {
        0.7
    };
    let dv: f64 = monitored.map(|v| (v - floor).min(0.0)).sum();
    let dp: f64 = shed_pu.iter().sum();
    let n_invalid = invalid.iter().filter(|&&f| f).count() as f64;
    StepReward {
        reward: params.c1 * dv - params.c2 * dp - params.c3 * n_invalid,
        failed: false,
    }
}
