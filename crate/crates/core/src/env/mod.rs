//! Surrogate FIDVR environment: stall-fraction dynamics with algebraic
//! voltage coupling, per-bus shedding actions and the envelope reward.

mod document;
mod model;
mod presets;
mod reward;
mod sim;

pub use document::GridDocument;
pub use model::{task_sweep, DynamicsConstants, FaultGain, GridModel, Task};
pub use presets::{preset, surrogate_39like, surrogate_3bus, PRESET_39LIKE, PRESET_3BUS};
pub use reward::{envelope, step_reward, RewardParams, StepReward, RECOVERED_VOLTAGE};
pub use sim::{
    apply_action, dynamics_substep, episode_step, observe, reset, simulate, write_trajectory_csv,
    ActionEffect, EnvSpec, EpisodeSummary, GridEnv, GridState, SimSettings, StepOutcome,
    TrajectoryRow,
};

#[cfg(test)]
mod tests;
