use serde::{Deserialize, Serialize};

use crate::error::{ParsError, Result};

/// Constants of the reduced-order stall/recovery dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConstants {
    /// Voltage below which dynamic load starts to stall (p.u.).
    pub stall_onset: f64,
    /// Voltage above which stalled load recovers (p.u.).
    pub recovery_onset: f64,
    /// 1/s per p.u. of undervoltage.
    pub stall_rate: f64,
    /// 1/s per p.u. of overvoltage.
    pub recovery_rate: f64,
    /// Voltage depression per unit of served load (p.u.).
    pub base_depression: f64,
    /// Extra depression per unit of stalled load (p.u.).
    pub stall_depression: f64,
}

impl Default for DynamicsConstants {
    fn default() -> Self {
        Self {
            stall_onset: 0.75,
            recovery_onset: 0.85,
            stall_rate: 4.0,
            recovery_rate: 2.0,
            base_depression: 0.05,
            stall_depression: 0.25,
        }
    }
}

/// Per-bus voltage dip caused by a fault at `bus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultGain {
    pub bus: usize,
    pub gains: Vec<f64>,
}

/// Surrogate network description. Immutable once validated and safe to share
/// between concurrent episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub name: String,
    pub nominal_v: Vec<f64>,
    pub monitored: Vec<usize>,
    pub controllable: Vec<usize>,
    /// Initial load of each controllable bus (p.u.), used to convert shed
    /// fractions into p.u. amounts.
    pub load_pu: Vec<f64>,
    /// `n_bus x n_controllable`: voltage depression per unit of load.
    pub coupling: Vec<Vec<f64>>,
    pub fault_gains: Vec<FaultGain>,
    pub dynamics: DynamicsConstants,
}

impl GridModel {
    pub fn n_bus(&self) -> usize {
        self.nominal_v.len()
    }

    pub fn n_controllable(&self) -> usize {
        self.controllable.len()
    }

    pub fn n_monitored(&self) -> usize {
        self.monitored.len()
    }

    /// Width of one observation frame.
    pub fn obs_dim(&self) -> usize {
        self.n_monitored() + self.n_controllable()
    }

    pub fn fault_gain(&self, bus: usize) -> Option<&[f64]> {
        self.fault_gains
            .iter()
            .find(|g| g.bus == bus)
            .map(|g| g.gains.as_slice())
    }

    pub fn fault_buses(&self) -> Vec<usize> {
        self.fault_gains.iter().map(|g| g.bus).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(ParsError::Config(format!(
                "grid model '{}': {msg}",
                self.name
            )))
        };
        let n = self.n_bus();
        if n == 0 {
            return bad("no buses".into());
        }
        if let Some(v) = self.nominal_v.iter().find(|v| !(0.95..=1.05).contains(*v)) {
            return bad(format!("nominal voltage {v} outside [0.95, 1.05]"));
        }
        if self.monitored.is_empty() || self.controllable.is_empty() {
            return bad("need at least one monitored and one controllable bus".into());
        }
        if let Some(b) = self
            .monitored
            .iter()
            .chain(&self.controllable)
            .find(|&&b| b >= n)
        {
            return bad(format!("bus index {b} out of range (n_bus = {n})"));
        }
        if self.load_pu.len() != self.n_controllable() || self.load_pu.iter().any(|l| !(*l > 0.0)) {
            return bad("load_pu needs one positive entry per controllable bus".into());
        }
        if self.coupling.len() != n
            || self
                .coupling
                .iter()
                .any(|r| r.len() != self.n_controllable())
        {
            return bad(format!(
                "coupling must be {n} rows of {} entries",
                self.n_controllable()
            ));
        }
        if self
            .coupling
            .iter()
            .flatten()
            .any(|k| !(*k >= 0.0) || !k.is_finite())
        {
            return bad("coupling entries must be finite and non-negative".into());
        }
        for g in &self.fault_gains {
            if g.bus >= n || g.gains.len() != n {
                return bad(format!("fault gain row for bus {} malformed", g.bus));
            }
            if g.gains.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return bad(format!(
                    "fault gains for bus {} must be non-negative",
                    g.bus
                ));
            }
        }
        let d = &self.dynamics;
        if !(0.0 < d.stall_onset && d.stall_onset < d.recovery_onset && d.recovery_onset <= 1.0) {
            return bad("need 0 < stall_onset < recovery_onset <= 1".into());
        }
        if d.stall_rate < 0.0
            || d.recovery_rate < 0.0
            || d.base_depression < 0.0
            || d.stall_depression < 0.0
        {
            return bad("rates and depressions must be non-negative".into());
        }
        Ok(())
    }
}

/// Fault scenario defining one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub fault_bus: usize,
    #[serde(default = "default_fault_start")]
    pub fault_start: f64,
    pub fault_duration: f64,
}

fn default_fault_start() -> f64 {
    1.0
}

impl Task {
    pub fn new(fault_bus: usize, fault_duration: f64) -> Self {
        Self {
            fault_bus,
            fault_start: default_fault_start(),
            fault_duration,
        }
    }

    /// Fault clearance instant `T_pf`.
    pub fn clearance(&self) -> f64 {
        self.fault_start + self.fault_duration
    }

    pub fn id(&self) -> String {
        format!("bus{}_{:.3}s", self.fault_bus, self.fault_duration)
    }

    pub fn validate(&self, model: &GridModel, horizon: f64) -> Result<()> {
        if model.fault_gain(self.fault_bus).is_none() {
            return Err(ParsError::InvalidTask(format!(
                "bus {} is not a fault candidate of '{}'",
                self.fault_bus, model.name
            )));
        }
        if !(self.fault_duration >= 0.0) || !(self.fault_start >= 0.0) {
            return Err(ParsError::InvalidTask(format!(
                "fault start/duration must be non-negative, got {}/{}",
                self.fault_start, self.fault_duration
            )));
        }
        if self.clearance() >= horizon {
            return Err(ParsError::InvalidTask(format!(
                "fault clears at {} s, not before the {horizon} s horizon",
                self.clearance()
            )));
        }
        Ok(())
    }
}

/// Every combination of fault bus and duration, buses outermost.
pub fn task_sweep(buses: &[usize], durations: &[f64], fault_start: f64) -> Vec<Task> {
    buses
        .iter()
        .flat_map(|&b| {
            durations.iter().map(move |&d| Task {
                fault_bus: b,
                fault_start,
                fault_duration: d,
            })
        })
        .collect()
}
