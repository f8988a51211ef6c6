//! Bundled surrogate networks.
//!
//! `surrogate-3bus` is a tiny load pocket used by tests and the exhaustive
//! oracle; `surrogate-39like` mirrors the monitored/controlled bus layout of
//! the 39-bus load-center experiments at surrogate fidelity.

use super::model::{DynamicsConstants, FaultGain, GridModel};
use crate::error::{ParsError, Result};

pub const PRESET_3BUS: &str = "surrogate-3bus";
pub const PRESET_39LIKE: &str = "surrogate-39like";

pub fn preset(name: &str) -> Result<GridModel> {
    match name {
        PRESET_3BUS => Ok(surrogate_3bus()),
        PRESET_39LIKE => Ok(surrogate_39like()),
        other => Err(ParsError::Config(format!(
            "unknown env preset '{other}' (expected {PRESET_3BUS} or {PRESET_39LIKE})"
        ))),
    }
}

/// Bus 0 is a stiff transmission node; buses 1 and 2 serve motor-heavy load.
pub fn surrogate_3bus() -> GridModel {
    GridModel {
        name: PRESET_3BUS.into(),
        nominal_v: vec![1.04, 1.03, 1.03],
        monitored: vec![0, 1, 2],
        controllable: vec![1, 2],
        load_pu: vec![0.5, 0.4],
        coupling: vec![vec![0.3, 0.3], vec![1.0, 0.15], vec![0.15, 1.0]],
        fault_gains: vec![
            FaultGain {
                bus: 0,
                gains: vec![0.6, 0.25, 0.25],
            },
            FaultGain {
                bus: 1,
                gains: vec![0.35, 0.75, 0.35],
            },
            FaultGain {
                bus: 2,
                gains: vec![0.35, 0.35, 0.75],
            },
        ],
        dynamics: DynamicsConstants::default(),
    }
}

const LOAD_CENTER: [usize; 4] = [3, 6, 7, 17];
const CONTROLLED_39: [usize; 3] = [3, 6, 17];

/// Electrical coordinate of a bus; the load center is pulled together.
fn coordinate(bus: usize) -> f64 {
    match bus {
        3 => 4.0,
        6 => 5.0,
        7 => 5.5,
        17 => 6.0,
        b => b as f64,
    }
}

fn distance(a: usize, b: usize) -> f64 {
    (coordinate(a) - coordinate(b)).abs()
}

pub fn surrogate_39like() -> GridModel {
    let n = 39;
    let nominal_v = (0..n)
        .map(|i| {
            if LOAD_CENTER.contains(&i) {
                1.03
            } else {
                1.0 + 0.01 * (i % 5) as f64
            }
        })
        .collect();
    let coupling = (0..n)
        .map(|i| {
            CONTROLLED_39
                .iter()
                .map(|&j| {
                    if i == j {
                        1.0
                    } else {
                        0.35 * (-distance(i, j) / 2.0).exp()
                    }
                })
                .collect()
        })
        .collect();
    let fault_gains = (0..30)
        .map(|f| FaultGain {
            bus: f,
            gains: (0..n)
                .map(|i| 0.8 * (-distance(i, f) / 3.0).exp())
                .collect(),
        })
        .collect();
    GridModel {
        name: PRESET_39LIKE.into(),
        nominal_v,
        monitored: LOAD_CENTER.to_vec(),
        controllable: CONTROLLED_39.to_vec(),
        load_pu: vec![5.0, 2.3, 3.2],
        coupling,
        fault_gains,
        dynamics: DynamicsConstants::default(),
    }
}
