use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DynamicsConstants, FaultGain, GridModel, Task};
use super::reward::RewardParams;
use crate::error::{ParsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSection {
    pub nominal_v: Vec<f64>,
    pub monitored: Vec<usize>,
    pub controllable: Vec<usize>,
    pub load_pu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSection {
    pub rows: Vec<Vec<f64>>,
}

/// TOML form of a grid model plus its reward parameters and task list.
///
/// ```toml
/// name = "pocket"
/// [buses]
/// nominal_v = [1.04, 1.03]
/// monitored = [0, 1]
/// controllable = [1]
/// load_pu = [2.0]
/// [coupling]
/// rows = [[0.3], [1.0]]
/// [[fault_gains]]
/// bus = 1
/// gains = [0.4, 0.7]
/// [dynamics]
/// stall_rate = 4.0
/// [[tasks]]
/// fault_bus = 1
/// fault_duration = 0.1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub name: String,
    pub buses: BusSection,
    pub coupling: CouplingSection,
    pub fault_gains: Vec<FaultGain>,
    #[serde(default)]
    pub dynamics: DynamicsConstants,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub tasks: Vec<Task>,
}

impl GridDocument {
    pub fn from_model(model: &GridModel, reward: RewardParams, tasks: Vec<Task>) -> Self {
        Self {
            name: model.name.clone(),
            buses: BusSection {
                nominal_v: model.nominal_v.clone(),
                monitored: model.monitored.clone(),
                controllable: model.controllable.clone(),
                load_pu: model.load_pu.clone(),
            },
            coupling: CouplingSection {
                rows: model.coupling.clone(),
            },
            fault_gains: model.fault_gains.clone(),
            dynamics: model.dynamics.clone(),
            reward,
            tasks,
        }
    }

    pub fn model(&self) -> GridModel {
        GridModel {
            name: self.name.clone(),
            nominal_v: self.buses.nominal_v.clone(),
            monitored: self.buses.monitored.clone(),
            controllable: self.buses.controllable.clone(),
            load_pu: self.buses.load_pu.clone(),
            coupling: self.coupling.rows.clone(),
            fault_gains: self.fault_gains.clone(),
            dynamics: self.dynamics.clone(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: Self = toml::from_str(text).map_err(|e| ParsError::Config(e.to_string()))?;
        doc.model().validate()?;
        doc.reward.validate()?;
        Ok(doc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ParsError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
            .map_err(|e| ParsError::Config(format!("{}: {e}", path.display())))
    }
}
