//! Run configuration: a TOML document with one section per subsystem.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/demo"
//!
//! [ars]
//! alpha = 1.0
//! nu = 2.0
//! num_directions = 16
//! top_directions = 8
//! decay = 0.99
//! iterations = 300
//!
//! [policy]
//! kind = "lstm"
//! hidden_sizes = [32, 32]
//!
//! [env]
//! preset = "surrogate-3bus"
//!
//! [tasks]
//! train_durations = [0.0, 0.1, 0.15]
//! ```
//!
//! Every omitted field takes its default, and [`RunConfig::to_toml_string`]
//! writes the fully resolved document back out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ars::{Hyperparameters, TrainConfig};
use crate::baselines::{OracleSpec, UvlsSettings};
use crate::env::{
    preset, task_sweep, EnvSpec, GridDocument, GridModel, RewardParams, SimSettings, Task,
    PRESET_3BUS,
};
use crate::error::{ParsError, Result};
use crate::eval::DEFAULT_BIN_WIDTH;
use crate::policy::{PolicyArchitecture, PolicyKind};
use crate::rollout::{ParallelConfig, TaskSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArsSection {
    pub alpha: f64,
    pub nu: f64,
    pub num_directions: usize,
    pub top_directions: usize,
    /// Defaults to `locations_per_iteration x |train_durations|`.
    pub rollouts_per_direction: Option<usize>,
    pub decay: f64,
    pub iterations: u64,
}

impl Default for ArsSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            nu: 2.0,
            num_directions: 16,
            top_directions: 8,
            rollouts_per_direction: None,
            decay: 0.99,
            iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Defaults to `[32, 32]`, or empty for linear policies.
    pub hidden_sizes: Option<Vec<usize>>,
    /// Defaults to 9 for linear/FNN policies and 0 for LSTM.
    pub history_stack: Option<usize>,
    /// Optional cross-checks against the environment.
    pub obs_dim: Option<usize>,
    pub act_dim: Option<usize>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Lstm,
            hidden_sizes: None,
            history_stack: None,
            obs_dim: None,
            act_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct EnvSection {
    /// Name of a bundled model; ignored when `model` is set.
    pub preset: Option<String>,
    /// Path to a grid model document, relative to the config file.
    pub model: Option<PathBuf>,
    pub sim: SimSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksSection {
    /// Defaults to every fault candidate of the model.
    pub train_locations: Option<Vec<usize>>,
    pub train_durations: Vec<f64>,
    /// Defaults to `min(3, |train_locations|)`.
    pub locations_per_iteration: Option<usize>,
    pub fault_start: f64,
    /// Defaults to the training locations.
    pub test_locations: Option<Vec<usize>>,
    pub test_durations: Vec<f64>,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self {
            train_locations: None,
            train_durations: vec![0.0, 0.1, 0.15],
            locations_per_iteration: None,
            fault_start: 1.0,
            test_locations: None,
            test_durations: vec![0.05, 0.08, 0.11, 0.12, 0.13, 0.14, 0.16, 0.18],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Greedy evaluation period during training (0 = final iteration only).
    pub every: u64,
    /// Checkpoint period during training (0 = final checkpoint only).
    pub checkpoint_every: u64,
    pub bin_width: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            every: 10,
            checkpoint_every: 50,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub ars: ArsSection,
    pub policy: PolicySection,
    pub env: EnvSection,
    pub reward: RewardParams,
    pub tasks: TasksSection,
    pub uvls: UvlsSettings,
    pub oracle: OracleSpec,
    pub parallel: ParallelConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            ars: ArsSection::default(),
            policy: PolicySection::default(),
            env: EnvSection::default(),
            reward: RewardParams::default(),
            tasks: TasksSection::default(),
            uvls: UvlsSettings::default(),
            oracle: OracleSpec::default(),
            parallel: ParallelConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses, fills defaults and validates. Relative model paths are
    /// resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ParsError::Config(e.to_string()))?;
        if let (Some(model), Some(base)) = (&cfg.env.model, base_dir) {
            if model.is_relative() {
                cfg.env.model = Some(base.join(model));
            }
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParsError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
            .map_err(|e| ParsError::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| ParsError::Config(e.to_string()))
    }

    /// Fills every optional field and cross-validates the sections.
    pub fn resolve(&mut self) -> Result<()> {
        if self.env.model.is_none() && self.env.preset.is_none() {
            self.env.preset = Some(PRESET_3BUS.into());
        }
        let model = self.model()?;
        let t = &mut self.tasks;
        let train = t
            .train_locations
            .get_or_insert_with(|| model.fault_buses())
            .clone();
        let k = *t.locations_per_iteration.get_or_insert(train.len().min(3));
        if t.test_locations.is_none() {
            t.test_locations = Some(train.clone());
        }
        let m = k * t.train_durations.len();
        self.ars.rollouts_per_direction.get_or_insert(m);
        let stack = match self.policy.kind {
            PolicyKind::Lstm => 0,
            _ => 9,
        };
        self.policy.history_stack.get_or_insert(stack);
        let hidden = match self.policy.kind {
            PolicyKind::Linear => Vec::new(),
            _ => vec![32, 32],
        };
        self.policy.hidden_sizes.get_or_insert(hidden);
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env_spec()?;
        let arch = self.architecture()?;
        arch.validate()?;
        if let Some(d) = self.policy.obs_dim {
            if d != env.obs_dim() {
                return Err(ParsError::Config(format!(
                    "policy.obs_dim = {d} but the environment observes {} values",
                    env.obs_dim()
                )));
            }
        }
        if let Some(d) = self.policy.act_dim {
            if d != env.act_dim() {
                return Err(ParsError::Config(format!(
                    "policy.act_dim = {d} but the environment controls {} buses",
                    env.act_dim()
                )));
            }
        }
        self.hyperparameters()?.validate()?;
        self.uvls.validate()?;
        self.oracle.validate()?;
        self.parallel.validate()?;
        if !(self.eval.bin_width > 0.0) {
            return Err(ParsError::Config("eval.bin_width must be positive".into()));
        }
        for task in self.test_tasks()? {
            task.validate(&env.model, env.sim.horizon)
                .map_err(|e| ParsError::Config(format!("test task: {}", strip_prefix(&e))))?;
        }
        self.train_config()?.validate()
    }

    pub fn model(&self) -> Result<GridModel> {
        match (&self.env.model, &self.env.preset) {
            (Some(path), _) => Ok(GridDocument::load(path)?.model()),
            (None, Some(name)) => preset(name),
            (None, None) => preset(PRESET_3BUS),
        }
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::new(self.model()?, self.reward.clone(), self.env.sim.clone())
    }

    pub fn architecture(&self) -> Result<PolicyArchitecture> {
        let env = self.env_spec()?;
        let (obs, act) = (env.obs_dim(), env.act_dim());
        let stack = self.policy.history_stack.unwrap_or(0);
        let hidden = match (&self.policy.hidden_sizes, self.policy.kind) {
            (Some(h), _) => h.clone(),
            (None, PolicyKind::Linear) => Vec::new(),
            (None, _) => vec![32, 32],
        };
        let hidden = &hidden;
        Ok(match self.policy.kind {
            PolicyKind::Linear => {
                let mut a = PolicyArchitecture::linear(obs, act, stack);
                a.hidden_sizes = hidden.clone();
                a
            }
            PolicyKind::Fnn => PolicyArchitecture::fnn(obs, act, stack, hidden),
            PolicyKind::Lstm => {
                let mut a = PolicyArchitecture::lstm(obs, act, hidden);
                a.history_stack = stack;
                a
            }
        })
    }

    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        let a = &self.ars;
        Ok(Hyperparameters {
            alpha: a.alpha,
            nu: a.nu,
            num_directions: a.num_directions,
            top_directions: a.top_directions,
            rollouts_per_direction: a
                .rollouts_per_direction
                .ok_or_else(|| ParsError::Config("ars.rollouts_per_direction unresolved".into()))?,
            decay: a.decay,
            iterations: a.iterations,
            seed: self.seed,
        })
    }

    pub fn train_sampler(&self) -> Result<TaskSampler> {
        let t = &self.tasks;
        let locations = t
            .train_locations
            .clone()
            .ok_or_else(|| ParsError::Config("tasks.train_locations unresolved".into()))?;
        Ok(TaskSampler {
            locations_per_iteration: t.locations_per_iteration.unwrap_or(locations.len().min(3)),
            locations,
            durations: t.train_durations.clone(),
            fault_start: t.fault_start,
        })
    }

    pub fn train_tasks(&self) -> Result<Vec<Task>> {
        Ok(self.train_sampler()?.all_tasks())
    }

    /// Test sweep minus any task that also appears in the training set.
    pub fn test_tasks(&self) -> Result<Vec<Task>> {
        let t = &self.tasks;
        let locations = t
            .test_locations
            .clone()
            .or_else(|| t.train_locations.clone())
            .unwrap_or_default();
        let train = self.train_tasks()?;
        Ok(task_sweep(&locations, &t.test_durations, t.fault_start)
            .into_iter()
            .filter(|task| !train.contains(task))
            .collect())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            hyper: self.hyperparameters()?,
            architecture: self.architecture()?,
            env: self.env_spec()?,
            tasks: self.train_sampler()?,
            parallel: self.parallel.clone(),
            eval_every: self.eval.every,
        })
    }

    /// SHA-256 over the sections that determine training results. Worker
    /// counts, output paths, the iteration budget and the evaluation
    /// settings are excluded, so a checkpoint stays resumable when only
    /// those change.
    pub fn digest(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Material<'a> {
            seed: u64,
            ars: ArsSection,
            architecture: PolicyArchitecture,
            model: GridModel,
            sim: &'a SimSettings,
            reward: &'a RewardParams,
            tasks: TaskSampler,
        }
        let material = Material {
            seed: self.seed,
            ars: ArsSection {
                iterations: 0,
                ..self.ars.clone()
            },
            architecture: self.architecture()?,
            model: self.model()?,
            sim: &self.env.sim,
            reward: &self.reward,
            tasks: self.train_sampler()?,
        };
        let bytes = serde_json::to_vec(&material)?;
        Ok(Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

fn strip_prefix(e: &ParsError) -> String {
    match e {
        ParsError::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}
