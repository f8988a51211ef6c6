//! Python bindings: configs, training, checkpoints, evaluation and the
//! baselines. Long-running calls release the GIL.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pars_core::ars::Learner;
use pars_core::baselines::oracle_search;
use pars_core::checkpoint::Checkpoint as CoreCheckpoint;
use pars_core::cli::train_to_dir;
use pars_core::config::RunConfig as CoreConfig;
use pars_core::env::Task;
use pars_core::eval::{compare, evaluate_policy, evaluate_uvls, TaskOutcome};
use pars_core::normalizer::Normalizer as CoreNormalizer;
use pars_core::policy::PolicyArchitecture;
use pars_core::rollout::WorkerPool;
use pars_core::ParsError;

fn to_py(err: ParsError) -> PyErr {
    match err {
        ParsError::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (ParsError::Config(_)
        | ParsError::InvalidArchitecture(_)
        | ParsError::InvalidArgument(_)
        | ParsError::InvalidHyperparameters(_)
        | ParsError::InvalidTask(_)
        | ParsError::Incompatible(_)
        | ParsError::Shape { .. }
        | ParsError::NonFinite(_)
        | ParsError::OracleGuard { .. }) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn architecture(
    kind: &str,
    obs_dim: usize,
    act_dim: usize,
    hidden_sizes: &[usize],
    history_stack: usize,
) -> PyResult<PolicyArchitecture> {
    Ok(match kind {
        "linear" => PolicyArchitecture::linear(obs_dim, act_dim, history_stack),
        "fnn" => PolicyArchitecture::fnn(obs_dim, act_dim, history_stack, hidden_sizes),
        "lstm" => PolicyArchitecture::lstm(obs_dim, act_dim, hidden_sizes),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown policy kind '{other}' (expected linear, fnn or lstm)"
            )))
        }
    })
}

/// Number of weights of a policy architecture.
#[pyfunction]
#[pyo3(signature = (kind, obs_dim, act_dim, hidden_sizes = Vec::new(), history_stack = 1))]
fn param_count(
    kind: &str,
    obs_dim: usize,
    act_dim: usize,
    hidden_sizes: Vec<usize>,
    history_stack: usize,
) -> PyResult<usize> {
    architecture(kind, obs_dim, act_dim, &hidden_sizes, history_stack)?
        .param_count()
        .map_err(to_py)
}

/// Running observation statistics with an exact parallel merge.
#[pyclass(module = "pars_py", skip_from_py_object)]
#[derive(Clone)]
struct Normalizer {
    inner: CoreNormalizer,
}

#[pymethods]
impl Normalizer {
    #[new]
    fn new(dim: usize) -> Self {
        Self {
            inner: CoreNormalizer::new(dim),
        }
    }

    fn update(&mut self, obs: Vec<f64>) -> PyResult<()> {
        self.inner.update(&obs).map_err(to_py)
    }

    fn merge(&self, other: &Normalizer) -> PyResult<Normalizer> {
        Ok(Normalizer {
            inner: self.inner.merge(&other.inner).map_err(to_py)?,
        })
    }

    fn normalize(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.normalize(&obs).map_err(to_py)
    }

    #[getter]
    fn count(&self) -> u64 {
        self.inner.count
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    #[getter]
    fn std(&self) -> Vec<f64> {
        self.inner.std()
    }
}

/// A resolved run configuration.
#[pyclass(module = "pars_py", skip_from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreConfig,
}

#[pymethods]
impl RunConfig {
    /// Parses TOML text; an empty string gives the defaults.
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::from_toml_str(toml, None).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::load(&path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn digest(&self) -> PyResult<String> {
        self.inner.digest().map_err(to_py)
    }

    #[getter]
    fn obs_dim(&self) -> PyResult<usize> {
        Ok(self.inner.env_spec().map_err(to_py)?.obs_dim())
    }

    #[getter]
    fn act_dim(&self) -> PyResult<usize> {
        Ok(self.inner.env_spec().map_err(to_py)?.act_dim())
    }

    fn param_count(&self) -> PyResult<usize> {
        self.inner
            .architecture()
            .and_then(|a| a.param_count())
            .map_err(to_py)
    }

    /// `(fault_bus, fault_duration)` pairs of the training or test set.
    #[pyo3(signature = (which = "train"))]
    fn tasks(&self, which: &str) -> PyResult<Vec<(usize, f64)>> {
        Ok(task_set(&self.inner, which)?
            .into_iter()
            .map(|t| (t.fault_bus, t.fault_duration))
            .collect())
    }
}

/// Learner state stored on disk.
#[pyclass(module = "pars_py", skip_from_py_object)]
#[derive(Clone)]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCheckpoint::load(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCheckpoint::from_json(text).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.as_slice().to_vec()
    }

    #[getter]
    fn normalizer(&self) -> Normalizer {
        Normalizer {
            inner: self.inner.normalizer.clone(),
        }
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.architecture.kind.to_string()
    }

    #[getter]
    fn config_digest(&self) -> String {
        self.inner.config_digest.clone()
    }
}

fn task_set(cfg: &CoreConfig, which: &str) -> PyResult<Vec<Task>> {
    match which {
        "train" => cfg.train_tasks(),
        "test" => cfg.test_tasks(),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown task set '{other}' (expected train or test)"
            )))
        }
    }
    .map_err(to_py)
}

/// Trains to completion. With `out_dir`, checkpoints and the curve are
/// written there exactly as the command line does.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, resume = None))]
fn train(
    py: Python<'_>,
    config: &RunConfig,
    out_dir: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> PyResult<Checkpoint> {
    let cfg = config.inner.clone();
    let inner = py
        .detach(move || -> pars_core::Result<CoreCheckpoint> {
            let state = match &out_dir {
                Some(dir) => train_to_dir(&cfg, dir, resume.as_deref())?,
                None => {
                    let mut learner = Learner::new(cfg.train_config()?)?;
                    learner.run(|_, _| Ok(()))?;
                    learner.into_state()
                }
            };
            Ok(CoreCheckpoint::from_state(
                &state,
                &cfg.architecture()?,
                &cfg.hyperparameters()?,
                cfg.digest()?,
            ))
        })
        .map_err(to_py)?;
    Ok(Checkpoint { inner })
}

fn outcome_dicts<'py>(py: Python<'py>, rows: &[TaskOutcome]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("task_id", &r.task_id)?;
            d.set_item("reward", r.reward)?;
            d.set_item("load_shed", r.load_shed)?;
            d.set_item("failed", r.failed)?;
            Ok(d)
        })
        .collect()
}

fn policy_outcomes(
    cfg: &CoreConfig,
    ckpt: &CoreCheckpoint,
    tasks: &[Task],
) -> pars_core::Result<Vec<TaskOutcome>> {
    let env = cfg.env_spec()?;
    ckpt.ensure_compatible(env.obs_dim(), env.act_dim())?;
    let pool = WorkerPool::new(cfg.parallel.clone())?;
    evaluate_policy(
        &ckpt.architecture,
        &ckpt.weights,
        &ckpt.normalizer,
        &env,
        tasks,
        &pool,
    )
}

/// Greedy per-task outcomes of a checkpoint.
#[pyfunction]
#[pyo3(signature = (config, checkpoint, tasks = "test"))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &RunConfig,
    checkpoint: &Checkpoint,
    tasks: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let set = task_set(&config.inner, tasks)?;
    let (cfg, ckpt) = (config.inner.clone(), checkpoint.inner.clone());
    let rows = py
        .detach(move || policy_outcomes(&cfg, &ckpt, &set))
        .map_err(to_py)?;
    outcome_dicts(py, &rows)
}

/// Per-task outcomes of the UVLS relays.
#[pyfunction]
#[pyo3(signature = (config, tasks = "test"))]
fn evaluate_uvls_baseline<'py>(
    py: Python<'py>,
    config: &RunConfig,
    tasks: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let set = task_set(&config.inner, tasks)?;
    let cfg = config.inner.clone();
    let rows = py
        .detach(move || {
            let pool = WorkerPool::new(cfg.parallel.clone())?;
            evaluate_uvls(&cfg.env_spec()?, &set, &cfg.uvls, &pool)
        })
        .map_err(to_py)?;
    outcome_dicts(py, &rows)
}

/// Summary of a checkpoint against UVLS, or against `baseline` when given.
#[pyfunction]
#[pyo3(signature = (config, checkpoint, baseline = None, tasks = "test"))]
fn compare_to_baseline<'py>(
    py: Python<'py>,
    config: &RunConfig,
    checkpoint: &Checkpoint,
    baseline: Option<&Checkpoint>,
    tasks: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let set = task_set(&config.inner, tasks)?;
    let (cfg, ckpt) = (config.inner.clone(), checkpoint.inner.clone());
    let other = baseline.map(|b| b.inner.clone());
    let report = py
        .detach(move || {
            let policy = policy_outcomes(&cfg, &ckpt, &set)?;
            let base = match &other {
                Some(b) => policy_outcomes(&cfg, b, &set)?,
                None => {
                    let pool = WorkerPool::new(cfg.parallel.clone())?;
                    evaluate_uvls(&cfg.env_spec()?, &set, &cfg.uvls, &pool)?
                }
            };
            compare(&policy, &base, cfg.eval.bin_width)
        })
        .map_err(to_py)?;
    let s = &report.summary;
    let d = PyDict::new(py);
    d.set_item("tasks", s.tasks)?;
    d.set_item("positive_fraction", s.positive_fraction)?;
    d.set_item("mean_difference", s.mean_difference)?;
    d.set_item("policy_failures", s.policy_failures)?;
    d.set_item("baseline_failures", s.baseline_failures)?;
    d.set_item("policy_mean_reward", s.policy_mean_reward)?;
    d.set_item("baseline_mean_reward", s.baseline_mean_reward)?;
    d.set_item(
        "differences",
        report
            .rows
            .iter()
            .map(|r| r.reward_difference)
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Exhaustive schedule search for one fault: `(best_reward, schedule)`.
#[pyfunction]
#[pyo3(signature = (config, fault_bus, fault_duration, fault_start = 1.0))]
fn oracle(
    py: Python<'_>,
    config: &RunConfig,
    fault_bus: usize,
    fault_duration: f64,
    fault_start: f64,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let cfg = config.inner.clone();
    let task = Task {
        fault_bus,
        fault_start,
        fault_duration,
    };
    let result = py
        .detach(move || {
            let env = cfg.env_spec()?;
            task.validate(&env.model, env.sim.horizon)?;
            oracle_search(&env, task, &cfg.oracle)
        })
        .map_err(to_py)?;
    Ok((result.best_reward, result.best_schedule))
}

#[pymodule]
fn pars_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Normalizer>()?;
    m.add_class::<RunConfig>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_uvls_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(compare_to_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}
