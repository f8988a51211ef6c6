//! Persisted learner state as a pretty-printed JSON document.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ars::{Hyperparameters, TrainState};
use crate::error::{ParsError, Result};
use crate::normalizer::Normalizer;
use crate::policy::{PolicyArchitecture, WeightVector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: PolicyArchitecture,
    pub weights: WeightVector,
    pub normalizer: Normalizer,
    /// Hyperparameters the run started from.
    pub hyperparameters: Hyperparameters,
    /// Step size and noise after decay, i.e. the values the next iteration
    /// uses.
    pub current_alpha: f64,
    pub current_nu: f64,
    /// Completed iterations.
    pub iteration: u64,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn from_state(
        state: &TrainState,
        architecture: &PolicyArchitecture,
        hyperparameters: &Hyperparameters,
        config_digest: String,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            architecture: architecture.clone(),
            weights: state.theta.clone(),
            normalizer: state.normalizer.clone(),
            hyperparameters: hyperparameters.clone(),
            current_alpha: state.alpha,
            current_nu: state.nu,
            iteration: state.iteration,
            config_digest,
        }
    }

    pub fn to_state(&self) -> TrainState {
        TrainState {
            theta: self.weights.clone(),
            normalizer: self.normalizer.clone(),
            alpha: self.current_alpha,
            nu: self.current_nu,
            iteration: self.iteration,
        }
    }

    /// Checks the version and that weights and statistics fit the
    /// architecture.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(ParsError::Checkpoint(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let expected = self.architecture.param_count()?;
        if self.weights.len() != expected {
            return Err(ParsError::Checkpoint(format!(
                "{} weights stored but the {} architecture needs {expected}",
                self.weights.len(),
                self.architecture.kind
            )));
        }
        if self.weights.as_slice().iter().any(|w| !w.is_finite()) {
            return Err(ParsError::NonFinite("checkpoint weights"));
        }
        if self.normalizer.dim() != self.architecture.obs_dim {
            return Err(ParsError::Checkpoint(format!(
                "normalizer width {} differs from obs_dim {}",
                self.normalizer.dim(),
                self.architecture.obs_dim
            )));
        }
        Ok(())
    }

    /// Fails with a message naming both dimension sets when the checkpoint
    /// cannot drive an environment with these dimensions.
    pub fn ensure_compatible(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        let a = &self.architecture;
        if a.obs_dim != obs_dim || a.act_dim != act_dim {
            return Err(ParsError::Incompatible(format!(
                "checkpoint policy has obs_dim {} / act_dim {}, environment has obs_dim {obs_dim} / act_dim {act_dim}",
                a.obs_dim, a.act_dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)
            .map_err(|e| ParsError::Checkpoint(format!("malformed document: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParsError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            ParsError::Checkpoint(msg) => {
                ParsError::Checkpoint(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| {
        ParsError::InvalidArgument(format!("not a file path: {}", path.display()))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::init_weights;

    fn sample() -> Checkpoint {
        let arch = PolicyArchitecture::lstm(5, 2, &[4, 3]);
        let mut normalizer = Normalizer::new(5);
        normalizer
            .update(&[1.03, 0.2, 1.0 / 3.0, 1.0, 0.999_999_999_999])
            .unwrap();
        normalizer.update(&[0.7, 0.1, 0.3, 0.8, 1e-300]).unwrap();
        let hyper = Hyperparameters {
            alpha: 1.0,
            nu: 2.0,
            num_directions: 16,
            top_directions: 8,
            rollouts_per_direction: 9,
            decay: 0.99,
            iterations: 300,
            seed: 5,
        };
        let state = TrainState {
            theta: init_weights(&arch, 1).unwrap(),
            normalizer,
            alpha: 0.99f64.powi(37),
            nu: 2.0 * 0.99f64.powi(37),
            iteration: 37,
        };
        Checkpoint::from_state(&state, &arch, &hyper, "ab".repeat(32))
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert_eq!(loaded.to_state(), ckpt.to_state());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn version_and_length_mismatches_are_rejected() {
        let ckpt = sample();
        let mut v2 = ckpt.clone();
        v2.format_version = 2;
        let err = Checkpoint::from_json(&v2.to_json().unwrap()).unwrap_err();
        assert!(err.to_string().contains("format_version 2"), "{err}");

        let mut short = ckpt.clone();
        let mut w = short.weights.into_inner();
        w.pop();
        short.weights = WeightVector::from_raw(w);
        let err = Checkpoint::from_json(&short.to_json().unwrap()).unwrap_err();
        assert!(err.to_string().contains("weights stored"), "{err}");

        let mut narrow = ckpt.clone();
        narrow.normalizer = Normalizer::new(3);
        assert!(Checkpoint::from_json(&narrow.to_json().unwrap()).is_err());

        assert!(Checkpoint::from_json("{\"format_version\": 1}").is_err());
    }

    #[test]
    fn compatibility_message_names_both_dimension_sets() {
        let err = sample().ensure_compatible(7, 3).unwrap_err().to_string();
        assert!(err.contains("obs_dim 5 / act_dim 2"), "{err}");
        assert!(err.contains("obs_dim 7 / act_dim 3"), "{err}");
        sample().ensure_compatible(5, 2).unwrap();
    }
}
