use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::agents::RemoteConfig;
use crate::eval::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Use the full schema every iteration; no schema agent call.
    pub skip_schema_selection: bool,
    /// Replace the filter agent with a seeded uniform random pick.
    pub random_reasoning_filter: bool,
    /// Never show the feedback ledger to any agent.
    pub disable_feedback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Heuristic,
    Scripted {
        fixture: PathBuf,
    },
    /// Replays the `transcripts/` directory of an earlier run.
    Replay {
        transcripts: PathBuf,
    },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub instances: usize,
    pub max_iterations: usize,
    /// Fraction of the train split that validation-time models are fit on.
    pub sample_fraction: f64,
    pub improvement_epsilon: f64,
    pub max_selected_per_iter: usize,
    pub seed: u64,
    /// Ask the schema agent every iteration rather than only the first.
    pub rerun_schema_selection: bool,
    pub generation_temperature: f64,
    pub selection_temperature: f64,
    pub ablations: Ablations,
    pub train: TrainConfig,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            instances: 3,
            max_iterations: 10,
            sample_fraction: 0.2,
            improvement_epsilon: 1e-6,
            max_selected_per_iter: 5,
            seed: 0,
            rerun_schema_selection: true,
            generation_temperature: 0.7,
            selection_temperature: 0.2,
            ablations: Ablations::default(),
            train: TrainConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.instances == 0 {
            return bad("instances must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample_fraction must be in (0, 1]");
        }
        if !(self.improvement_epsilon >= 0.0) {
            return bad("improvement_epsilon must be non-negative");
        }
        if !(self.generation_temperature > 0.0) {
            return bad("generation_temperature must be positive");
        }
        if !(self.selection_temperature >= 0.0) {
            return bad("selection_temperature must be non-negative");
        }
        Ok(())
    }
}
