//! Experiment configuration: one JSON document with every default embedded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::error::{Error, Result};
use crate::gridworld::{build_four_rooms, GridWorld};
use crate::learner::LearnerConfig;
use crate::mdp::TransitionSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            width: 20,
            height: 20,
            slip: 0.1,
            step_reward: -1.0,
            goal_reward: 10.0,
            gamma: 0.99,
        }
    }
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<GridWorld> {
        build_four_rooms(self.width, self.height, self.slip, self.step_reward, self.goal_reward, self.gamma)
    }
}

/// How demonstrations are produced on the training tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Q-learning episodes per training task.
    pub episodes: usize,
    /// Greedy rollouts longer than this are resampled.
    pub max_len: usize,
    pub per_task: usize,
    pub agent: AgentConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            max_len: 200,
            per_task: 1,
            agent: AgentConfig::default(),
        }
    }
}

/// Transfer to the test tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
    /// Independent runs per test task and condition.
    pub seeds: usize,
    pub agent: AgentConfig,
    /// Also run Q-learning over primitive actions only.
    pub primitives: bool,
    /// Also run with untrained options (same count and architecture).
    pub random_init: bool,
    pub random_init_std: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seeds: 10,
            agent: AgentConfig::default(),
            primitives: true,
            random_init: true,
            random_init_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub environment: EnvironmentConfig,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub demos: DemoConfig,
    pub transitions: TransitionSource,
    /// Its `seed` is replaced by one derived from `master_seed`.
    pub learner: LearnerConfig,
    pub evaluation: EvaluationConfig,
    /// Where artifacts go; not part of the experiment's identity.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            environment: EnvironmentConfig::default(),
            train_tasks: 6,
            test_tasks: 24,
            demos: DemoConfig::default(),
            transitions: TransitionSource::Exact,
            learner: LearnerConfig::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical JSON form (which omits `output_dir`).
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train_tasks", self.train_tasks),
            ("test_tasks", self.test_tasks),
            ("demos.episodes", self.demos.episodes),
            ("demos.max_len", self.demos.max_len),
            ("demos.per_task", self.demos.per_task),
            ("evaluation.episodes", self.evaluation.episodes),
            ("evaluation.seeds", self.evaluation.seeds),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !(self.evaluation.random_init_std >= 0.0 && self.evaluation.random_init_std.is_finite()) {
            return Err(Error::InvalidConfig("random_init_std must be finite and non-negative".into()));
        }
        let e = &self.environment;
        if !(0.0..=1.0).contains(&e.slip) || !(0.0..=1.0).contains(&e.gamma) {
            return Err(Error::InvalidConfig("slip and gamma must lie in [0, 1]".into()));
        }
        self.demos.agent.validate()?;
        self.evaluation.agent.validate()?;
        self.learner.validate()?;
        // geometry, and enough distinct (start, goal) pairs for disjoint task sets
        let n = e.build()?.n_states();
        let pairs = n * (n - 1);
        if self.train_tasks + self.test_tasks > pairs {
            return Err(Error::InvalidConfig(format!(
                "{} tasks requested but only {pairs} distinct start/goal pairs exist",
                self.train_tasks + self.test_tasks
            )));
        }
        Ok(())
    }
}
