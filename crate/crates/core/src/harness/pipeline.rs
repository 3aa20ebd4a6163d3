//! The end-to-end experiment: tasks → demonstrations → options → transfer
//! evaluation → option maps, with every artifact written under one directory.
//!
//! Each stage reads its inputs from the files earlier stages wrote, so a
//! rerun with the same configuration skips stages whose outputs are already
//! recorded in the manifest. All artifacts except the manifest (which holds
//! wall-clock times) are a pure function of the configuration.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::maps::{emit_option_maps, OptionUsage};
use crate::agent::{greedy_trajectories, q_learning, smdp_q_learning, LearningCurve, QTable};
use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, Task, TaskSpec, N_MOVES};
use crate::learner::{learn_options, LearnerConfig};
use crate::mdp::{estimate_transitions, TransitionModel, TransitionSource, Trajectory};
use crate::network::Init;
use crate::objective::Demonstration;
use crate::options::{LearnedOption, OptionSet, OptionTable};
use crate::seed::{derive_seed, rng_for};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVE_HEADER: &str = "condition,task_id,seed,episode,return,steps,decisions";
/// Episodes averaged in the per-condition summary.
pub const SUMMARY_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tasks,
    Demos,
    Options,
    Evaluate,
    Maps,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Tasks, Stage::Demos, Stage::Options, Stage::Evaluate, Stage::Maps];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Tasks => "tasks",
            Stage::Demos => "demos",
            Stage::Options => "options",
            Stage::Evaluate => "evaluate",
            Stage::Maps => "maps",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}` (expected one of tasks, demos, options, evaluate, maps)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Paths relative to the output directory, `/`-separated.
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    /// Completed stages, in pipeline order.
    pub stages: Vec<StageRecord>,
    pub failure: Option<StageFailure>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Checks that every referenced file exists under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for output in self.stages.iter().flat_map(|r| &r.outputs) {
            if !dir.join(output).is_file() {
                return Err(Error::ValidationFailed(format!("manifest lists missing file {output}")));
            }
        }
        Ok(())
    }
}

/// Training and test tasks; no (start, goal) pair occurs twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSets {
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub task_id: String,
    pub start_prob: f64,
    pub trajectory: Trajectory,
}

/// Transfer performance of one condition, averaged over test tasks and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub n_options: usize,
    /// Independent (task, seed) runs.
    pub runs: usize,
    /// Leading episodes averaged within each run.
    pub episodes: usize,
    /// Mean over runs of each run's mean return.
    pub mean_return: f64,
    /// Standard error of `mean_return` across runs.
    pub std_error: f64,
    pub mean_steps: f64,
    pub mean_decisions: f64,
}

impl ConditionSummary {
    fn from_curves(condition: &str, n_options: usize, curves: &[&LearningCurve]) -> Self {
        let window = curves.iter().map(|c| c.len().min(SUMMARY_WINDOW)).min().unwrap_or(0);
        let per_run = |f: &dyn Fn(&LearningCurve) -> f64| -> Vec<f64> { curves.iter().map(|c| f(c)).collect() };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let returns = per_run(&|c| c.returns[..window].iter().sum::<f64>() / window as f64);
        let steps = per_run(&|c| c.steps[..window].iter().sum::<usize>() as f64 / window as f64);
        let decisions = per_run(&|c| c.decisions[..window].iter().sum::<usize>() as f64 / window as f64);
        let m = mean(&returns);
        let n = returns.len() as f64;
        let std_error = if returns.len() > 1 {
            (returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        Self {
            condition: condition.to_string(),
            n_options,
            runs: returns.len(),
            episodes: window,
            mean_return: m,
            std_error,
            mean_steps: mean(&steps),
            mean_decisions: mean(&decisions),
        }
    }
}

/// Runs every stage up to and including `through`, skipping stages already
/// completed in `out`. Fails if `out` holds a run of a different configuration.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path, through: Stage) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_hash = config.hash()?;
    let manifest_path = out.join(MANIFEST_FILE);
    let previous = if manifest_path.exists() {
        let previous = RunManifest::load(out)?;
        if previous.config_hash != config_hash {
            return Err(Error::InvalidConfig(format!(
                "{} holds a run with a different configuration (hash {})",
                out.display(),
                previous.config_hash
            )));
        }
        Some(previous)
    } else {
        None
    };
    let mut manifest = RunManifest {
        config_hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        stages: Vec::new(),
        failure: None,
        config: config.clone(),
    };
    let run = Run {
        config,
        out,
        world: config.environment.build()?,
    };
    // once a stage runs, everything after it is recomputed too
    let mut reusing = true;
    for stage in Stage::ALL.into_iter().filter(|&s| s <= through) {
        let done = previous
            .as_ref()
            .and_then(|p| p.record(stage))
            .filter(|r| r.outputs.iter().all(|o| out.join(o).is_file()));
        if let (true, Some(record)) = (reusing, done) {
            manifest.stages.push(record.clone());
            continue;
        }
        reusing = false;
        let start = Instant::now();
        match run.stage(stage) {
            Ok(outputs) => {
                manifest.stages.push(StageRecord {
                    stage,
                    outputs: outputs.iter().map(|p| run.relative(p)).collect(),
                    wall_seconds: start.elapsed().as_secs_f64(),
                });
                write_json(&manifest_path, &manifest)?;
            }
            Err(source) => {
                manifest.failure = Some(StageFailure {
                    stage,
                    error: source.to_string(),
                });
                write_json(&manifest_path, &manifest)?;
                return Err(Error::Stage {
                    stage: stage.name().to_string(),
                    source: Box::new(source),
                });
            }
        }
    }
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    out: &'a Path,
    world: GridWorld,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(self.out).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    fn seed(&self) -> u64 {
        self.config.master_seed
    }

    fn stage(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        match stage {
            Stage::Tasks => self.tasks(),
            Stage::Demos => self.demos(),
            Stage::Options => self.options(),
            Stage::Evaluate => self.evaluate(),
            Stage::Maps => self.maps(),
        }
    }

    fn tasks(&self) -> Result<Vec<PathBuf>> {
        let (n_train, n_test) = (self.config.train_tasks, self.config.test_tasks);
        let mut rng = rng_for(self.seed(), &["tasks"]);
        let mut seen = HashSet::new();
        let mut specs = Vec::with_capacity(n_train + n_test);
        while specs.len() < n_train + n_test {
            let i = specs.len();
            let id = if i < n_train { format!("train-{i}") } else { format!("test-{}", i - n_train) };
            let spec = self.world.sample_task(&mut rng, id)?;
            if seen.insert((spec.start_state, spec.goal_state)) {
                specs.push(spec);
            }
        }
        let test = specs.split_off(n_train);
        let path = self.path("tasks.json");
        write_json(&path, &TaskSets { train: specs, test })?;
        Ok(vec![path])
    }

    fn load_tasks(&self) -> Result<TaskSets> {
        read_json(&self.path("tasks.json"))
    }

    fn demos(&self) -> Result<Vec<PathBuf>> {
        let tasks = self.load_tasks()?;
        let demo = &self.config.demos;
        let results = tasks
            .train
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let task = self.world.task_from_spec(spec)?;
                let mut rng = rng_for(self.seed(), &["demos", &spec.task_id]);
                let (q, curve) = q_learning(&task.mdp, demo.episodes, &demo.agent, i as u64, &mut rng)?;
                let trajectories = greedy_trajectories(&q, &task.mdp, task.goal_state, demo.per_task, demo.max_len, &mut rng)?;
                let records = trajectories
                    .into_iter()
                    .map(|h| DemoRecord {
                        task_id: spec.task_id.clone(),
                        start_prob: task.mdp.start_dist()[h.states[0]],
                        trajectory: h,
                    })
                    .collect::<Vec<_>>();
                Ok((curve, records))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut csv = format!("{}\n", CURVE_HEADER.trim_start_matches("condition,"));
        for ((curve, _), spec) in results.iter().zip(&tasks.train) {
            append_curve(&mut csv, None, &spec.task_id, curve);
        }
        let records: Vec<DemoRecord> = results.into_iter().flat_map(|(_, r)| r).collect();
        let transitions = match self.config.transitions {
            TransitionSource::Exact => TransitionModel::exact(self.world.base_mdp()),
            TransitionSource::Estimated => {
                let trajectories: Vec<Trajectory> = records.iter().map(|r| r.trajectory.clone()).collect();
                estimate_transitions(&trajectories, self.world.n_states(), N_MOVES)?
            }
        };
        let paths = [self.path("demos.json"), self.path("demo_curves.csv"), self.path("transitions.json")];
        write_json(&paths[0], &records)?;
        write_text(&paths[1], &csv)?;
        write_json(&paths[2], &transitions)?;
        Ok(paths.to_vec())
    }

    fn options(&self) -> Result<Vec<PathBuf>> {
        let records: Vec<DemoRecord> = read_json(&self.path("demos.json"))?;
        let transitions: TransitionModel = read_json(&self.path("transitions.json"))?;
        let demos: Vec<Demonstration> = records
            .into_iter()
            .map(|r| Demonstration {
                trajectory: r.trajectory,
                start_prob: r.start_prob,
            })
            .collect();
        let learner = LearnerConfig {
            seed: derive_seed(self.seed(), &["learner"]),
            ..self.config.learner
        };
        let snapshots = self.path("snapshots");
        match std::fs::remove_dir_all(&snapshots) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(Error::io(&snapshots, e)),
            _ => {}
        }
        std::fs::create_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
        let mut paths = Vec::new();
        let learned = learn_options(self.world.n_states(), N_MOVES, &demos, &transitions, &learner, |options, _| {
            let path = snapshots.join(format!("options_after_{}.json", options.n_learned()));
            write_text(&path, &options.to_json()?)?;
            paths.push(path);
            Ok(())
        })?;

        let mut epochs = String::new();
        for record in learned.trace.epoch_records() {
            epochs.push_str(&serde_json::to_string(record)?);
            epochs.push('\n');
        }
        let files = [
            self.path("options.json"),
            self.path("decisions.json"),
            self.path("learner_trace.json"),
            self.path("learner_epochs.jsonl"),
        ];
        write_text(&files[0], &learned.options.to_json()?)?;
        write_json(&files[1], &learned.trace.decisions)?;
        write_json(&files[2], &learned.trace)?;
        write_text(&files[3], &epochs)?;
        paths.extend(files);
        Ok(paths)
    }

    fn load_options(&self) -> Result<OptionSet> {
        let path = self.path("options.json");
        OptionSet::from_json(&std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let eval = &self.config.evaluation;
        let tasks = self.load_tasks()?;
        let learned = self.load_options()?;
        let (n, k) = (self.world.n_states(), learned.n_learned());
        let mut paths = Vec::new();

        let mut conditions = vec![("learned", learned)];
        if eval.primitives {
            conditions.push(("primitives", OptionSet::primitives(n, N_MOVES)));
        }
        if eval.random_init {
            let mut rng = rng_for(self.seed(), &["random_options"]);
            let init = Init::Gaussian { std: eval.random_init_std };
            let random = (0..k)
                .map(|_| LearnedOption::new(n, N_MOVES, self.config.learner.hidden, init, &mut rng))
                .collect();
            let random = OptionSet::with_learned(n, N_MOVES, random)?;
            let path = self.path("random_options.json");
            write_text(&path, &random.to_json()?)?;
            paths.push(path);
            conditions.push(("random_init", random));
        }
        let tables: Vec<(&str, usize, OptionTable)> = conditions
            .iter()
            .map(|(name, set)| (*name, set.len(), OptionTable::from_options(set)))
            .collect();
        let test: Vec<Task> = tasks.test.iter().map(|s| self.world.task_from_spec(s)).collect::<Result<_>>()?;

        let cells: Vec<(usize, usize, u64)> = (0..tables.len())
            .flat_map(|c| (0..test.len()).flat_map(move |t| (0..eval.seeds as u64).map(move |s| (c, t, s))))
            .collect();
        let runs: Vec<(QTable, LearningCurve)> = cells
            .par_iter()
            .map(|&(c, t, s)| {
                let (name, _, table) = &tables[c];
                let task = &test[t];
                let mut rng = rng_for(self.seed(), &["evaluate", name, &task.task_id, &s.to_string()]);
                smdp_q_learning(&task.mdp, table, eval.episodes, &eval.agent, s, &mut rng)
            })
            .collect::<Result<_>>()?;

        let mut csv = format!("{CURVE_HEADER}\n");
        for (&(c, t, _), (_, curve)) in cells.iter().zip(&runs) {
            append_curve(&mut csv, Some(tables[c].0), &test[t].task_id, curve);
        }
        let summaries: Vec<ConditionSummary> = tables
            .iter()
            .enumerate()
            .map(|(c, (name, n_options, _))| {
                let curves: Vec<&LearningCurve> = cells.iter().zip(&runs).filter(|((ci, _, _), _)| *ci == c).map(|(_, (_, curve))| curve).collect();
                ConditionSummary::from_curves(name, *n_options, &curves)
            })
            .collect();
        let learned_q = cells.iter().zip(&runs).filter(|((c, _, _), _)| *c == 0).map(|(_, (q, _))| q);
        let usage = OptionUsage::from_q_tables(learned_q, n, tables[0].1, eval.agent.initial_q)?;

        let files = [self.path("curves.csv"), self.path("summary.json"), self.path("usage.json")];
        write_text(&files[0], &csv)?;
        write_json(&files[1], &summaries)?;
        write_json(&files[2], &usage)?;
        paths.extend(files);
        Ok(paths)
    }

    fn maps(&self) -> Result<Vec<PathBuf>> {
        let options = self.load_options()?;
        let usage: OptionUsage = read_json(&self.path("usage.json"))?;
        emit_option_maps(&self.world, &options, Some(&usage), &self.path("maps"))
    }
}

fn append_curve(csv: &mut String, condition: Option<&str>, task_id: &str, curve: &LearningCurve) {
    for e in 0..curve.len() {
        if let Some(c) = condition {
            write!(csv, "{c},").expect("writing to a String");
        }
        writeln!(
            csv,
            "{task_id},{},{e},{},{},{}",
            curve.seed, curve.returns[e], curve.steps[e], curve.decisions[e]
        )
        .expect("writing to a String");
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::harness::config::{DemoConfig, EnvironmentConfig, EvaluationConfig};

    /// Smallest configuration that exercises every stage.
    fn tiny_config() -> ExperimentConfig {
        let agent = AgentConfig {
            max_steps: 300,
            ..Default::default()
        };
        ExperimentConfig {
            environment: EnvironmentConfig {
                width: 7,
                height: 7,
                ..Default::default()
            },
            train_tasks: 2,
            test_tasks: 1,
            demos: DemoConfig {
                episodes: 200,
                max_len: 60,
                per_task: 1,
                agent,
            },
            learner: LearnerConfig {
                epochs: 3,
                max_options: 1,
                hidden: 4,
                baseline: crate::learner::Baseline::NegInfinity,
                ..Default::default()
            },
            evaluation: EvaluationConfig {
                episodes: 5,
                seeds: 1,
                agent,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for stage in Stage::ALL {
            assert_eq!(stage.name().parse::<Stage>().unwrap(), stage);
        }
        assert!("train".parse::<Stage>().is_err());
    }

    #[test]
    fn summary_statistics_match_hand_computation() {
        let curve = |returns: Vec<f64>| LearningCurve {
            seed: 0,
            steps: vec![2; returns.len()],
            decisions: vec![1; returns.len()],
            returns,
        };
        let (a, b) = (curve(vec![1.0, 3.0]), curve(vec![5.0, 7.0]));
        let s = ConditionSummary::from_curves("x", 4, &[&a, &b]);
        assert_eq!((s.runs, s.episodes), (2, 2));
        assert_eq!(s.mean_return, 4.0);
        // run means 2 and 6: sd = 2 sqrt(2), se = 2
        assert!((s.std_error - 2.0).abs() < 1e-15);
        assert_eq!((s.mean_steps, s.mean_decisions), (2.0, 1.0));
    }

    #[test]
    fn minimal_pipeline_completes_and_manifest_validates() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let manifest = run_pipeline(&config, dir.path(), Stage::Maps).unwrap();
        assert_eq!(manifest.stages.len(), 5);
        assert!(manifest.failure.is_none());
        manifest.verify(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), manifest);

        let tasks: TaskSets = read_json(&dir.path().join("tasks.json")).unwrap();
        let train: HashSet<_> = tasks.train.iter().map(|t| (t.start_state, t.goal_state)).collect();
        assert!(tasks.test.iter().all(|t| !train.contains(&(t.start_state, t.goal_state))));

        let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(curves.lines().count(), 1 + 3 * 5);
        let summary: Vec<ConditionSummary> = read_json(&dir.path().join("summary.json")).unwrap();
        let names: Vec<_> = summary.iter().map(|s| s.condition.as_str()).collect();
        assert_eq!(names, ["learned", "primitives", "random_init"]);
        assert_eq!(summary[0].n_options, summary[2].n_options);
        let options = OptionSet::from_json(&std::fs::read_to_string(dir.path().join("options.json")).unwrap()).unwrap();
        assert_eq!(options.n_learned(), 1);
        for id in 0..options.len() {
            let map = std::fs::read_to_string(dir.path().join(format!("maps/option_{id}.csv"))).unwrap();
            assert_eq!(map.lines().count(), 1 + 7 * 7);
        }
    }

    #[test]
    fn rerun_skips_stages_and_foreign_configs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let first = run_pipeline(&config, dir.path(), Stage::Demos).unwrap();
        assert_eq!(first.stages.len(), 2);
        let demos = std::fs::read(dir.path().join("demos.json")).unwrap();
        let modified = std::fs::metadata(dir.path().join("demos.json")).unwrap().modified().unwrap();

        let second = run_pipeline(&config, dir.path(), Stage::Options).unwrap();
        assert_eq!(second.stages[..2], first.stages[..]);
        assert_eq!(second.stages.len(), 3);
        assert_eq!(std::fs::read(dir.path().join("demos.json")).unwrap(), demos);
        assert_eq!(std::fs::metadata(dir.path().join("demos.json")).unwrap().modified().unwrap(), modified);

        let other = ExperimentConfig {
            master_seed: 9,
            ..config
        };
        assert!(matches!(run_pipeline(&other, dir.path(), Stage::Tasks), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn stage_errors_name_the_stage_and_leave_a_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        // demonstrations cannot reach any goal within a single step budget
        config.demos.agent.max_steps = 1;
        config.demos.max_len = 1;
        config.demos.episodes = 1;
        let err = run_pipeline(&config, dir.path(), Stage::Maps).unwrap_err();
        match err {
            Error::Stage { stage, .. } => assert_eq!(stage, "demos"),
            other => panic!("unexpected error {other}"),
        }
        let manifest = RunManifest::load(dir.path()).unwrap();
        assert_eq!(manifest.stages.len(), 1);
        assert_eq!(manifest.failure.unwrap().stage, Stage::Demos);
    }
}
