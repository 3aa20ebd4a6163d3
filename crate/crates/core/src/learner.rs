//! Incremental option discovery: options are introduced one at a time, each
//! trained jointly with a fresh policy over options, and kept only if it
//! raises the objective by a relative margin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TransitionModel;
use crate::network::{Init, DEFAULT_HIDDEN};
use crate::objective::{j_hat, Demonstration, ObjectiveConfig, ObjectiveReport};
use crate::optim::{apply_gradients, AdamConfig, AdamState};
use crate::options::{LearnedOption, OptionSet, PolicyOverOptions};
use crate::seed::rng_for;

/// What the first candidate is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Objective of the primitive options with a policy trained for the same
    /// number of epochs: the first option has to beat plain actions.
    #[default]
    PrimitivesOnly,
    /// Accept the first candidate unconditionally.
    NegInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Epochs per candidate.
    pub epochs: usize,
    /// A candidate is accepted iff `J_N - J_prev >= delta_frac * |J_prev|`.
    pub delta_frac: f64,
    pub objective: ObjectiveConfig,
    pub lr: f64,
    pub adam: AdamConfig,
    pub max_options: usize,
    pub seed: u64,
    pub hidden: usize,
    pub init: Init,
    pub baseline: Baseline,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            delta_frac: 0.1,
            objective: ObjectiveConfig::default(),
            lr: 1e-3,
            adam: AdamConfig::default(),
            max_options: 8,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            init: Init::default(),
            baseline: Baseline::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.delta_frac >= 0.0) {
            return Err(Error::InvalidConfig("delta_frac must be non-negative".into()));
        }
        if self.max_options == 0 {
            return Err(Error::InvalidConfig("max_options must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("lr must be finite and non-negative".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Objective terms after one epoch (or at initialisation, epoch 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub candidate: usize,
    pub epoch: usize,
    pub j_hat: f64,
    pub probability: f64,
    pub terminations: f64,
    pub kl: f64,
}

impl EpochRecord {
    fn from_report(candidate: usize, epoch: usize, r: &ObjectiveReport) -> Self {
        Self {
            candidate,
            epoch,
            j_hat: r.j_hat,
            probability: r.mean_probability,
            terminations: r.mean_normalized_terminations,
            kl: r.mean_kl,
        }
    }
}

/// Training record of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub candidate: usize,
    pub initial: EpochRecord,
    /// One record per epoch, after that epoch's update.
    pub epochs: Vec<EpochRecord>,
    /// Set when training stopped early; the candidate is rejected.
    pub failure: Option<String>,
}

impl CandidateTrace {
    /// Objective after the final update, if training completed.
    pub fn j_final(&self) -> Option<f64> {
        match self.failure {
            Some(_) => None,
            None => self.epochs.last().map(|e| e.j_hat),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub candidate: usize,
    /// `None` before the first acceptance when there is no baseline.
    pub j_prev: Option<f64>,
    /// `None` when training failed.
    pub j_final: Option<f64>,
    pub delta: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerTrace {
    /// Training of a policy over primitives only, when that is the baseline.
    pub baseline: Option<CandidateTrace>,
    pub candidates: Vec<CandidateTrace>,
    pub decisions: Vec<Decision>,
}

impl LearnerTrace {
    /// Every epoch record in training order, baseline first.
    pub fn epoch_records(&self) -> impl Iterator<Item = &EpochRecord> {
        self.baseline
            .iter()
            .chain(&self.candidates)
            .flat_map(|c| std::iter::once(&c.initial).chain(&c.epochs))
    }
}

pub struct CandidateResult {
    /// `None` when training the policy over `fixed` alone.
    pub option: Option<LearnedOption>,
    pub policy: PolicyOverOptions,
    pub trace: CandidateTrace,
}

/// Trains a fresh candidate option (unless `with_candidate` is false) and a
/// fresh policy over `fixed` plus the candidate for `config.epochs` full-batch
/// Adam ascent steps. Options in `fixed` are never modified.
pub fn train_candidate<R: Rng + ?Sized>(
    fixed: &OptionSet,
    with_candidate: bool,
    data: &[Demonstration],
    transitions: &TransitionModel,
    config: &LearnerConfig,
    candidate: usize,
    rng: &mut R,
) -> Result<CandidateResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("no demonstrations".into()));
    }
    let (n_states, n_actions) = (fixed.n_states(), fixed.n_actions());
    let mut options = fixed.clone();
    if with_candidate {
        options.push(LearnedOption::new(n_states, n_actions, config.hidden, config.init, rng))?;
    }
    let mut policy = PolicyOverOptions::new(n_states, options.len(), config.hidden, config.init, rng);
    let trained = options.n_learned().checked_sub(1).filter(|_| with_candidate);

    let mut policy_adam = AdamState::new(policy.params.len(), config.adam);
    let mut option_adam = trained.map(|k| AdamState::new(options.learned()[k].params.len(), config.adam));

    let mut report = j_hat(&policy, &options, data, transitions, &config.objective)?;
    let initial = EpochRecord::from_report(candidate, 0, &report);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut failure = None;
    for epoch in 1..=config.epochs {
        let step = (|| {
            apply_gradients(&mut policy.params.values, &report.policy_grad, &mut policy_adam, config.lr)?;
            if let (Some(k), Some(adam)) = (trained, option_adam.as_mut()) {
                apply_gradients(
                    &mut options.learned_mut()[k].params.values,
                    &report.option_grads[k],
                    adam,
                    config.lr,
                )?;
            }
            j_hat(&policy, &options, data, transitions, &config.objective)
        })();
        match step {
            Ok(next) => {
                report = next;
                epochs.push(EpochRecord::from_report(candidate, epoch, &report));
            }
            Err(e) => {
                failure = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        }
    }
    let option = trained.map(|k| options.learned()[k].clone());
    Ok(CandidateResult {
        option,
        policy,
        trace: CandidateTrace {
            candidate,
            initial,
            epochs,
            failure,
        },
    })
}

/// Outcome of [`learn_options`].
pub struct LearnedOptions {
    pub options: OptionSet,
    /// Policy trained alongside the last accepted candidate (or the baseline
    /// policy over primitives when nothing was accepted).
    pub policy: Option<PolicyOverOptions>,
    pub trace: LearnerTrace,
}

/// Grows an option set from the primitives until a candidate fails to improve
/// the objective by `delta_frac * |J_prev|` or `max_options` are accepted.
///
/// `on_accept` runs after every acceptance with the grown option set, e.g. to
/// write a snapshot.
pub fn learn_options(
    n_states: usize,
    n_actions: usize,
    data: &[Demonstration],
    transitions: &TransitionModel,
    config: &LearnerConfig,
    mut on_accept: impl FnMut(&OptionSet, &Decision) -> Result<()>,
) -> Result<LearnedOptions> {
    config.validate()?;
    let mut options = OptionSet::primitives(n_states, n_actions);
    let mut trace = LearnerTrace::default();
    let mut policy = None;
    let mut j_prev = match config.baseline {
        Baseline::NegInfinity => None,
        Baseline::PrimitivesOnly => {
            let mut rng = rng_for(config.seed, &["learner", "baseline"]);
            let base = train_candidate(&options, false, data, transitions, config, 0, &mut rng)?;
            let j = base.trace.j_final().ok_or_else(|| {
                Error::ValidationFailed(format!(
                    "primitive baseline failed: {}",
                    base.trace.failure.clone().unwrap_or_default()
                ))
            })?;
            policy = Some(base.policy);
            trace.baseline = Some(base.trace);
            Some(j)
        }
    };

    for index in 0..config.max_options {
        let candidate = index + 1;
        let mut rng = rng_for(config.seed, &["learner", "candidate", &candidate.to_string()]);
        let result = train_candidate(&options, true, data, transitions, config, candidate, &mut rng)?;
        let j_final = result.trace.j_final();
        let delta = j_prev.map_or(0.0, |j: f64| config.delta_frac * j.abs());
        let accepted = match (j_final, j_prev) {
            (Some(j), Some(prev)) => j - prev >= delta,
            (Some(_), None) => true,
            (None, _) => false,
        };
        let decision = Decision {
            candidate,
            j_prev,
            j_final,
            delta,
            accepted,
        };
        trace.candidates.push(result.trace);
        trace.decisions.push(decision);
        if !accepted {
            break;
        }
        options.push(result.option.expect("candidate was trained"))?;
        policy = Some(result.policy);
        j_prev = j_final;
        on_accept(&options, &decision)?;
    }
    Ok(LearnedOptions { options, policy, trace })
}
