//! The option-learning objective: trajectory likelihood under an option set,
//! expected number of option terminations, a KL diversity bonus, and the
//! combined objective with its gradients.

pub mod dp;
mod enumerate;
mod extended;
mod jhat;
mod monte_carlo;

use serde::{Deserialize, Serialize};

pub use dp::{AlphaTable, BackwardTable, PosteriorRecursion, StepInputs};
pub use enumerate::{enumerate_exact, PathKey, DEFAULT_ENUMERATION_BUDGET};
pub use extended::{central_differences_extended, j_hat_extended, ParamBlock};
pub use jhat::{j_hat, Demonstration, ObjectiveReport, TrajectoryTerms};
pub use monte_carlo::{mc_estimate, sample_trajectory, McEstimate};

use crate::error::{Error, Result};
use crate::mdp::{Trajectory, TransitionModel};
use crate::options::{OptionTable, PolicyTable, KL_FLOOR};

/// Weights and evaluation switches for the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Weight of the KL diversity bonus.
    pub lambda1: f64,
    /// Weight of the trajectory likelihood.
    pub lambda2: f64,
    pub recursion: PosteriorRecursion,
    /// Multiply the likelihood by `d0(s_0) prod_k P(s_k, a_k, s_k+1)`.
    pub include_env_factor: bool,
    /// Power-of-two rescaling of the backward table rows.
    pub rescale: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.001,
            lambda2: 100.0,
            recursion: PosteriorRecursion::Filtered,
            include_env_factor: true,
            rescale: false,
        }
    }
}

/// Trajectory likelihood with its log-scale value and backward table.
#[derive(Debug, Clone)]
pub struct Likelihood {
    pub probability: f64,
    pub log_probability: f64,
    /// `ln d0(s_0) + sum_k ln P(s_k, a_k, s_k+1)`.
    pub log_env_factor: f64,
    pub table: BackwardTable<f64>,
}

fn check_shapes(h: &Trajectory, policy: &PolicyTable, options: &OptionTable) -> Result<()> {
    if policy.n_options() != options.n_options() {
        return Err(Error::DimensionMismatch {
            expected: options.n_options(),
            found: policy.n_options(),
        });
    }
    if h.is_empty() {
        return Err(Error::InvalidTrajectory("empty trajectory".into()));
    }
    let n_states = options.n_states();
    if h.states.iter().any(|&s| s >= n_states) || h.actions.iter().any(|&a| a >= options.n_actions()) {
        return Err(Error::InvalidTrajectory("state or action out of range".into()));
    }
    Ok(())
}

/// `mu`, `beta` and `pi` along `h`, read from tabulated options.
pub fn step_inputs(h: &Trajectory, policy: &PolicyTable, options: &OptionTable) -> StepInputs<f64> {
    let n = options.n_options();
    let horizon = h.len();
    StepInputs {
        mu_taken: (0..horizon)
            .map(|t| (0..n).map(|o| options.mu(o, h.states[t], h.actions[t])).collect())
            .collect(),
        beta: (0..=horizon)
            .map(|t| (0..n).map(|o| options.beta(o, h.states[t])).collect())
            .collect(),
        pi: (0..horizon).map(|t| policy.row(h.states[t]).to_vec()).collect(),
    }
}

/// `P(s_t, a_t, s_{t+1})` along `h`; zero entries are an error naming the step.
pub fn transition_probs(h: &Trajectory, transitions: &TransitionModel) -> Result<Vec<f64>> {
    h.actions
        .iter()
        .zip(h.states.windows(2))
        .enumerate()
        .map(|(t, (&a, w))| {
            let p = transitions.prob(w[0], a, w[1]);
            if p > 0.0 {
                Ok(p)
            } else {
                Err(Error::ZeroProbabilityTransition { step: t })
            }
        })
        .collect()
}

pub(crate) fn log_env_factor(start_prob: f64, probs: &[f64]) -> Result<f64> {
    if !(start_prob > 0.0) {
        return Err(Error::InvalidTrajectory("start state has zero probability".into()));
    }
    Ok(start_prob.ln() + probs.iter().map(|p| p.ln()).sum::<f64>())
}

/// Expected number of option terminations along `h`, conditioned on each prefix.
pub fn expected_terminations(
    h: &Trajectory,
    policy: &PolicyTable,
    options: &OptionTable,
    transitions: &TransitionModel,
    recursion: PosteriorRecursion,
) -> Result<(f64, AlphaTable<f64>)> {
    check_shapes(h, policy, options)?;
    let probs = transition_probs(h, transitions)?;
    dp::forward_terminations(&step_inputs(h, policy, options), &probs, recursion)
}

/// Probability of generating `h` from `d0` under the option set and policy.
pub fn trajectory_probability(
    h: &Trajectory,
    policy: &PolicyTable,
    options: &OptionTable,
    transitions: &TransitionModel,
    d0: &[f64],
    config: &ObjectiveConfig,
) -> Result<Likelihood> {
    check_shapes(h, policy, options)?;
    let probs = transition_probs(h, transitions)?;
    let log_env = log_env_factor(d0[h.states[0]], &probs)?;
    let (bracket, exponent, table) = dp::backward_likelihood(&step_inputs(h, policy, options), config.rescale)?;
    let scale = exponent as f64 * std::f64::consts::LN_2;
    let probability = if config.include_env_factor {
        bracket * (log_env + scale).exp()
    } else {
        bracket * 2f64.powi(exponent)
    };
    Ok(Likelihood {
        probability,
        log_probability: bracket.ln() + log_env + scale,
        log_env_factor: log_env,
        table,
    })
}

/// Diversity bonus over the learned options of `options` along `h`; zero with
/// fewer than two learned options.
pub fn kl_regularizer(h: &Trajectory, options: &OptionTable) -> f64 {
    let learned: Vec<usize> = (0..options.n_options()).filter(|&o| !options.is_primitive(o)).collect();
    let mu: Vec<Vec<Vec<f64>>> = h.states[..h.len()]
        .iter()
        .map(|&s| learned.iter().map(|&o| options.mu_row(o, s).to_vec()).collect())
        .collect();
    dp::pairwise_kl(&mu, KL_FLOOR).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Outcome, TabularMdp};
    use crate::options::TabularOption;

    fn deterministic_chain(n: usize) -> TabularMdp {
        let rows = (0..n)
            .flat_map(|s| {
                [
                    vec![Outcome { next: s.saturating_sub(1), prob: 1.0, reward: 0.0 }],
                    vec![Outcome { next: (s + 1).min(n - 1), prob: 1.0, reward: 0.0 }],
                ]
            })
            .collect();
        let mut d0 = vec![0.0; n];
        d0[0] = 1.0;
        TabularMdp::new(n, 2, rows, 1.0, d0, vec![false; n]).unwrap()
    }

    fn rightward(len: usize) -> Trajectory {
        Trajectory::new((0..=len).collect(), vec![1; len], vec![0.0; len]).unwrap()
    }

    #[test]
    fn deterministic_primitive_policy_generates_trajectory_surely() {
        let mdp = deterministic_chain(5);
        let h = rightward(4);
        let options = OptionTable::new(5, 2, &[]).unwrap();
        let policy = PolicyTable::new(vec![vec![0.0, 1.0]; 5]).unwrap();
        let p = TransitionModel::exact(&mdp);
        let lik = trajectory_probability(&h, &policy, &options, &p, mdp.start_dist(), &ObjectiveConfig::default()).unwrap();
        assert_eq!(lik.probability, 1.0);
        let (total, _) = expected_terminations(&h, &policy, &options, &p, PosteriorRecursion::Filtered).unwrap();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn never_terminating_matching_option_gives_zero_terminations() {
        let mdp = deterministic_chain(5);
        let h = rightward(4);
        let go_right = TabularOption {
            mu: vec![vec![0.0, 1.0]; 5],
            beta: vec![0.0; 5],
        };
        let options = OptionTable::new(5, 2, &[go_right]).unwrap();
        let policy = PolicyTable::new(vec![vec![0.0, 0.0, 1.0]; 5]).unwrap();
        let p = TransitionModel::exact(&mdp);
        let (total, table) = expected_terminations(&h, &policy, &options, &p, PosteriorRecursion::Filtered).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(table.alpha[0], vec![0.0, 0.0, 1.0]);
        let lik = trajectory_probability(&h, &policy, &options, &p, mdp.start_dist(), &ObjectiveConfig::default()).unwrap();
        assert_eq!(lik.probability, 1.0);
    }

    #[test]
    fn impossible_transition_names_the_step() {
        let mdp = deterministic_chain(4);
        let h = Trajectory::new(vec![0, 1, 1], vec![1, 1], vec![0.0; 2]).unwrap();
        let options = OptionTable::new(4, 2, &[]).unwrap();
        let policy = PolicyTable::uniform(4, 2);
        let p = TransitionModel::exact(&mdp);
        let err = trajectory_probability(&h, &policy, &options, &p, mdp.start_dist(), &ObjectiveConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ZeroProbabilityTransition { step: 1 }));
    }

    #[test]
    fn env_factor_can_be_excluded() {
        let mdp = crate::mdp::build_chain(4, 3).unwrap();
        let h = Trajectory::new(vec![0, 1, 2], vec![1, 1], vec![0.0; 2]).unwrap();
        let options = OptionTable::new(4, 2, &[]).unwrap();
        let policy = PolicyTable::uniform(4, 2);
        let p = TransitionModel::exact(&mdp);
        let with = trajectory_probability(&h, &policy, &options, &p, mdp.start_dist(), &ObjectiveConfig::default()).unwrap();
        let cfg = ObjectiveConfig {
            include_env_factor: false,
            ..Default::default()
        };
        let without = trajectory_probability(&h, &policy, &options, &p, mdp.start_dist(), &cfg).unwrap();
        assert!((without.probability - 0.25).abs() < 1e-15);
        let env = mdp.prob(0, 1, 1) * mdp.prob(1, 1, 2);
        assert!((with.probability - 0.25 * env).abs() < 1e-15);
        assert!((with.log_probability - with.probability.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_regularizer_hand_set_distributions() {
        let h = Trajectory::new(vec![0, 0], vec![0], vec![0.0]).unwrap();
        let peaked = TabularOption {
            mu: vec![vec![1.0, 0.0, 0.0, 0.0]],
            beta: vec![0.5],
        };
        let flat = TabularOption {
            mu: vec![vec![0.25; 4]],
            beta: vec![0.5],
        };
        let options = OptionTable::new(1, 4, &[peaked.clone(), flat]).unwrap();
        // KL(peaked||flat) = ln 4; KL(flat||peaked) = ln(1/4) + 0.75 ln(1e12)
        let expected = 0.75 * 12.0 * std::f64::consts::LN_10;
        assert!((kl_regularizer(&h, &options) - expected).abs() < 1e-9);
        let single = OptionTable::new(1, 4, &[peaked]).unwrap();
        assert_eq!(kl_regularizer(&h, &single), 0.0);
    }
}
