use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dp, log_env_factor, transition_probs, ObjectiveConfig};
use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::mdp::{Trajectory, TransitionModel};
use crate::network::Activations;
use crate::options::{encode_state, OptionSet, PolicyOverOptions, KL_FLOOR};

/// A demonstration and the probability its task assigns to its first state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub trajectory: Trajectory,
    pub start_prob: f64,
}

/// Objective terms of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTerms {
    pub probability: f64,
    pub log_probability: f64,
    pub expected_terminations: f64,
    pub normalized_terminations: f64,
    pub kl: f64,
    /// `lambda2 * probability - normalized_terminations + lambda1 * kl`
    pub value: f64,
}

/// Objective value, its terms and gradients for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub j_hat: f64,
    pub mean_probability: f64,
    pub mean_normalized_terminations: f64,
    pub mean_kl: f64,
    pub per_trajectory: Vec<TrajectoryTerms>,
    /// Gradient with respect to the policy-over-options parameters.
    #[serde(skip)]
    pub policy_grad: Vec<f64>,
    /// Gradient with respect to each learned option's parameters.
    #[serde(skip)]
    pub option_grads: Vec<Vec<f64>>,
}

struct TrajectoryResult {
    terms: TrajectoryTerms,
    policy_grad: Vec<f64>,
    option_grads: Vec<Vec<f64>>,
}

/// Mean over demonstrations of
/// `lambda2 Pr(h) - E[terminations | h] / |h| + lambda1 g(h)` together with
/// its gradient with respect to every network parameter.
///
/// Per-trajectory work runs in parallel; results are reduced in input order,
/// so the output does not depend on the number of workers.
pub fn j_hat(
    policy: &PolicyOverOptions,
    options: &OptionSet,
    data: &[Demonstration],
    transitions: &TransitionModel,
    config: &ObjectiveConfig,
) -> Result<ObjectiveReport> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("objective needs at least one trajectory".into()));
    }
    if policy.n_options() != options.len() {
        return Err(Error::DimensionMismatch {
            expected: options.len(),
            found: policy.n_options(),
        });
    }
    let results = data
        .par_iter()
        .map(|demo| trajectory_term(policy, options, demo, transitions, config))
        .collect::<Result<Vec<_>>>()?;

    let count = results.len() as f64;
    let mut policy_grad = vec![0.0; policy.params.len()];
    let mut option_grads: Vec<Vec<f64>> = options.learned().iter().map(|o| vec![0.0; o.params.len()]).collect();
    let (mut total, mut prob, mut term, mut kl) = (0.0, 0.0, 0.0, 0.0);
    for r in &results {
        total += r.terms.value;
        prob += r.terms.probability;
        term += r.terms.normalized_terminations;
        kl += r.terms.kl;
        add_into(&mut policy_grad, &r.policy_grad);
        for (acc, g) in option_grads.iter_mut().zip(&r.option_grads) {
            add_into(acc, g);
        }
    }
    let scale = 1.0 / count;
    policy_grad.iter_mut().for_each(|g| *g *= scale);
    option_grads.iter_mut().flatten().for_each(|g| *g *= scale);
    let j = total / count;
    if !j.is_finite() {
        return Err(Error::NonFiniteObjective(j));
    }
    Ok(ObjectiveReport {
        j_hat: j,
        mean_probability: prob / count,
        mean_normalized_terminations: term / count,
        mean_kl: kl / count,
        per_trajectory: results.into_iter().map(|r| r.terms).collect(),
        policy_grad,
        option_grads,
    })
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Distinct states of `h` in order of first visit, and each step's index
/// into that list.
pub(crate) fn state_slots(h: &Trajectory) -> (Vec<usize>, Vec<usize>) {
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    let mut states = Vec::new();
    let slot_of = h
        .states
        .iter()
        .map(|&s| {
            *slot.entry(s).or_insert_with(|| {
                states.push(s);
                states.len() - 1
            })
        })
        .collect();
    (states, slot_of)
}

pub(crate) fn check_trajectory(h: &Trajectory, n_states: usize, n_actions: usize) -> Result<()> {
    if h.is_empty() {
        return Err(Error::InvalidTrajectory("empty trajectory".into()));
    }
    if h.states.iter().any(|&s| s >= n_states) || h.actions.iter().any(|&a| a >= n_actions) {
        return Err(Error::InvalidTrajectory("state or action out of range".into()));
    }
    Ok(())
}

/// Network outputs at a trajectory's distinct states, already mapped through
/// softmax/sigmoid; indexed by slot (see [`state_slots`]).
pub(crate) struct SlotDistributions<R> {
    pub pi: Vec<Vec<R>>,
    /// `mu[k][slot][a]` for learned option `k`.
    pub mu: Vec<Vec<Vec<R>>>,
    /// `beta[k][slot]` for learned option `k`.
    pub beta: Vec<Vec<R>>,
}

pub(crate) struct Terms<R> {
    pub probability: R,
    pub bracket: R,
    /// Power of two taken out of `bracket` by rescaling.
    pub exponent: i32,
    pub terminations: R,
    pub normalized: R,
    pub kl: Option<R>,
    pub value: R,
}

/// One trajectory's objective terms for any [`Real`] type.
pub(crate) fn trajectory_terms<R: Real>(
    h: &Trajectory,
    slot_of: &[usize],
    dists: &SlotDistributions<R>,
    n_actions: usize,
    probs: &[f64],
    log_env: f64,
    config: &ObjectiveConfig,
) -> Result<Terms<R>> {
    let horizon = h.len();
    let any = dists.pi[0][0];
    let (one, zero) = (any.constant(1.0), any.constant(0.0));
    let n_learned = dists.mu.len();
    let inputs = dp::StepInputs {
        mu_taken: (0..horizon)
            .map(|t| {
                let (u, a) = (slot_of[t], h.actions[t]);
                (0..n_actions)
                    .map(|o| if o == a { one } else { zero })
                    .chain((0..n_learned).map(|k| dists.mu[k][u][a]))
                    .collect()
            })
            .collect(),
        beta: (0..=horizon)
            .map(|t| {
                let u = slot_of[t];
                std::iter::repeat_n(one, n_actions)
                    .chain((0..n_learned).map(|k| dists.beta[k][u]))
                    .collect()
            })
            .collect(),
        pi: (0..horizon).map(|t| dists.pi[slot_of[t]].clone()).collect(),
    };

    let (terminations, _) = dp::forward_terminations(&inputs, probs, config.recursion)?;
    let (bracket, exponent, _) = dp::backward_likelihood(&inputs, config.rescale)?;
    let factor = if config.include_env_factor {
        (log_env + exponent as f64 * std::f64::consts::LN_2).exp()
    } else {
        2f64.powi(exponent)
    };
    let probability = bracket * factor;
    let normalized = terminations * (1.0 / horizon as f64);
    let kl_mu: Vec<Vec<Vec<R>>> = (0..horizon)
        .map(|t| (0..n_learned).map(|k| dists.mu[k][slot_of[t]].clone()).collect())
        .collect();
    let kl = dp::pairwise_kl(&kl_mu, KL_FLOOR);

    let mut value = probability * config.lambda2 - normalized;
    if let Some(kl) = kl {
        value = value + kl * config.lambda1;
    }
    if !value.value().is_finite() {
        return Err(Error::NonFiniteObjective(value.value()));
    }
    Ok(Terms {
        probability,
        bracket,
        exponent,
        terminations,
        normalized,
        kl,
        value,
    })
}

fn trajectory_term(
    policy: &PolicyOverOptions,
    options: &OptionSet,
    demo: &Demonstration,
    transitions: &TransitionModel,
    config: &ObjectiveConfig,
) -> Result<TrajectoryResult> {
    let h = &demo.trajectory;
    let n_actions = options.n_actions();
    let n_states = options.n_states();
    check_trajectory(h, n_states, n_actions)?;
    let probs = transition_probs(h, transitions)?;
    let log_env = log_env_factor(demo.start_prob, &probs)?;

    let (states, slot_of) = state_slots(h);
    let policy_acts: Vec<Activations> = states.iter().map(|&s| policy.activations(s)).collect();
    let option_acts: Vec<Vec<Activations>> = options
        .learned()
        .iter()
        .map(|o| states.iter().map(|&s| o.activations(s)).collect())
        .collect();

    let tape = Tape::with_capacity(64 * h.len() * options.len());
    let pi_logits: Vec<Vec<Var<'_>>> = policy_acts
        .iter()
        .map(|a| a.heads[0].iter().map(|&v| tape.var(v)).collect())
        .collect();
    let mu_logits: Vec<Vec<Vec<Var<'_>>>> = option_acts
        .iter()
        .map(|per_state| per_state.iter().map(|a| a.heads[0].iter().map(|&v| tape.var(v)).collect()).collect())
        .collect();
    let beta_logits: Vec<Vec<Var<'_>>> = option_acts
        .iter()
        .map(|per_state| per_state.iter().map(|a| tape.var(a.heads[1][0])).collect())
        .collect();
    let dists = SlotDistributions {
        pi: pi_logits.iter().map(|l| tape.softmax(l)).collect(),
        mu: mu_logits
            .iter()
            .map(|per_state| per_state.iter().map(|l| tape.softmax(l)).collect())
            .collect(),
        beta: beta_logits
            .iter()
            .map(|per_state| per_state.iter().map(|l| l.sigmoid()).collect())
            .collect(),
    };
    let terms = trajectory_terms(h, &slot_of, &dists, n_actions, &probs, log_env, config)?;

    let grad = terms.value.gradient();
    let mut policy_grad = vec![0.0; policy.params.len()];
    for (u, &s) in states.iter().enumerate() {
        let d = vec![pi_logits[u].iter().map(|v| grad.wrt(v)).collect::<Vec<_>>()];
        policy.params.backward(&encode_state(s, n_states), &policy_acts[u], &d, &mut policy_grad);
    }
    let option_grads = options
        .learned()
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let mut g = vec![0.0; o.params.len()];
            for (u, &s) in states.iter().enumerate() {
                let d = vec![
                    mu_logits[k][u].iter().map(|v| grad.wrt(v)).collect::<Vec<_>>(),
                    vec![grad.wrt(&beta_logits[k][u])],
                ];
                o.params.backward(&encode_state(s, n_states), &option_acts[k][u], &d, &mut g);
            }
            g
        })
        .collect();

    Ok(TrajectoryResult {
        terms: TrajectoryTerms {
            probability: terms.probability.value(),
            log_probability: terms.bracket.value().ln() + log_env + terms.exponent as f64 * std::f64::consts::LN_2,
            expected_terminations: terms.terminations.value(),
            normalized_terminations: terms.normalized.value(),
            kl: terms.kl.map_or(0.0, |k| k.value()),
            value: terms.value.value(),
        },
        policy_grad,
        option_grads,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mdp::build_chain;
    use crate::network::Init;
    use crate::objective::{expected_terminations, trajectory_probability};
    use crate::options::{LearnedOption, OptionTable, PolicyTable};
    use crate::optim::finite_diff_check;

    fn instance(seed: u64, n_learned: usize) -> (PolicyOverOptions, OptionSet, Vec<Demonstration>, TransitionModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = build_chain(5, seed).unwrap();
        let learned = (0..n_learned)
            .map(|_| LearnedOption::new(5, 2, 6, Init::Gaussian { std: 0.8 }, &mut rng))
            .collect();
        let options = OptionSet::with_learned(5, 2, learned).unwrap();
        let policy = PolicyOverOptions::new(5, options.len(), 6, Init::Gaussian { std: 0.8 }, &mut rng);
        let demos = vec![
            Demonstration {
                trajectory: Trajectory::new(vec![0, 1, 2, 2], vec![1, 1, 0], vec![0.0; 3]).unwrap(),
                start_prob: 1.0,
            },
            Demonstration {
                trajectory: Trajectory::new(vec![0, 0, 1], vec![0, 1], vec![0.0; 2]).unwrap(),
                start_prob: 1.0,
            },
        ];
        (policy, options, demos, TransitionModel::exact(&mdp))
    }

    #[test]
    fn aggregate_is_mean_of_terms_and_matches_tabular_path() {
        let (policy, options, demos, p) = instance(4, 3);
        let cfg = ObjectiveConfig::default();
        let report = j_hat(&policy, &options, &demos, &p, &cfg).unwrap();
        let mean: f64 = report
            .per_trajectory
            .iter()
            .map(|t| cfg.lambda2 * t.probability - t.normalized_terminations + cfg.lambda1 * t.kl)
            .sum::<f64>()
            / demos.len() as f64;
        assert!((report.j_hat - mean).abs() < 1e-10);

        let ot = OptionTable::from_options(&options);
        let pt = PolicyTable::from_policy(&policy);
        for (demo, terms) in demos.iter().zip(&report.per_trajectory) {
            let (total, _) = expected_terminations(&demo.trajectory, &pt, &ot, &p, cfg.recursion).unwrap();
            assert!((total - terms.expected_terminations).abs() < 1e-12);
            let mut d0 = vec![0.0; 5];
            d0[0] = 1.0;
            let lik = trajectory_probability(&demo.trajectory, &pt, &ot, &p, &d0, &cfg).unwrap();
            assert!((lik.probability - terms.probability).abs() < 1e-14);
        }
    }

    #[test]
    fn primitives_only_objective_is_scaled_probability_minus_one() {
        let (policy, _, demos, p) = {
            let (_, _, d, p) = instance(2, 0);
            let policy = PolicyOverOptions::new(5, 2, 6, Init::Gaussian { std: 0.5 }, &mut ChaCha8Rng::seed_from_u64(0));
            (policy, (), d, p)
        };
        let options = OptionSet::primitives(5, 2);
        let cfg = ObjectiveConfig {
            lambda1: 0.0,
            ..Default::default()
        };
        let report = j_hat(&policy, &options, &demos, &p, &cfg).unwrap();
        assert!((report.j_hat - (cfg.lambda2 * report.mean_probability - 1.0)).abs() < 1e-12);
        assert_eq!(report.mean_normalized_terminations, 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (seed, recursion) in [(1, dp::PosteriorRecursion::Filtered), (7, dp::PosteriorRecursion::AsPrinted)] {
            let (policy, options, demos, p) = instance(seed, 2);
            let cfg = ObjectiveConfig {
                lambda1: 0.5,
                lambda2: 10.0,
                recursion,
                ..Default::default()
            };
            let report = j_hat(&policy, &options, &demos, &p, &cfg).unwrap();

            let f = |v: &[f64]| {
                let mut pol = policy.clone();
                pol.params.values.copy_from_slice(v);
                j_hat(&pol, &options, &demos, &p, &cfg).unwrap().j_hat
            };
            let err = finite_diff_check(f, &policy.params.values, &report.policy_grad, 1e-5);
            assert!(err < 1e-4, "policy gradient error {err}");

            for k in 0..options.n_learned() {
                let f = |v: &[f64]| {
                    let mut opts = options.clone();
                    opts.learned_mut()[k].params.values.copy_from_slice(v);
                    j_hat(&policy, &opts, &demos, &p, &cfg).unwrap().j_hat
                };
                let err = finite_diff_check(f, &options.learned()[k].params.values, &report.option_grads[k], 1e-5);
                assert!(err < 1e-4, "option {k} gradient error {err}");
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (policy, options, _, p) = instance(1, 1);
        assert!(j_hat(&policy, &options, &[], &p, &ObjectiveConfig::default()).is_err());
    }
}
