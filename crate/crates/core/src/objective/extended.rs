//! The objective's value in double-double precision, used as a rounding-free
//! finite-difference reference for the analytic gradient.

use rayon::prelude::*;

use super::jhat::{check_trajectory, state_slots, trajectory_terms, SlotDistributions};
use super::{log_env_factor, transition_probs, Demonstration, ObjectiveConfig};
use crate::autodiff::{sigmoid_real, softmax_real};
use crate::ddouble::DoubleDouble;
use crate::error::{Error, Result};
use crate::mdp::TransitionModel;
use crate::network::{forward_heads, Architecture};
use crate::options::{encode_state, OptionSet, PolicyOverOptions};

type DD = DoubleDouble;

/// A network whose parameters are differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Policy,
    /// Learned option `k` (0-based among learned options).
    Option(usize),
}

struct Prepared<'a> {
    demo: &'a Demonstration,
    states: Vec<usize>,
    slot_of: Vec<usize>,
    probs: Vec<f64>,
    log_env: f64,
}

struct Model<'a> {
    policy: &'a Architecture,
    options: Vec<&'a Architecture>,
    n_states: usize,
    n_actions: usize,
}

/// Softmax/sigmoid outputs of every network at every state.
#[derive(Clone)]
struct AllStates {
    pi: Vec<Vec<DD>>,
    mu: Vec<Vec<Vec<DD>>>,
    beta: Vec<Vec<DD>>,
}

impl Model<'_> {
    fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| encode_state(s, self.n_states)).collect()
    }

    fn policy_outputs(&self, values: &[DD]) -> Vec<Vec<DD>> {
        self.inputs()
            .iter()
            .map(|x| softmax_real(&forward_heads(self.policy, values, x)[0]))
            .collect()
    }

    fn option_outputs(&self, k: usize, values: &[DD]) -> (Vec<Vec<DD>>, Vec<DD>) {
        self.inputs()
            .iter()
            .map(|x| {
                let heads = forward_heads(self.options[k], values, x);
                (softmax_real(&heads[0]), sigmoid_real(heads[1][0]))
            })
            .unzip()
    }

    fn all_states(&self, policy_values: &[DD], option_values: &[Vec<DD>]) -> AllStates {
        let (mu, beta) = option_values
            .iter()
            .enumerate()
            .map(|(k, v)| self.option_outputs(k, v))
            .unzip();
        AllStates {
            pi: self.policy_outputs(policy_values),
            mu,
            beta,
        }
    }
}

fn evaluate(model: &Model<'_>, outputs: &AllStates, data: &[Prepared<'_>], config: &ObjectiveConfig) -> Result<DD> {
    let mut total = DD::ZERO;
    for p in data {
        let dists = SlotDistributions {
            pi: p.states.iter().map(|&s| outputs.pi[s].clone()).collect(),
            mu: outputs
                .mu
                .iter()
                .map(|per_state| p.states.iter().map(|&s| per_state[s].clone()).collect())
                .collect(),
            beta: outputs
                .beta
                .iter()
                .map(|per_state| p.states.iter().map(|&s| per_state[s]).collect())
                .collect(),
        };
        let terms = trajectory_terms(&p.demo.trajectory, &p.slot_of, &dists, model.n_actions, &p.probs, p.log_env, config)?;
        total = total + terms.value;
    }
    Ok(total / data.len() as f64)
}

fn prepare<'a>(
    policy: &'a PolicyOverOptions,
    options: &'a OptionSet,
    data: &'a [Demonstration],
    transitions: &TransitionModel,
) -> Result<(Model<'a>, Vec<Prepared<'a>>)> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("objective needs at least one trajectory".into()));
    }
    if policy.n_options() != options.len() {
        return Err(Error::DimensionMismatch {
            expected: options.len(),
            found: policy.n_options(),
        });
    }
    let model = Model {
        policy: &policy.params.architecture,
        options: options.learned().iter().map(|o| &o.params.architecture).collect(),
        n_states: options.n_states(),
        n_actions: options.n_actions(),
    };
    let prepared = data
        .iter()
        .map(|demo| {
            let h = &demo.trajectory;
            check_trajectory(h, model.n_states, model.n_actions)?;
            let probs = transition_probs(h, transitions)?;
            let log_env = log_env_factor(demo.start_prob, &probs)?;
            let (states, slot_of) = state_slots(h);
            Ok(Prepared {
                demo,
                states,
                slot_of,
                probs,
                log_env,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, prepared))
}

fn widen(values: &[f64]) -> Vec<DD> {
    values.iter().map(|&v| DD::new(v)).collect()
}

/// The objective (same definition as [`super::j_hat`]) evaluated in
/// double-double arithmetic.
pub fn j_hat_extended(
    policy: &PolicyOverOptions,
    options: &OptionSet,
    data: &[Demonstration],
    transitions: &TransitionModel,
    config: &ObjectiveConfig,
) -> Result<DD> {
    let (model, prepared) = prepare(policy, options, data, transitions)?;
    let option_values: Vec<Vec<DD>> = options.learned().iter().map(|o| widen(&o.params.values)).collect();
    let outputs = model.all_states(&widen(&policy.params.values), &option_values);
    evaluate(&model, &outputs, &prepared, config)
}

/// Central differences `(J(x + eps e_i) - J(x - eps e_i)) / (2 eps)` for every
/// parameter of `block`, with each evaluation carried out in double-double so
/// the result is limited by truncation error only.
pub fn central_differences_extended(
    policy: &PolicyOverOptions,
    options: &OptionSet,
    data: &[Demonstration],
    transitions: &TransitionModel,
    config: &ObjectiveConfig,
    block: ParamBlock,
    eps: f64,
) -> Result<Vec<f64>> {
    let (model, prepared) = prepare(policy, options, data, transitions)?;
    let policy_values = widen(&policy.params.values);
    let option_values: Vec<Vec<DD>> = options.learned().iter().map(|o| widen(&o.params.values)).collect();
    let n = match block {
        ParamBlock::Policy => policy_values.len(),
        ParamBlock::Option(k) => option_values
            .get(k)
            .ok_or_else(|| Error::InvalidConfig(format!("no learned option {k}")))?
            .len(),
    };
    let base = model.all_states(&policy_values, &option_values);
    (0..n)
        .into_par_iter()
        .map(|i| {
            // only the perturbed network's outputs change
            let at = |delta: f64| {
                let mut outputs = base.clone();
                match block {
                    ParamBlock::Policy => {
                        let mut v = policy_values.clone();
                        v[i] = v[i] + delta;
                        outputs.pi = model.policy_outputs(&v);
                    }
                    ParamBlock::Option(k) => {
                        let mut v = option_values[k].clone();
                        v[i] = v[i] + delta;
                        (outputs.mu[k], outputs.beta[k]) = model.option_outputs(k, &v);
                    }
                }
                evaluate(&model, &outputs, &prepared, config)
            };
            Ok(((at(eps)? - at(-eps)?) / (2.0 * eps)).to_f64())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mdp::{build_chain, Trajectory};
    use crate::network::Init;
    use crate::objective::{j_hat, PosteriorRecursion};
    use crate::options::LearnedOption;

    fn instance() -> (PolicyOverOptions, OptionSet, Vec<Demonstration>, TransitionModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = build_chain(4, 5).unwrap();
        let learned = (0..2)
            .map(|_| LearnedOption::new(4, 2, 5, Init::Gaussian { std: 0.7 }, &mut rng))
            .collect();
        let options = OptionSet::with_learned(4, 2, learned).unwrap();
        let policy = PolicyOverOptions::new(4, options.len(), 5, Init::Gaussian { std: 0.7 }, &mut rng);
        let demos = vec![Demonstration {
            trajectory: Trajectory::new(vec![0, 1, 2, 1], vec![1, 1, 0], vec![0.0; 3]).unwrap(),
            start_prob: 1.0,
        }];
        (policy, options, demos, TransitionModel::exact(&mdp))
    }

    #[test]
    fn extended_value_agrees_with_f64_value() {
        let (policy, options, demos, p) = instance();
        for recursion in [PosteriorRecursion::Filtered, PosteriorRecursion::AsPrinted] {
            let cfg = ObjectiveConfig {
                lambda1: 0.3,
                recursion,
                ..Default::default()
            };
            let plain = j_hat(&policy, &options, &demos, &p, &cfg).unwrap().j_hat;
            let wide = j_hat_extended(&policy, &options, &demos, &p, &cfg).unwrap().to_f64();
            assert!((plain - wide).abs() <= 1e-13 * plain.abs().max(1.0), "{plain} vs {wide}");
        }
    }

    #[test]
    fn extended_differences_match_analytic_gradient() {
        let (policy, options, demos, p) = instance();
        let cfg = ObjectiveConfig {
            lambda1: 0.3,
            ..Default::default()
        };
        let report = j_hat(&policy, &options, &demos, &p, &cfg).unwrap();
        let fd = central_differences_extended(&policy, &options, &demos, &p, &cfg, ParamBlock::Policy, 1e-5).unwrap();
        for (a, n) in report.policy_grad.iter().zip(&fd) {
            assert!((a - n).abs() / (a.abs() + n.abs()).max(1e-8) < 1e-6, "{a} vs {n}");
        }
        let fd = central_differences_extended(&policy, &options, &demos, &p, &cfg, ParamBlock::Option(1), 1e-5).unwrap();
        assert_eq!(fd.len(), report.option_grads[1].len());
        assert!(central_differences_extended(&policy, &options, &demos, &p, &cfg, ParamBlock::Option(2), 1e-5).is_err());
    }
}
