use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{sample_index, sample_step, TabularMdp, Trajectory};
use crate::options::{OptionTable, PolicyTable};

/// Sampling estimate of a trajectory's probability and its expected number of
/// option terminations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub trials: usize,
    /// Fraction of rollouts whose whole state-action sequence equals `h`.
    pub probability: f64,
    /// `sum_t termination_counts[t-1] / prefix_matches[t]` over steps with at
    /// least one matching rollout.
    pub terminations: f64,
    /// `prefix_matches[t]`: rollouts agreeing with `h` on `s_0, a_0, ..., s_t`.
    pub prefix_matches: Vec<usize>,
    /// `termination_counts[t-1]`: prefix-matching rollouts whose option
    /// terminated on arrival at `s_t`.
    pub termination_counts: Vec<usize>,
}

impl McEstimate {
    /// Binomial standard error of [`McEstimate::probability`].
    pub fn probability_std_error(&self) -> f64 {
        let p = self.probability;
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Runs `trials` call-and-return rollouts of `h.len()` steps from the MDP's
/// start distribution and compares them with `h`.
///
/// A rollout is abandoned as soon as it leaves `h`, so the estimate only
/// consumes randomness for the matching part of each rollout.
pub fn mc_estimate<R: Rng + ?Sized>(
    h: &Trajectory,
    policy: &PolicyTable,
    options: &OptionTable,
    mdp: &TabularMdp,
    trials: usize,
    rng: &mut R,
) -> McEstimate {
    let horizon = h.len();
    let mut prefix_matches = vec![0usize; horizon + 1];
    let mut termination_counts = vec![0usize; horizon];
    let mut full = 0usize;
    for _ in 0..trials {
        let mut s = sample_index(mdp.start_dist(), rng);
        if s != h.states[0] {
            continue;
        }
        prefix_matches[0] += 1;
        let mut option = sample_index(policy.row(s), rng);
        let mut matched = true;
        for t in 0..horizon {
            if mdp.is_terminal(s) {
                matched = false;
                break;
            }
            let a = sample_index(options.mu_row(option, s), rng);
            if a != h.actions[t] {
                matched = false;
                break;
            }
            let (next, _) = sample_step(mdp, s, a, rng).expect("validated state and action");
            if next != h.states[t + 1] {
                matched = false;
                break;
            }
            s = next;
            prefix_matches[t + 1] += 1;
            let beta = options.beta(option, s);
            let terminated = beta >= 1.0 || (beta > 0.0 && rng.random::<f64>() < beta);
            if terminated {
                termination_counts[t] += 1;
                if t + 1 < horizon {
                    option = sample_index(policy.row(s), rng);
                }
            }
        }
        if matched {
            full += 1;
        }
    }
    let terminations = (1..=horizon)
        .filter(|&t| prefix_matches[t] > 0)
        .map(|t| termination_counts[t - 1] as f64 / prefix_matches[t] as f64)
        .sum();
    McEstimate {
        trials,
        probability: if trials == 0 { 0.0 } else { full as f64 / trials as f64 },
        terminations,
        prefix_matches,
        termination_counts,
    }
}

/// Samples a `len`-step trajectory by call-and-return execution from the
/// MDP's start distribution. Stops early at terminal states.
pub fn sample_trajectory<R: Rng + ?Sized>(
    policy: &PolicyTable,
    options: &OptionTable,
    mdp: &TabularMdp,
    len: usize,
    rng: &mut R,
) -> Trajectory {
    let mut s = sample_index(mdp.start_dist(), rng);
    let mut h = Trajectory::start(s);
    let mut option = sample_index(policy.row(s), rng);
    while h.len() < len && !mdp.is_terminal(s) {
        let a = sample_index(options.mu_row(option, s), rng);
        let (next, r) = sample_step(mdp, s, a, rng).expect("non-terminal state");
        h.push(a, r, next);
        s = next;
        let beta = options.beta(option, s);
        if beta >= 1.0 || (beta > 0.0 && rng.random::<f64>() < beta) {
            option = sample_index(policy.row(s), rng);
        }
    }
    h
}
