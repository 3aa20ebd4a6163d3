use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::options::{OptionTable, PolicyTable};

/// Upper bound on enumerated (latent sequence, trajectory) terms.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

/// Observable part of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathKey {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

/// Exact probability of every length-`len` trajectory, obtained by summing
/// over every latent sequence of option choices and termination outcomes
/// under call-and-return execution.
///
/// Brute force, intended as an oracle on tiny MDPs. Terminal flags are
/// ignored: every state keeps its transition rows.
pub fn enumerate_exact(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    options: &OptionTable,
    len: usize,
    budget: u64,
) -> Result<BTreeMap<PathKey, f64>> {
    if policy.n_options() != options.n_options() {
        return Err(Error::DimensionMismatch {
            expected: options.n_options(),
            found: policy.n_options(),
        });
    }
    if options.n_states() != mdp.n_states() || options.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_states(),
            found: options.n_states(),
        });
    }
    let branching = (options.n_options() * mdp.n_actions() * mdp.n_states() * 2) as u128;
    let terms = (mdp.n_states() as u128).saturating_mul(branching.saturating_pow(len as u32));
    if terms > budget as u128 {
        return Err(Error::BudgetExceeded {
            terms: u64::try_from(terms).unwrap_or(u64::MAX),
            budget,
        });
    }

    let mut out = BTreeMap::new();
    let mut walker = Walker {
        mdp,
        policy,
        options,
        len,
        states: Vec::with_capacity(len + 1),
        actions: Vec::with_capacity(len),
        out: &mut out,
    };
    for (s0, &p0) in mdp.start_dist().iter().enumerate() {
        if p0 <= 0.0 {
            continue;
        }
        walker.states.push(s0);
        walker.choose(s0, p0);
        walker.states.pop();
    }
    Ok(out)
}

struct Walker<'a> {
    mdp: &'a TabularMdp,
    policy: &'a PolicyTable,
    options: &'a OptionTable,
    len: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    out: &'a mut BTreeMap<PathKey, f64>,
}

impl Walker<'_> {
    fn choose(&mut self, s: usize, weight: f64) {
        for o in 0..self.options.n_options() {
            let p = self.policy.prob(s, o);
            if p > 0.0 {
                self.act(s, o, weight * p);
            }
        }
    }

    fn act(&mut self, s: usize, o: usize, weight: f64) {
        if self.actions.len() == self.len {
            let key = PathKey {
                states: self.states.clone(),
                actions: self.actions.clone(),
            };
            *self.out.entry(key).or_insert(0.0) += weight;
            return;
        }
        for a in 0..self.mdp.n_actions() {
            let pa = self.options.mu(o, s, a);
            if pa <= 0.0 {
                continue;
            }
            for outcome in self.mdp.outcomes(s, a) {
                let next = outcome.next;
                let w = weight * pa * outcome.prob;
                self.states.push(next);
                self.actions.push(a);
                if self.actions.len() == self.len {
                    // Termination at the final state does not affect the path.
                    self.act(next, o, w);
                } else {
                    let beta = self.options.beta(o, next);
                    if beta > 0.0 {
                        self.choose(next, w * beta);
                    }
                    if beta < 1.0 {
                        self.act(next, o, w * (1.0 - beta));
                    }
                }
                self.states.pop();
                self.actions.pop();
            }
        }
    }
}
