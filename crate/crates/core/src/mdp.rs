//! Finite MDPs, recorded trajectories and transition models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums and start distributions must match 1 within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// One entry of a sparse transition row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// A finite MDP with sparse transition rows indexed by `(state, action)`.
///
/// Rows are kept sorted by successor id with duplicate successors merged, so
/// `prob(s, a, s')` is a binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    rows: Vec<Vec<Outcome>>,
    gamma: f64,
    start_dist: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// Builds and validates an MDP. `rows` is indexed by `s * n_actions + a`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        rows: Vec<Vec<Outcome>>,
        gamma: f64,
        start_dist: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if rows.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                found: rows.len(),
            });
        }
        if start_dist.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                found: start_dist.len(),
            });
        }
        if terminal.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                found: terminal.len(),
            });
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside [0, 1]")));
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(idx, row)| normalize_row(idx / n_actions, idx % n_actions, n_states, row))
            .collect::<Result<Vec<_>>>()?;
        check_distribution(&start_dist, "start distribution")?;
        Ok(Self {
            n_states,
            n_actions,
            rows,
            gamma,
            start_dist,
            terminal,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal
            .iter()
            .enumerate()
            .filter_map(|(s, &t)| t.then_some(s))
    }

    /// Sparse successor list for `(s, a)`.
    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.rows[s * self.n_actions + a]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        let row = self.outcomes(s, a);
        row.binary_search_by_key(&next, |o| o.next)
            .map_or(0.0, |i| row[i].prob)
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        let row = self.outcomes(s, a);
        row.binary_search_by_key(&next, |o| o.next)
            .map_or(0.0, |i| row[i].reward)
    }

    /// Dense probability vector over successors of `(s, a)`.
    pub fn dense_row(&self, s: usize, a: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states];
        for o in self.outcomes(s, a) {
            row[o.next] = o.prob;
        }
        row
    }

    /// Copy of this MDP with a different start distribution.
    pub fn with_start_dist(&self, start_dist: Vec<f64>) -> Result<Self> {
        if start_dist.len() != self.n_states {
            return Err(Error::DimensionMismatch {
                expected: self.n_states,
                found: start_dist.len(),
            });
        }
        check_distribution(&start_dist, "start distribution")?;
        Ok(Self {
            start_dist,
            ..self.clone()
        })
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidMdp(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn normalize_row(s: usize, a: usize, n_states: usize, mut row: Vec<Outcome>) -> Result<Vec<Outcome>> {
    if let Some(bad) = row.iter().find(|o| o.next >= n_states) {
        return Err(Error::InvalidMdp(format!(
            "row ({s}, {a}) points at state {} of {n_states}",
            bad.next
        )));
    }
    row.sort_by_key(|o| o.next);
    let mut merged: Vec<Outcome> = Vec::with_capacity(row.len());
    for o in row {
        match merged.last_mut() {
            Some(last) if last.next == o.next => last.prob += o.prob,
            _ => merged.push(o),
        }
    }
    merged.retain(|o| o.prob != 0.0);
    let probs: Vec<f64> = merged.iter().map(|o| o.prob).collect();
    check_distribution(&probs, &format!("transition row ({s}, {a})"))?;
    Ok(merged)
}

/// A recorded sequence `s_0, a_0, r_0, ..., s_{T-1}, a_{T-1}, r_{T-1}, s_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>, rewards: Vec<f64>) -> Result<Self> {
        let traj = Self {
            states,
            actions,
            rewards,
        };
        traj.check_lengths()?;
        Ok(traj)
    }

    /// A trajectory consisting only of its first state.
    pub fn start(s: usize) -> Self {
        Self {
            states: vec![s],
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, action: usize, reward: f64, next: usize) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.states.push(next);
    }

    /// Number of actions `|h|`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn last_state(&self) -> usize {
        *self.states.last().expect("trajectory has at least one state")
    }

    fn check_lengths(&self) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 || self.rewards.len() != self.actions.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} states, {} actions, {} rewards",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        Ok(())
    }

    /// Checks length coherence and that every transition is possible under `mdp`.
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        self.check_lengths()?;
        for (t, (&a, w)) in self.actions.iter().zip(self.states.windows(2)).enumerate() {
            if w[0] >= mdp.n_states() || w[1] >= mdp.n_states() || a >= mdp.n_actions() {
                return Err(Error::InvalidTrajectory(format!("step {t} is out of range")));
            }
            if mdp.prob(w[0], a, w[1]) <= 0.0 {
                return Err(Error::InvalidTrajectory(format!(
                    "step {t}: ({}, {a}, {}) has zero probability",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Samples a successor and reward for `(s, a)`.
pub fn sample_step<R: Rng + ?Sized>(mdp: &TabularMdp, s: usize, a: usize, rng: &mut R) -> Result<(usize, f64)> {
    if mdp.is_terminal(s) {
        return Err(Error::TerminalState(s));
    }
    let row = mdp.outcomes(s, a);
    let o = sample_outcome(row, rng);
    Ok((o.next, o.reward))
}

pub(crate) fn sample_outcome<'a, R: Rng + ?Sized>(row: &'a [Outcome], rng: &mut R) -> &'a Outcome {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for o in row {
        acc += o.prob;
        if u < acc {
            return o;
        }
    }
    row.last().expect("transition rows are non-empty")
}

/// Inverse-CDF draw from a dense distribution.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last entry with positive mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Random chain MDP with two actions (0 = left, 1 = right).
///
/// Each `(s, a)` row spreads mass over `s - 1`, `s` and `s + 1` (clamped at the
/// ends) with uniform random weights, the intended neighbour getting a bonus
/// of 2. Episodes start in state 0 and entering the last state pays +1.
pub fn build_chain(n_states: usize, seed: u64) -> Result<TabularMdp> {
    if n_states < 2 {
        return Err(Error::InvalidMdp(format!("a chain needs at least 2 states, got {n_states}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = n_states - 1;
    let mut rows = Vec::with_capacity(n_states * 2);
    for s in 0..n_states {
        for a in 0..2 {
            let targets = [s.saturating_sub(1), s, (s + 1).min(last)];
            let mut w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            w[if a == 0 { 0 } else { 2 }] += 2.0;
            let total: f64 = w.iter().sum();
            rows.push(
                targets
                    .iter()
                    .zip(w)
                    .map(|(&next, wi)| Outcome {
                        next,
                        prob: wi / total,
                        reward: if next == last && s != last { 1.0 } else { 0.0 },
                    })
                    .collect(),
            );
        }
    }
    let mut start = vec![0.0; n_states];
    start[0] = 1.0;
    TabularMdp::new(n_states, 2, rows, 0.99, start, vec![false; n_states])
}

/// Transition probabilities used by the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    n_states: usize,
    n_actions: usize,
    /// Sparse `(next, prob)` rows; an empty row means "never observed".
    rows: Vec<Vec<(usize, f64)>>,
    source: TransitionSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSource {
    Exact,
    Estimated,
}

impl TransitionModel {
    /// Copies the true dynamics of `mdp`.
    pub fn exact(mdp: &TabularMdp) -> Self {
        let rows = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| mdp.outcomes(s, a).iter().map(|o| (o.next, o.prob)).collect())
            .collect();
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            rows,
            source: TransitionSource::Exact,
        }
    }

    pub fn source(&self) -> TransitionSource {
        self.source
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        let row = &self.rows[s * self.n_actions + a];
        if row.is_empty() {
            return 1.0 / self.n_states as f64;
        }
        row.binary_search_by_key(&next, |&(n, _)| n)
            .map_or(0.0, |i| row[i].1)
    }

    pub fn dense_row(&self, s: usize, a: usize) -> Vec<f64> {
        let row = &self.rows[s * self.n_actions + a];
        if row.is_empty() {
            return vec![1.0 / self.n_states as f64; self.n_states];
        }
        let mut dense = vec![0.0; self.n_states];
        for &(n, p) in row {
            dense[n] = p;
        }
        dense
    }
}

/// Categorical maximum-likelihood estimate of the dynamics from trajectories.
/// Pairs `(s, a)` never seen fall back to the uniform distribution.
pub fn estimate_transitions(trajectories: &[Trajectory], n_states: usize, n_actions: usize) -> Result<TransitionModel> {
    let mut counts: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n_states * n_actions];
    for traj in trajectories {
        traj.check_lengths()?;
        for (&a, w) in traj.actions.iter().zip(traj.states.windows(2)) {
            let (s, next) = (w[0], w[1]);
            if s >= n_states || next >= n_states || a >= n_actions {
                return Err(Error::InvalidTrajectory(format!(
                    "transition ({s}, {a}, {next}) out of range"
                )));
            }
            let row = &mut counts[s * n_actions + a];
            match row.binary_search_by_key(&next, |&(n, _)| n) {
                Ok(i) => row[i].1 += 1,
                Err(i) => row.insert(i, (next, 1)),
            }
        }
    }
    let rows = counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().map(|&(_, c)| c).sum();
            row.into_iter()
                .map(|(n, c)| (n, c as f64 / total as f64))
                .collect()
        })
        .collect();
    Ok(TransitionModel {
        n_states,
        n_actions,
        rows,
        source: TransitionSource::Estimated,
    })
}
