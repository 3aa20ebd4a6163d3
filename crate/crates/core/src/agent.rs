//! Tabular agents: one-step Q-learning over primitive actions (used to
//! produce demonstrations) and SMDP Q-learning over an option set (used to
//! measure transfer).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_index, sample_step, TabularMdp, Trajectory};
use crate::options::OptionTable;

/// Resampling cap for [`greedy_trajectories`], per requested trajectory.
pub const GREEDY_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Primitive steps after which an episode is cut off.
    pub max_steps: usize,
    /// Initial value of every Q entry.
    pub initial_q: f64,
    /// Longest single option execution, in primitive steps; `None` leaves
    /// only the episode cutoff.
    pub option_step_cap: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon: 0.1,
            max_steps: 5000,
            initial_q: 0.0,
            option_step_cap: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig("alpha and epsilon must lie in [0, 1]".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if self.option_step_cap == Some(0) {
            return Err(Error::InvalidConfig("option_step_cap must be positive".into()));
        }
        if !self.initial_q.is_finite() {
            return Err(Error::InvalidConfig("initial_q must be finite".into()));
        }
        Ok(())
    }
}

/// Action values over `n_choices` primitives or options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_choices: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_choices: usize, initial: f64) -> Self {
        Self {
            n_states,
            n_choices,
            values: vec![initial; n_states * n_choices],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_choices(&self) -> usize {
        self.n_choices
    }

    pub fn get(&self, s: usize, c: usize) -> f64 {
        self.values[s * self.n_choices + c]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_choices..(s + 1) * self.n_choices]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued choice; ties go to the lowest id.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }

    fn update(&mut self, s: usize, c: usize, target: f64, alpha: f64) {
        let q = &mut self.values[s * self.n_choices + c];
        *q += alpha * (target - *q);
    }

    fn epsilon_greedy<R: Rng + ?Sized>(&self, s: usize, epsilon: f64, rng: &mut R) -> usize {
        if rng.random::<f64>() < epsilon {
            rng.random_range(0..self.n_choices)
        } else {
            self.greedy(s)
        }
    }
}

/// Per-episode statistics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub seed: u64,
    /// Undiscounted return.
    pub returns: Vec<f64>,
    /// Primitive steps.
    pub steps: Vec<usize>,
    /// Choices made by the agent (equal to `steps` over primitives).
    pub decisions: Vec<usize>,
}

impl LearningCurve {
    fn new(seed: u64, episodes: usize) -> Self {
        Self {
            seed,
            returns: Vec::with_capacity(episodes),
            steps: Vec::with_capacity(episodes),
            decisions: Vec::with_capacity(episodes),
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

fn start_state<R: Rng + ?Sized>(mdp: &TabularMdp, rng: &mut R) -> Result<usize> {
    let s = sample_index(mdp.start_dist(), rng);
    if mdp.is_terminal(s) {
        return Err(Error::TerminalState(s));
    }
    Ok(s)
}

/// One-step Q-learning with epsilon-greedy exploration over primitive actions.
pub fn q_learning<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    episodes: usize,
    config: &AgentConfig,
    seed: u64,
    rng: &mut R,
) -> Result<(QTable, LearningCurve)> {
    config.validate()?;
    let gamma = mdp.gamma();
    let mut q = QTable::new(mdp.n_states(), mdp.n_actions(), config.initial_q);
    let mut curve = LearningCurve::new(seed, episodes);
    for _ in 0..episodes {
        let mut s = start_state(mdp, rng)?;
        let (mut ret, mut steps) = (0.0, 0);
        while steps < config.max_steps && !mdp.is_terminal(s) {
            let a = q.epsilon_greedy(s, config.epsilon, rng);
            let (next, r) = sample_step(mdp, s, a, rng)?;
            let bootstrap = if mdp.is_terminal(next) { 0.0 } else { q.max(next) };
            q.update(s, a, r + gamma * bootstrap, config.alpha);
            ret += r;
            steps += 1;
            s = next;
        }
        curve.returns.push(ret);
        curve.steps.push(steps);
        curve.decisions.push(steps);
    }
    Ok((q, curve))
}

/// Greedy rollouts from the task start that reach `goal` within `max_len`
/// steps. Failed rollouts are resampled up to [`GREEDY_ATTEMPTS`] times each.
pub fn greedy_trajectories<R: Rng + ?Sized>(
    q: &QTable,
    mdp: &TabularMdp,
    goal: usize,
    k: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut found = None;
        for _ in 0..GREEDY_ATTEMPTS {
            let mut s = start_state(mdp, rng)?;
            let mut h = Trajectory::start(s);
            while h.len() < max_len && s != goal && !mdp.is_terminal(s) {
                let a = q.greedy(s);
                let (next, r) = sample_step(mdp, s, a, rng)?;
                h.push(a, r, next);
                s = next;
            }
            if s == goal && !h.is_empty() {
                found = Some(h);
                break;
            }
        }
        out.push(found.ok_or(Error::PolicyNotPerformant {
            attempts: GREEDY_ATTEMPTS,
        })?);
    }
    Ok(out)
}

/// Result of running one option to termination.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionRun {
    pub segment: Trajectory,
    /// `sum_j gamma^j r_j`.
    pub discounted_return: f64,
    /// `gamma^duration`.
    pub discount: f64,
    pub duration: usize,
}

/// Call-and-return execution of option `o` from `s`: act with `mu_o`, then
/// stop with probability `beta_o` at the new state. Also stops at terminal
/// states and after `step_budget` steps. Primitive options take one step and
/// draw no randomness besides the transition.
pub fn execute_option<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    options: &OptionTable,
    o: usize,
    s: usize,
    step_budget: usize,
    rng: &mut R,
) -> Result<OptionRun> {
    if mdp.is_terminal(s) {
        return Err(Error::TerminalState(s));
    }
    let gamma = mdp.gamma();
    let mut segment = Trajectory::start(s);
    let (mut ret, mut discount) = (0.0, 1.0);
    let mut current = s;
    while segment.len() < step_budget {
        let a = if options.is_primitive(o) { o } else { sample_index(options.mu_row(o, current), rng) };
        let (next, r) = sample_step(mdp, current, a, rng)?;
        ret += discount * r;
        discount *= gamma;
        segment.push(a, r, next);
        current = next;
        if options.is_primitive(o) || mdp.is_terminal(current) {
            break;
        }
        let beta = options.beta(o, current);
        if beta >= 1.0 || (beta > 0.0 && rng.random::<f64>() < beta) {
            break;
        }
    }
    let duration = segment.len();
    Ok(OptionRun {
        segment,
        discounted_return: ret,
        discount,
        duration,
    })
}

/// Q-learning over options with the macro update
/// `Q(s,o) += alpha (R + gamma^k max_o' Q(s',o') - Q(s,o))`.
///
/// With primitives only this performs exactly the same arithmetic and draws
/// as [`q_learning`].
pub fn smdp_q_learning<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    options: &OptionTable,
    episodes: usize,
    config: &AgentConfig,
    seed: u64,
    rng: &mut R,
) -> Result<(QTable, LearningCurve)> {
    config.validate()?;
    if options.n_states() != mdp.n_states() || options.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_states(),
            found: options.n_states(),
        });
    }
    let mut q = QTable::new(mdp.n_states(), options.n_options(), config.initial_q);
    let mut curve = LearningCurve::new(seed, episodes);
    for _ in 0..episodes {
        let mut s = start_state(mdp, rng)?;
        let (mut ret, mut steps, mut decisions) = (0.0, 0, 0);
        while steps < config.max_steps && !mdp.is_terminal(s) {
            let o = q.epsilon_greedy(s, config.epsilon, rng);
            let budget = (config.max_steps - steps).min(config.option_step_cap.unwrap_or(usize::MAX));
            let run = execute_option(mdp, options, o, s, budget, rng)?;
            let next = run.segment.last_state();
            let bootstrap = if mdp.is_terminal(next) { 0.0 } else { q.max(next) };
            q.update(s, o, run.discounted_return + run.discount * bootstrap, config.alpha);
            ret += run.segment.rewards.iter().sum::<f64>();
            steps += run.duration;
            decisions += 1;
            s = next;
        }
        curve.returns.push(ret);
        curve.steps.push(steps);
        curve.decisions.push(decisions);
    }
    Ok((q, curve))
}
