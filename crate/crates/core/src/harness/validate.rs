//! Analytic-versus-sampling validation of the likelihood and termination
//! recursions, plus exhaustive-enumeration cross-checks on tiny MDPs.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{build_chain, Outcome, TabularMdp, TransitionModel, Trajectory};
use crate::network::Init;
use crate::objective::{
    enumerate_exact, expected_terminations, mc_estimate, sample_trajectory, trajectory_probability,
    ObjectiveConfig, PosteriorRecursion, DEFAULT_ENUMERATION_BUDGET,
};
use crate::options::{LearnedOption, OptionSet, OptionTable, PolicyOverOptions, PolicyTable};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub chains: usize,
    pub trials: usize,
    pub seed: u64,
    pub chain_states: usize,
    pub learned_options: usize,
    pub hidden: usize,
    /// Standard deviation of the random option and policy weights.
    pub init_std: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability band, in binomial standard errors of the analytic value.
    pub prob_sigmas: f64,
    /// Relative tolerance on expected terminations.
    pub termination_rel_tol: f64,
    /// Termination rows are only checked above this analytic probability.
    pub termination_min_prob: f64,
    pub enumeration_mdps: usize,
    pub enumeration_len: usize,
    pub recursion: PosteriorRecursion,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            chains: 10,
            trials: 10_000,
            seed: 0,
            chain_states: 7,
            learned_options: 4,
            hidden: 32,
            init_std: 0.5,
            min_len: 3,
            max_len: 6,
            prob_sigmas: 3.0,
            termination_rel_tol: 0.1,
            termination_min_prob: 0.01,
            enumeration_mdps: 5,
            enumeration_len: 3,
            recursion: PosteriorRecursion::Filtered,
        }
    }
}

/// One row of the sampling comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub chain: usize,
    pub length: usize,
    pub analytic_probability: f64,
    pub mc_probability: f64,
    /// `sqrt(p (1 - p) / trials)` at the analytic `p`.
    pub std_error: f64,
    pub probability_ok: bool,
    pub analytic_terminations: f64,
    pub mc_terminations: f64,
    pub termination_rel_error: f64,
    /// Whether the termination tolerance applies to this row.
    pub termination_checked: bool,
    pub termination_ok: bool,
    pub final_prefix_matches: usize,
}

/// Cross-check of the likelihood recursion against enumeration on one MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationRow {
    pub mdp: usize,
    pub n_states: usize,
    pub trajectories: usize,
    pub max_abs_diff: f64,
    pub total_probability: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub chains: Vec<ChainRow>,
    pub enumeration: Vec<EnumerationRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.chains.iter().all(|r| r.probability_ok && r.termination_ok) && self.enumeration.iter().all(|r| r.ok)
    }

    /// Description of the first failing row, if any.
    pub fn first_failure(&self) -> Option<String> {
        if let Some(r) = self.chains.iter().find(|r| !(r.probability_ok && r.termination_ok)) {
            return Some(format!(
                "chain {}: Pr {:.6} vs MC {:.6} (se {:.6}), terminations {:.4} vs MC {:.4}",
                r.chain, r.analytic_probability, r.mc_probability, r.std_error, r.analytic_terminations, r.mc_terminations
            ));
        }
        self.enumeration.iter().find(|r| !r.ok).map(|r| {
            format!(
                "enumeration mdp {}: max diff {:.3e}, total {:.15}",
                r.mdp, r.max_abs_diff, r.total_probability
            )
        })
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>4} {:>12} {:>12} {:>10} {:>12} {:>12} {:>8}  check",
            "chain", "len", "Pr", "Pr (MC)", "3 se", "E[term]", "E[term] MC", "rel err"
        )?;
        for r in &self.chains {
            let check = match (r.probability_ok, r.termination_checked, r.termination_ok) {
                (true, true, true) => "ok",
                (true, false, _) => "ok (Pr < min: terminations not checked)",
                _ => "FAIL",
            };
            writeln!(
                f,
                "{:>5} {:>4} {:>12.6} {:>12.6} {:>10.6} {:>12.4} {:>12.4} {:>8.4}  {check}",
                r.chain,
                r.length,
                r.analytic_probability,
                r.mc_probability,
                self.config.prob_sigmas * r.std_error,
                r.analytic_terminations,
                r.mc_terminations,
                r.termination_rel_error,
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:>5} {:>7} {:>6} {:>12} {:>18}  check", "mdp", "states", "paths", "max |diff|", "sum Pr")?;
        for r in &self.enumeration {
            writeln!(
                f,
                "{:>5} {:>7} {:>6} {:>12.3e} {:>18.15}  {}",
                r.mdp,
                r.n_states,
                r.trajectories,
                r.max_abs_diff,
                r.total_probability,
                if r.ok { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Random option set with `n_learned` network options and a random policy
/// over all options, both tabulated.
pub fn random_option_model<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    n_learned: usize,
    hidden: usize,
    std: f64,
    rng: &mut R,
) -> Result<(OptionSet, PolicyOverOptions)> {
    let init = Init::Gaussian { std };
    let learned = (0..n_learned)
        .map(|_| LearnedOption::new(n_states, n_actions, hidden, init, rng))
        .collect();
    let options = OptionSet::with_learned(n_states, n_actions, learned)?;
    let policy = PolicyOverOptions::new(n_states, options.len(), hidden, init, rng);
    Ok((options, policy))
}

pub fn run_validation(config: &ValidationConfig) -> Result<ValidationReport> {
    if config.trials < 1000 {
        return Err(Error::InvalidConfig("validation needs at least 1000 trials".into()));
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::InvalidConfig("need 1 <= min_len <= max_len".into()));
    }
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|i| chain_row(config, i))
        .collect::<Result<Vec<_>>>()?;
    let enumeration = (0..config.enumeration_mdps)
        .into_par_iter()
        .map(|i| enumeration_row(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport {
        config: *config,
        chains,
        enumeration,
    })
}

fn chain_row(config: &ValidationConfig, index: usize) -> Result<ChainRow> {
    let label = index.to_string();
    let mut rng = rng_for(config.seed, &["validate", "chain", &label]);
    let mdp = build_chain(config.chain_states, rng.random())?;
    let (options, policy) = random_option_model(
        config.chain_states,
        2,
        config.learned_options,
        config.hidden,
        config.init_std,
        &mut rng,
    )?;
    let table = OptionTable::from_options(&options);
    let pi = PolicyTable::from_policy(&policy);
    let len = rng.random_range(config.min_len..=config.max_len);
    let h = sample_trajectory(&pi, &table, &mdp, len, &mut rng);

    let p = TransitionModel::exact(&mdp);
    let objective = ObjectiveConfig {
        recursion: config.recursion,
        ..Default::default()
    };
    let analytic = trajectory_probability(&h, &pi, &table, &p, mdp.start_dist(), &objective)?.probability;
    let (terminations, _) = expected_terminations(&h, &pi, &table, &p, config.recursion)?;
    let mut mc_rng = rng_for(config.seed, &["validate", "mc", &label]);
    let mc = mc_estimate(&h, &pi, &table, &mdp, config.trials, &mut mc_rng);

    let std_error = (analytic * (1.0 - analytic) / config.trials as f64).sqrt();
    let probability_ok = (analytic - mc.probability).abs() <= config.prob_sigmas * std_error;
    let rel = (terminations - mc.terminations).abs() / terminations.abs().max(f64::MIN_POSITIVE);
    let checked = analytic >= config.termination_min_prob;
    Ok(ChainRow {
        chain: index,
        length: h.len(),
        analytic_probability: analytic,
        mc_probability: mc.probability,
        std_error,
        probability_ok,
        analytic_terminations: terminations,
        mc_terminations: mc.terminations,
        termination_rel_error: rel,
        termination_checked: checked,
        termination_ok: !checked || rel <= config.termination_rel_tol,
        final_prefix_matches: mc.prefix_matches[h.len()],
    })
}

/// Random MDP with dense random transition rows and a random start
/// distribution.
pub fn random_tiny_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Result<TabularMdp> {
    let mut normalised = |n: usize| {
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect::<Vec<_>>()
    };
    let rows = (0..n_states * n_actions)
        .map(|_| {
            normalised(n_states)
                .into_iter()
                .enumerate()
                .map(|(next, prob)| Outcome { next, prob, reward: 0.0 })
                .collect()
        })
        .collect();
    let d0 = normalised(n_states);
    TabularMdp::new(n_states, n_actions, rows, 1.0, d0, vec![false; n_states])
}

fn enumeration_row(config: &ValidationConfig, index: usize) -> Result<EnumerationRow> {
    let mut rng = rng_for(config.seed, &["validate", "enumerate", &index.to_string()]);
    let n_states = 2 + index % 2;
    let mdp = random_tiny_mdp(n_states, 2, &mut rng)?;
    let (options, policy) = random_option_model(n_states, 2, 1, 8, 1.0, &mut rng)?;
    let table = OptionTable::from_options(&options);
    let pi = PolicyTable::from_policy(&policy);
    let paths = enumerate_exact(&mdp, &pi, &table, config.enumeration_len, DEFAULT_ENUMERATION_BUDGET)?;
    let p = TransitionModel::exact(&mdp);
    let objective = ObjectiveConfig::default();
    let mut max_abs_diff: f64 = 0.0;
    let mut total = 0.0;
    for (key, &prob) in &paths {
        let n = key.actions.len();
        let h = Trajectory::new(key.states.clone(), key.actions.clone(), vec![0.0; n])?;
        let dp = trajectory_probability(&h, &pi, &table, &p, mdp.start_dist(), &objective)?.probability;
        max_abs_diff = max_abs_diff.max((dp - prob).abs());
        total += prob;
    }
    Ok(EnumerationRow {
        mdp: index,
        n_states,
        trajectories: paths.len(),
        max_abs_diff,
        total_probability: total,
        ok: max_abs_diff <= 1e-10 && (total - 1.0).abs() <= 1e-8,
    })
}
