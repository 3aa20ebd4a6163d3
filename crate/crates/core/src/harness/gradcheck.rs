//! Randomised audit of the objective's analytic gradient against central
//! finite differences.
//!
//! The differences are taken of the objective evaluated in double-double
//! arithmetic. In plain `f64` the rounding error of `J(x + eps) - J(x - eps)`
//! is about `ulp(J) / eps`, which for `|J|` in the tens swamps gradient
//! components below roughly `1e-6` under the `1e-8` floor of the error
//! measure; the plain-`f64` figure is still reported for comparison.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::validate::random_option_model;
use crate::error::{Error, Result};
use crate::mdp::{build_chain, TransitionModel};
use crate::objective::{
    central_differences_extended, j_hat, sample_trajectory, Demonstration, ObjectiveConfig, ParamBlock,
    PosteriorRecursion,
};
use crate::optim::{finite_diff_check, max_relative_error};
use crate::options::{OptionTable, PolicyTable};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub max_len: usize,
    /// Upper bound on primitives plus learned options.
    pub max_options: usize,
    pub trajectories: usize,
    pub hidden: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            max_len: 5,
            max_options: 6,
            trajectories: 2,
            hidden: 8,
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub instance: usize,
    pub n_states: usize,
    pub n_options: usize,
    pub lengths: Vec<usize>,
    pub recursion: PosteriorRecursion,
    pub rescale: bool,
    pub policy_error: f64,
    /// Worst error over the learned options.
    pub option_error: f64,
    /// Worst error over all parameters with differences taken in plain `f64`.
    pub plain_f64_error: f64,
}

impl GradcheckRow {
    pub fn max_error(&self) -> f64 {
        self.policy_error.max(self.option_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(GradcheckRow::max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.config.tolerance
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>6} {:>7} {:>12} {:>10} {:>7} {:>12} {:>12} {:>12}",
            "instance", "states", "options", "lengths", "recursion", "rescale", "pi error", "option error", "plain f64"
        )?;
        for r in &self.rows {
            let lengths = r.lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
            writeln!(
                f,
                "{:>8} {:>6} {:>7} {:>12} {:>10} {:>7} {:>12.3e} {:>12.3e} {:>12.3e}",
                r.instance,
                r.n_states,
                r.n_options,
                lengths,
                format!("{:?}", r.recursion),
                r.rescale,
                r.policy_error,
                r.option_error,
                r.plain_f64_error
            )?;
        }
        writeln!(
            f,
            "max relative error {:.3e} (tolerance {:.0e}): {}",
            self.max_error(),
            self.config.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    if config.max_len == 0 || config.max_options < 3 || config.trajectories == 0 {
        return Err(Error::InvalidConfig(
            "gradcheck needs max_len >= 1, max_options >= 3 and at least one trajectory".into(),
        ));
    }
    let rows = (0..config.instances)
        .into_par_iter()
        .map(|i| instance(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport { config: *config, rows })
}

fn instance(config: &GradcheckConfig, index: usize) -> Result<GradcheckRow> {
    let mut rng = rng_for(config.seed, &["gradcheck", &index.to_string()]);
    let n_states = rng.random_range(3..=6);
    let mdp = build_chain(n_states, rng.random())?;
    let n_learned = rng.random_range(1..=config.max_options - 2);
    let (options, policy) = random_option_model(n_states, 2, n_learned, config.hidden, 0.7, &mut rng)?;
    let table = OptionTable::from_options(&options);
    let pi = PolicyTable::from_policy(&policy);
    let data: Vec<Demonstration> = (0..config.trajectories)
        .map(|_| {
            let len = rng.random_range(1..=config.max_len);
            Demonstration {
                trajectory: sample_trajectory(&pi, &table, &mdp, len, &mut rng),
                start_prob: 1.0,
            }
        })
        .collect();
    let recursion = if index.is_multiple_of(2) { PosteriorRecursion::Filtered } else { PosteriorRecursion::AsPrinted };
    let objective = ObjectiveConfig {
        lambda1: rng.random_range(0.1..1.0),
        lambda2: rng.random_range(1.0..100.0),
        recursion,
        include_env_factor: true,
        rescale: index % 4 >= 2,
    };
    let p = TransitionModel::exact(&mdp);
    let report = j_hat(&policy, &options, &data, &p, &objective)?;

    let reference = |block| central_differences_extended(&policy, &options, &data, &p, &objective, block, config.epsilon);
    let policy_error = max_relative_error(&report.policy_grad, &reference(ParamBlock::Policy)?);
    let mut option_error: f64 = 0.0;
    for k in 0..options.n_learned() {
        option_error = option_error.max(max_relative_error(&report.option_grads[k], &reference(ParamBlock::Option(k))?));
    }

    let eval = |pol: &_, opts: &_| j_hat(pol, opts, &data, &p, &objective).map_or(f64::NAN, |r| r.j_hat);
    let mut plain_f64_error = finite_diff_check(
        |v| {
            let mut pol = policy.clone();
            pol.params.values.copy_from_slice(v);
            eval(&pol, &options)
        },
        &policy.params.values,
        &report.policy_grad,
        config.epsilon,
    );
    for k in 0..options.n_learned() {
        let err = finite_diff_check(
            |v| {
                let mut opts = options.clone();
                opts.learned_mut()[k].params.values.copy_from_slice(v);
                eval(&policy, &opts)
            },
            &options.learned()[k].params.values,
            &report.option_grads[k],
            config.epsilon,
        );
        plain_f64_error = plain_f64_error.max(err);
    }
    Ok(GradcheckRow {
        instance: index,
        n_states,
        n_options: options.len(),
        lengths: data.iter().map(|d| d.trajectory.len()).collect(),
        recursion,
        rescale: objective.rescale,
        policy_error,
        option_error,
        plain_f64_error,
    })
}
