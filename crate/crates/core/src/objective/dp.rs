//! Forward (option posterior) and backward (trajectory likelihood) dynamic
//! programs over `(step, option)` tables.
//!
//! Both are generic over [`Real`] so the same code runs on plain floats and on
//! a differentiation tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sum, Real};
use crate::error::{Error, Result};

/// Per-step option quantities along one trajectory of length `T`.
#[derive(Debug, Clone)]
pub struct StepInputs<R> {
    /// `mu_o(s_t, a_t)` for `t < T`.
    pub mu_taken: Vec<Vec<R>>,
    /// `beta_o(s_t)` for `t <= T`.
    pub beta: Vec<Vec<R>>,
    /// `pi(s_t, o)` for `t < T`.
    pub pi: Vec<Vec<R>>,
}

impl<R> StepInputs<R> {
    pub fn len(&self) -> usize {
        self.mu_taken.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_taken.is_empty()
    }

    pub fn n_options(&self) -> usize {
        self.pi.first().map_or(0, Vec::len)
    }
}

/// How the option posterior `Pr(O_t = o | H_t)` is propagated between steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorRecursion {
    /// Bayesian filtering: with `r(o) = alpha_{t-1}(o) / sum alpha_{t-1}` and
    /// `p_t = sum_o beta_o(s_t) r(o)`,
    /// `q_t(o) = pi(s_t, o) p_t + r(o) (1 - beta_o(s_t))`.
    #[default]
    Filtered,
    /// `q_t(o) = pi(s_t, o) beta_o(s_t) + P(s_{t-1}, a_{t-1}, s_t) alpha_{t-1}(o) (1 - beta_o(s_{t-1}))`,
    /// an unnormalised variant kept for comparison experiments. It disagrees
    /// with Monte Carlo estimates of the prefix-conditioned termination rate.
    AsPrinted,
}

/// Forward table: `alpha[t][o] = mu_o(s_t, a_t) q_t(o)` for `t < T`, and the
/// per-step termination expectations `terminations[t - 1] = Pr(T_t = 1 | H_t)`.
#[derive(Debug, Clone)]
pub struct AlphaTable<R> {
    pub alpha: Vec<Vec<R>>,
    pub terminations: Vec<R>,
}

/// `sum_o beta_o(s_t) alpha_{t-1}(o) / sum_o' alpha_{t-1}(o')`, or `None` when
/// the normaliser is zero.
pub fn termination_from_alpha<R: Real>(alpha: &[R], beta: &[R]) -> Option<R> {
    let z = sum(alpha.iter().copied())?;
    if !(z.value() > 0.0) {
        return None;
    }
    sum(alpha.iter().zip(beta).map(|(&a, &b)| b * a)).map(|num| num / z)
}

/// Expected number of option terminations along the trajectory.
///
/// `transition_probs[t] = P(s_t, a_t, s_{t+1})` is only read by
/// [`PosteriorRecursion::AsPrinted`].
pub fn forward_terminations<R: Real>(
    inputs: &StepInputs<R>,
    transition_probs: &[f64],
    recursion: PosteriorRecursion,
) -> Result<(R, AlphaTable<R>)> {
    let horizon = inputs.len();
    if horizon == 0 {
        return Err(Error::InvalidTrajectory("empty trajectory".into()));
    }
    let mut q: Vec<R> = inputs.pi[0].clone();
    let mut alpha_rows = Vec::with_capacity(horizon);
    let mut terminations = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let alpha: Vec<R> = inputs.mu_taken[t - 1].iter().zip(&q).map(|(&m, &p)| m * p).collect();
        let z = sum(alpha.iter().copied()).expect("at least one option");
        if !(z.value() > 0.0) {
            return Err(Error::DegenerateSupport { step: t });
        }
        let beta_t = &inputs.beta[t];
        let p_t = sum(alpha.iter().zip(beta_t).map(|(&a, &b)| b * a)).expect("at least one option") / z;
        if t < horizon {
            q = match recursion {
                PosteriorRecursion::Filtered => alpha
                    .iter()
                    .zip(beta_t)
                    .zip(&inputs.pi[t])
                    .map(|((&a, &b), &pi)| pi * p_t + (a / z) * b.rsub(1.0))
                    .collect(),
                PosteriorRecursion::AsPrinted => {
                    let trans = transition_probs[t - 1];
                    alpha
                        .iter()
                        .zip(beta_t)
                        .zip(&inputs.beta[t - 1])
                        .zip(&inputs.pi[t])
                        .map(|(((&a, &b), &b_prev), &pi)| pi * b + a * trans * b_prev.rsub(1.0))
                        .collect()
                }
            };
        }
        alpha_rows.push(alpha);
        terminations.push(p_t);
    }
    let total = sum(terminations.iter().copied()).expect("non-empty");
    Ok((
        total,
        AlphaTable {
            alpha: alpha_rows,
            terminations,
        },
    ))
}

/// Backward table of `f(h, o, i)` for `i = 1..=T` (row `i - 1`), with the
/// shared inner sums `sum_o' pi(s_i, o') mu_o'(s_i, a_i) f(h, o', i + 1)` and
/// the power-of-two exponent by which each row was divided.
#[derive(Debug, Clone)]
pub struct BackwardTable<R> {
    pub f: Vec<Vec<R>>,
    pub inner: Vec<Option<R>>,
    pub scale_exponent: Vec<i32>,
}

/// Option-dependent part of the trajectory likelihood,
/// `sum_o pi(s_0, o) mu_o(s_0, a_0) f(h, o, 1)`, as `bracket * 2^exponent`.
///
/// `f(h, o, T) = 1` and for `1 <= i < T`
/// `f(h, o, i) = beta_o(s_i) sum_o' pi(s_i, o') mu_o'(s_i, a_i) f(h, o', i + 1)
///             + (1 - beta_o(s_i)) mu_o(s_i, a_i) f(h, o, i + 1)`.
///
/// With `rescale`, every row is divided by a power of two close to its
/// maximum. The divisor is piecewise constant in the inputs, so gradients
/// through the rescaled table stay exact.
pub fn backward_likelihood<R: Real>(inputs: &StepInputs<R>, rescale: bool) -> Result<(R, i32, BackwardTable<R>)> {
    let horizon = inputs.len();
    if horizon == 0 {
        return Err(Error::InvalidTrajectory("empty trajectory".into()));
    }
    let n = inputs.n_options();
    let one = inputs.pi[0][0].constant(1.0);
    let mut rows: Vec<Vec<R>> = vec![Vec::new(); horizon];
    let mut inner: Vec<Option<R>> = vec![None; horizon];
    let mut exponents = vec![0i32; horizon];
    rows[horizon - 1] = vec![one; n];
    let mut total_exp = 0i32;
    for i in (1..horizon).rev() {
        let next = &rows[i];
        let shared = sum(
            inputs.pi[i]
                .iter()
                .zip(&inputs.mu_taken[i])
                .zip(next)
                .map(|((&p, &m), &f)| p * m * f),
        )
        .expect("at least one option");
        let mut row: Vec<R> = inputs.beta[i]
            .iter()
            .zip(&inputs.mu_taken[i])
            .zip(next)
            .map(|((&b, &m), &f)| b * shared + b.rsub(1.0) * m * f)
            .collect();
        if rescale {
            let max = row.iter().map(Real::value).fold(0.0, f64::max);
            if max > 0.0 && max.is_finite() {
                let e = max.log2().floor() as i32;
                if e != 0 {
                    let factor = 2f64.powi(-e);
                    row = row.into_iter().map(|v| v * factor).collect();
                    exponents[i - 1] = e;
                    total_exp += e;
                }
            }
        }
        inner[i] = Some(shared);
        rows[i - 1] = row;
    }
    let bracket = sum(
        inputs.pi[0]
            .iter()
            .zip(&inputs.mu_taken[0])
            .zip(&rows[0])
            .map(|((&p, &m), &f)| p * m * f),
    )
    .expect("at least one option");
    inner[0] = Some(bracket);
    Ok((
        bracket,
        total_exp,
        BackwardTable {
            f: rows,
            inner,
            scale_exponent: exponents,
        },
    ))
}

/// `(2 / (m (m - 1))) sum_{o != o'} sum_t KL(mu_o(s_t) || mu_o'(s_t))` over
/// ordered pairs of learned options; `mu[t][k]` is option `k`'s action
/// distribution at `s_t`. `None` when fewer than two options are given.
pub fn pairwise_kl<R: Real>(mu: &[Vec<Vec<R>>], floor: f64) -> Option<R> {
    let m = mu.first().map_or(0, Vec::len);
    if m < 2 {
        return None;
    }
    let mut terms = Vec::new();
    for row in mu {
        for (i, p) in row.iter().enumerate() {
            for (j, q) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                for (&pa, &qa) in p.iter().zip(q) {
                    if pa.value() <= 0.0 {
                        continue;
                    }
                    let log_q = if qa.value() < floor { qa.constant(floor.ln()) } else { qa.ln() };
                    terms.push(pa * (pa.ln() - log_q));
                }
            }
        }
    }
    let scale = 2.0 / (m * (m - 1)) as f64;
    let zero = mu[0][0][0].constant(0.0);
    Some(sum(terms).unwrap_or(zero) * scale)
}
