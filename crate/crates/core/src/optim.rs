//! Gradient ascent with Adam moments, and a central-difference gradient check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }
}

/// One ascent step `params += lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// A gradient with a non-finite entry is rejected before anything is mutated.
pub fn apply_gradients(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            found: grads.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step);
    let c2 = 1.0 - beta2.powi(state.step);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        if g == 0.0 && *m == 0.0 {
            continue;
        }
        *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

/// Largest per-coordinate relative error between `analytic` and central
/// differences of `f` at `params`:
/// `|a - n| / max(1e-8, |a| + |n|)`. Non-finite evaluations give infinity.
pub fn finite_diff_check<F: Fn(&[f64]) -> f64>(f: F, params: &[f64], analytic: &[f64], epsilon: f64) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = f(&x);
        x[i] = orig - epsilon;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst_error(worst, analytic[i], numeric);
    }
    worst
}

/// `|a - n| / max(1e-8, |a| + |n|)`, the per-coordinate gradient-check error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Largest [`relative_error`] over paired gradients; NaN counts as infinite.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic.iter().zip(numeric).fold(0.0, |w, (&a, &n)| worst_error(w, a, n))
}

fn worst_error(worst: f64, a: f64, n: f64) -> f64 {
    let err = relative_error(a, n);
    // a NaN comparison would otherwise be swallowed by `max`
    if err.is_nan() { f64::INFINITY } else { worst.max(err) }
}
