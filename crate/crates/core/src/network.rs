//! Small feedforward networks with tanh trunks and linear heads, stored as a
//! flat parameter vector with hand-written backpropagation.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 32;

/// Layer sizes: `input -> hidden[0] -> hidden[1] -> ... -> each head`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<usize>,
}

impl Architecture {
    /// Two hidden tanh layers of width `hidden`.
    pub fn two_layer(input: usize, hidden: usize, heads: Vec<usize>) -> Self {
        Self {
            input,
            hidden: vec![hidden, hidden],
            heads,
        }
    }

    fn trunk_out(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input)
    }

    /// Named parameter slices, in storage order.
    pub fn layout(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut take = |name: String, len: usize| {
            out.push((name, offset..offset + len));
            offset += len;
        };
        let mut fan_in = self.input;
        for (i, &h) in self.hidden.iter().enumerate() {
            take(format!("hidden{i}.weight"), h * fan_in);
            take(format!("hidden{i}.bias"), h);
            fan_in = h;
        }
        for (i, &k) in self.heads.iter().enumerate() {
            take(format!("head{i}.weight"), k * fan_in);
            take(format!("head{i}.bias"), k);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layout().last().map_or(0, |(_, r)| r.end)
    }
}

/// Flat, finite parameter vector tied to an [`Architecture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffParams {
    pub architecture: Architecture,
    pub values: Vec<f64>,
}

/// Weight initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Gaussian hidden weights, zero biases, zero heads: uniform softmax and
    /// sigmoid outputs of 0.5 at every input.
    ZeroHeads { hidden_std: f64 },
    /// Every weight and bias Gaussian with the given standard deviation.
    Gaussian { std: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::ZeroHeads { hidden_std: 0.1 }
    }
}

impl DiffParams {
    pub fn zeros(architecture: Architecture) -> Self {
        let n = architecture.n_params();
        Self {
            architecture,
            values: vec![0.0; n],
        }
    }

    pub fn init<R: Rng + ?Sized>(architecture: Architecture, init: Init, rng: &mut R) -> Self {
        let mut params = Self::zeros(architecture);
        let layout = params.architecture.layout();
        for (name, range) in layout {
            let std = match init {
                Init::ZeroHeads { hidden_std } if name.starts_with("hidden") && name.ends_with("weight") => hidden_std,
                Init::ZeroHeads { .. } => 0.0,
                Init::Gaussian { std } => std,
            };
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("finite positive std");
                for v in &mut params.values[range] {
                    *v = normal.sample(rng);
                }
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.architecture
            .layout()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| &self.values[r])
    }

    /// Checks length against the architecture and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let expected = self.architecture.n_params();
        if self.values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.values.len(),
            });
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("parameter {index} is not finite")));
        }
        Ok(())
    }

    /// Forward pass, keeping hidden activations for [`DiffParams::backward`].
    pub fn forward(&self, input: &[f64]) -> Activations {
        let arch = &self.architecture;
        debug_assert_eq!(input.len(), arch.input);
        let mut offset = 0;
        let mut hidden = Vec::with_capacity(arch.hidden.len());
        let mut x: &[f64] = input;
        for &h in &arch.hidden {
            let w = &self.values[offset..offset + h * x.len()];
            let b = &self.values[offset + h * x.len()..offset + h * x.len() + h];
            offset += h * x.len() + h;
            let out: Vec<f64> = affine(w, b, x).into_iter().map(f64::tanh).collect();
            hidden.push(out);
            x = hidden.last().expect("just pushed");
        }
        let mut heads = Vec::with_capacity(arch.heads.len());
        for &k in &arch.heads {
            let w = &self.values[offset..offset + k * x.len()];
            let b = &self.values[offset + k * x.len()..offset + k * x.len() + k];
            offset += k * x.len() + k;
            heads.push(affine(w, b, x));
        }
        Activations { hidden, heads }
    }

    /// Accumulates into `grad` the gradient of a scalar whose derivatives with
    /// respect to the head outputs are `d_heads`.
    pub fn backward(&self, input: &[f64], acts: &Activations, d_heads: &[Vec<f64>], grad: &mut [f64]) {
        let arch = &self.architecture;
        debug_assert_eq!(grad.len(), self.values.len());
        let layout = arch.layout();
        let n_hidden = arch.hidden.len();
        let trunk_out = arch.trunk_out();
        let trunk_act: &[f64] = acts.hidden.last().map_or(input, |v| v.as_slice());

        // heads
        let mut d_trunk = vec![0.0; trunk_out];
        for (i, d_out) in d_heads.iter().enumerate() {
            let w_range = layout[2 * n_hidden + 2 * i].1.clone();
            let b_range = layout[2 * n_hidden + 2 * i + 1].1.clone();
            let w = &self.values[w_range.clone()];
            for (k, &d) in d_out.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[b_range.start + k] += d;
                let row = w_range.start + k * trunk_out;
                for j in 0..trunk_out {
                    grad[row + j] += d * trunk_act[j];
                    d_trunk[j] += d * w[k * trunk_out + j];
                }
            }
        }

        // trunk, last layer first
        let mut delta = d_trunk;
        for l in (0..n_hidden).rev() {
            let out = &acts.hidden[l];
            let x: &[f64] = if l == 0 { input } else { &acts.hidden[l - 1] };
            for (d, &o) in delta.iter_mut().zip(out) {
                *d *= 1.0 - o * o;
            }
            let w_range = layout[2 * l].1.clone();
            let b_range = layout[2 * l + 1].1.clone();
            let fan_in = x.len();
            let mut d_x = if l > 0 { vec![0.0; fan_in] } else { Vec::new() };
            for (k, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[b_range.start + k] += d;
                let row = w_range.start + k * fan_in;
                for (j, &xj) in x.iter().enumerate() {
                    if xj != 0.0 {
                        grad[row + j] += d * xj;
                    }
                    if l > 0 {
                        d_x[j] += d * self.values[row + j];
                    }
                }
            }
            delta = d_x;
        }
    }
}

/// Head outputs for parameters of any [`Real`] type, with the same layer
/// arithmetic as [`DiffParams::forward`]. `values` follows `arch`'s layout.
pub fn forward_heads<R: Real>(arch: &Architecture, values: &[R], input: &[f64]) -> Vec<Vec<R>> {
    debug_assert_eq!(values.len(), arch.n_params());
    debug_assert_eq!(input.len(), arch.input);
    // `None` stands for the raw (f64) input layer
    let mut x: Option<Vec<R>> = None;
    let mut fan_in = arch.input;
    let mut offset = 0;
    let layer = |w: &[R], b: &[R], x: &Option<Vec<R>>, fan_in: usize| -> Vec<R> {
        let mut out = b.to_vec();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w[k * fan_in..(k + 1) * fan_in];
            match x {
                None => {
                    for (j, &xj) in input.iter().enumerate() {
                        if xj != 0.0 {
                            *o = *o + row[j] * xj;
                        }
                    }
                }
                Some(x) => {
                    for (&wj, &xj) in row.iter().zip(x) {
                        *o = *o + wj * xj;
                    }
                }
            }
        }
        out
    };
    for &h in &arch.hidden {
        let w = &values[offset..offset + h * fan_in];
        let b = &values[offset + h * fan_in..offset + h * fan_in + h];
        offset += h * fan_in + h;
        x = Some(layer(w, b, &x, fan_in).into_iter().map(Real::tanh).collect());
        fan_in = h;
    }
    arch.heads
        .iter()
        .map(|&k| {
            let w = &values[offset..offset + k * fan_in];
            let b = &values[offset + k * fan_in..offset + k * fan_in + k];
            offset += k * fan_in + k;
            layer(w, b, &x, fan_in)
        })
        .collect()
}

/// `w x + b` with `w` stored row-major; zero inputs are skipped, which makes
/// one-hot inputs cheap.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut out = b.to_vec();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o += w[k * n_in + j] * xj;
        }
    }
    out
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub hidden: Vec<Vec<f64>>,
    pub heads: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::optim::finite_diff_check;

    fn weighted_heads(params: &DiffParams, input: &[f64], weights: &[Vec<f64>]) -> f64 {
        let acts = params.forward(input);
        acts.heads
            .iter()
            .zip(weights)
            .map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    #[test]
    fn layout_covers_every_parameter() {
        let arch = Architecture::two_layer(5, 3, vec![4, 1]);
        let layout = arch.layout();
        assert_eq!(layout.len(), 8);
        assert_eq!(arch.n_params(), 3 * 5 + 3 + 3 * 3 + 3 + 4 * 3 + 4 + 3 + 1);
        for w in layout.windows(2) {
            assert_eq!(w[0].1.end, w[1].1.start);
        }
    }

    #[test]
    fn zero_heads_give_zero_outputs() {
        let arch = Architecture::two_layer(4, 8, vec![3, 1]);
        let params = DiffParams::init(arch, Init::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let acts = params.forward(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(acts.heads, vec![vec![0.0; 3], vec![0.0]]);
        assert!(params.slice("hidden0.weight").unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn generic_forward_reproduces_f64_forward() {
        let arch = Architecture::two_layer(5, 4, vec![3, 1]);
        let params = DiffParams::init(arch.clone(), Init::Gaussian { std: 0.9 }, &mut ChaCha8Rng::seed_from_u64(2));
        for s in 0..5 {
            let mut input = vec![0.0; 5];
            input[s] = 1.0;
            assert_eq!(forward_heads(&arch, &params.values, &input), params.forward(&input).heads);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = Architecture::two_layer(6, 5, vec![3, 1]);
        let params = DiffParams::init(arch, Init::Gaussian { std: 0.7 }, &mut rng);
        let weights = vec![vec![0.3, -1.2, 0.8], vec![2.0]];
        for input in [vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], vec![0.2, -0.5, 1.0, 0.0, 0.3, 0.9]] {
            let acts = params.forward(&input);
            let mut grad = vec![0.0; params.len()];
            params.backward(&input, &acts, &weights, &mut grad);
            let f = |v: &[f64]| {
                let p = DiffParams {
                    architecture: params.architecture.clone(),
                    values: v.to_vec(),
                };
                weighted_heads(&p, &input, &weights)
            };
            let err = finite_diff_check(f, &params.values, &grad, 1e-5);
            assert!(err < 1e-7, "relative error {err}");
        }
    }

    #[test]
    fn validate_catches_bad_vectors() {
        let arch = Architecture::two_layer(2, 2, vec![1]);
        let mut p = DiffParams::zeros(arch);
        p.validate().unwrap();
        p.values[0] = f64::NAN;
        assert!(p.validate().is_err());
        p.values.pop();
        assert!(matches!(p.validate(), Err(Error::DimensionMismatch { .. })));
    }
}
