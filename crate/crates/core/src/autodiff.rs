//! Tape-based reverse-mode differentiation over scalars.
//!
//! Every operation appends a node holding the indices of its (at most two)
//! inputs and the local partial derivatives with respect to them. A single
//! reverse sweep over the tape then accumulates adjoints.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    deps: [usize; 2],
    partials: [f64; 2],
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [0, 0], [0.0, 0.0])
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: f64, deps: [usize; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node { deps, partials });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Numerically stable softmax of `logits`.
    pub fn softmax<'t>(&'t self, logits: &[Var<'t>]) -> Vec<Var<'t>> {
        let shift = logits.iter().map(|v| v.value).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<Var<'t>> = logits.iter().map(|&l| (l - shift).exp()).collect();
        let total = sum(exps.iter().copied()).expect("softmax of an empty slice");
        exps.into_iter().map(|e| e / total).collect()
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, #{})", self.value, self.index)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn unary(self, value: f64, partial: f64) -> Self {
        self.tape.push(value, [self.index, 0], [partial, 0.0])
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing variables from two tapes");
        self.tape.push(value, [self.index, other.index], [da, db])
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.unary(s, s * (1.0 - s))
    }

    /// Constant on the same tape.
    pub fn constant(self, value: f64) -> Self {
        self.tape.var(value)
    }

    /// Adjoints of every tape node with respect to this output.
    pub fn gradient(&self) -> Gradient {
        let nodes = self.tape.nodes.borrow();
        let mut adjoints = vec![0.0; nodes.len()];
        adjoints[self.index] = 1.0;
        for i in (0..=self.index).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                if node.partials[k] != 0.0 {
                    adjoints[node.deps[k]] += adj * node.partials[k];
                }
            }
        }
        Gradient { adjoints }
    }
}

/// Result of a reverse sweep.
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        self.adjoints[v.index]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum of a non-empty iterator; `None` when empty.
pub fn sum<R: Real>(items: impl IntoIterator<Item = R>) -> Option<R> {
    items.into_iter().reduce(|a, b| a + b)
}

/// `1 / (1 + exp(-x))` for any [`Real`].
pub fn sigmoid_real<R: Real>(x: R) -> R {
    let one = x.constant(1.0);
    if x.value() >= 0.0 {
        one / ((x * -1.0).exp() + 1.0)
    } else {
        let e = x.exp();
        e / (e + 1.0)
    }
}

/// Softmax for any [`Real`], shifted by the largest logit.
pub fn softmax_real<R: Real>(logits: &[R]) -> Vec<R> {
    let shift = logits.iter().map(Real::value).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<R> = logits.iter().map(|&l| (l + -shift).exp()).collect();
    let total = sum(exps.iter().copied()).expect("softmax of an empty slice");
    exps.into_iter().map(|e| e / total).collect()
}

/// Arithmetic shared by plain `f64` evaluation and taped evaluation, so the
/// same dynamic program serves both.
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Mul<f64, Output = Self> + Add<f64, Output = Self>
{
    fn value(&self) -> f64;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    /// A constant living wherever `self` lives.
    fn constant(self, c: f64) -> Self;
    /// `c - self`
    fn rsub(self, c: f64) -> Self;
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn constant(self, c: f64) -> Self {
        c
    }
    fn rsub(self, c: f64) -> Self {
        c - self
    }
}

impl Real for Var<'_> {
    fn value(&self) -> f64 {
        self.value
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn constant(self, c: f64) -> Self {
        Var::constant(self, c)
    }
    fn rsub(self, c: f64) -> Self {
        self.unary(c - self.value, -1.0)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::finite_diff_check;

    /// Evaluates `f` on the tape and returns (value, gradient).
    fn taped(x: &[f64], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = x.iter().map(|&v| tape.var(v)).collect();
        let out = f(&tape, &vars);
        let grad = out.gradient();
        (out.value(), vars.iter().map(|v| grad.wrt(v)).collect())
    }

    #[test]
    fn product_rule() {
        let (v, g) = taped(&[3.0, 4.0], |_, x| x[0] * x[1] + x[0]);
        assert_eq!(v, 15.0);
        assert_eq!(g, vec![5.0, 3.0]);
    }

    #[test]
    fn reused_variable_accumulates() {
        let (_, g) = taped(&[2.0], |_, x| x[0] * x[0] * x[0]);
        assert_eq!(g, vec![12.0]);
    }

    type TapedFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;

    #[test]
    fn elementary_functions_match_finite_differences() {
        let cases: Vec<(&str, TapedFn)> = vec![
            ("exp", Box::new(|_, x| x[0].exp() * x[1])),
            ("ln", Box::new(|_, x| (x[0] * x[0] + x[1]).ln())),
            ("tanh", Box::new(|_, x| (x[0] - x[1]).tanh())),
            ("sigmoid", Box::new(|_, x| (x[0] * 2.0 + x[1]).sigmoid())),
            ("div", Box::new(|_, x| x[0] / (x[1] + 3.0))),
            ("rsub", Box::new(|_, x| Real::rsub(x[0], 1.0) * x[1])),
            ("neg", Box::new(|_, x| -(x[0] * x[1]))),
            ("softmax", Box::new(|t, x| {
                let p = t.softmax(x);
                p[0] * 0.3 + p[1].ln()
            })),
        ];
        let x = [0.37, 1.21];
        for (name, f) in cases {
            let (_, analytic) = taped(&x, &f);
            let numeric_f = |p: &[f64]| taped(p, &f).0;
            let err = finite_diff_check(numeric_f, &x, &analytic, 1e-5);
            assert!(err < 1e-8, "{name}: relative error {err}");
        }
    }

    #[test]
    fn softmax_cross_entropy_matches_closed_form() {
        // d/dz [-ln softmax(z)_k] = softmax(z) - e_k
        let z = [0.5, -1.0, 2.0];
        let (_, g) = taped(&z, |t, x| -t.softmax(x)[1].ln());
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let total: f64 = e.iter().sum();
        for (i, gi) in g.iter().enumerate() {
            let expected = e[i] / total - if i == 1 { 1.0 } else { 0.0 };
            assert!((gi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
