//! Double-double arithmetic (about 32 significant digits), used to evaluate
//! the objective precisely enough that finite differences of it are limited
//! by truncation rather than by rounding.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::autodiff::Real;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN_2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `1 / n!` for `n = 0..16`.
fn inverse_factorials() -> &'static [DoubleDouble; 16] {
    static TABLE: OnceLock<[DoubleDouble; 16]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [DoubleDouble::ONE; 16];
        for n in 1..16 {
            table[n] = table[n - 1] / DoubleDouble::new(n as f64);
        }
        table
    })
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn from_parts(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    /// Nearest `f64`.
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn square(self) -> Self {
        self * self
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        // x = k ln2 + r, |r| <= ln2 / 2; exp(r) = (exp(r / 2^5))^(2^5)
        const HALVINGS: i32 = 5;
        let k = (self.hi / LN_2.hi).round();
        let r = (self - LN_2 * k).scale_pow2(-HALVINGS);
        // |r| < 0.011, so 14 Taylor terms reach full precision
        let mut power = r;
        let mut sum = Self::ONE + r;
        for inv in &inverse_factorials()[2..] {
            power = power * r;
            let term = power * *inv;
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..HALVINGS {
            sum = sum.square();
        }
        // split the power of two so neither factor overflows
        let k = k as i32;
        let half = k / 2;
        sum.scale_pow2(half).scale_pow2(k - half)
    }

    pub fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        // one Newton step on exp(y) = x doubles the f64 starting precision
        let y = Self::new(self.hi.ln());
        y + self * (-y).exp() - 1.0
    }

    pub fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Self::new(self.hi.signum());
        }
        let e = (self * 2.0).exp();
        (e - 1.0) / (e + 1.0)
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self::new(x)
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi, self.lo)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::from_parts(s, e + f)
    }
}

impl Add<f64> for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        let (s, e) = two_sum(self.hi, rhs);
        Self::from_parts(s, e + self.lo)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Sub<f64> for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self + (-rhs)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (p, e) = two_prod(self.hi, rhs.hi);
        Self::from_parts(p, e + (self.hi * rhs.lo + self.lo * rhs.hi))
    }
}

impl Mul<f64> for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        let (p, e) = two_prod(self.hi, rhs);
        Self::from_parts(p, e + self.lo * rhs)
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * q1;
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * q2;
        let q3 = r.hi / rhs.hi;
        Self::from_parts(q1, q2) + q3
    }
}

impl Div<f64> for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self / Self::new(rhs)
    }
}

impl Real for DoubleDouble {
    fn value(&self) -> f64 {
        self.to_f64()
    }
    fn ln(self) -> Self {
        DoubleDouble::ln(self)
    }
    fn exp(self) -> Self {
        DoubleDouble::exp(self)
    }
    fn tanh(self) -> Self {
        DoubleDouble::tanh(self)
    }
    fn constant(self, c: f64) -> Self {
        Self::new(c)
    }
    fn rsub(self, c: f64) -> Self {
        Self::new(c) - self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type DD = DoubleDouble;

    fn close(a: DD, b: DD, tol: f64) -> bool {
        (a - b).to_f64().abs() <= tol * b.to_f64().abs().max(1.0)
    }

    #[test]
    fn arithmetic_keeps_extra_digits() {
        let third = DD::ONE / DD::new(3.0);
        assert!(((third * 3.0) - 1.0).to_f64().abs() < 1e-31);
        // 1 + 1e-20 survives, unlike in f64
        let x = DD::ONE + 1e-20;
        assert_eq!((x - 1.0).to_f64(), 1e-20);
        let sq = DD::new(1.0 + 2f64.powi(-40)).square();
        assert_eq!(sq.lo(), 2f64.powi(-80));
    }

    #[test]
    fn exp_and_ln_are_inverse_and_match_f64() {
        for x in [-30.0, -2.5, -1e-3, 0.0, 1e-9, 0.7, 3.0, 50.0] {
            let d = DD::new(x);
            let e = d.exp();
            assert!((e.to_f64() - x.exp()).abs() <= 4.0 * f64::EPSILON * x.exp(), "exp({x})");
            assert!(close(e.ln(), d, 1e-28), "ln(exp({x})) off by {:e}", (e.ln() - d).to_f64());
        }
        assert!(close(DD::new(2.0).ln(), LN_2, 1e-29));
        assert!(close(LN_2.exp(), DD::new(2.0), 1e-29));
        assert!(close(DD::ONE.exp().ln(), DD::ONE, 1e-29));
    }

    #[test]
    fn tanh_matches_definition_and_f64() {
        for x in [-45.0, -3.0, -0.2, 1e-6, 0.5, 2.0, 45.0] {
            let t = DD::new(x).tanh();
            assert!((t.to_f64() - x.tanh()).abs() <= 4.0 * f64::EPSILON, "tanh({x})");
        }
        // tanh(ln 2) = 3/5
        assert!(close(LN_2.tanh(), DD::new(3.0) / DD::new(5.0), 1e-29));
    }
}
