//! Double-double arithmetic: an unevaluated sum `hi + lo` with `|lo| <=
//! ulp(hi) / 2`, giving about 106 bits of significand. Used to evaluate
//! reference losses whose finite differences would otherwise drown in the
//! rounding of a single `f64`.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleF64 {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleF64 = DoubleF64 {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleF64 {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_sign_positive_nonzero(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::new(p, e + self.lo * b)
    }

    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// `exp(x) - 1`, accurate to a few units of 1e-32 relative.
    pub fn exp_m1(self) -> Self {
        if self.hi.abs() < 0.5 * std::f64::consts::LN_2 {
            return expm1_reduced(self);
        }
        self.exp() - Self::ONE
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY, 0.0);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self - LN2.mul_f64(k);
        (expm1_reduced(r) + Self::ONE).ldexp(k as i32)
    }

    /// Natural log by one Newton step on `exp`, which doubles the precision
    /// of the `f64` starting point.
    pub fn ln(self) -> Self {
        let y = Self::new(self.hi.ln(), 0.0);
        y + self * (-y).exp() - Self::ONE
    }

    pub fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Self::new(self.hi.signum(), 0.0);
        }
        let t = (self + self).exp_m1();
        t / (t + Self::new(2.0, 0.0))
    }
}

/// `exp(r) - 1` for `|r| <= ln 2 / 2`: Taylor series on `r / 2^10`, then
/// `10` doublings through `e(2s) - 1 = (e(s) - 1)(e(s) + 1)`.
fn expm1_reduced(r: DoubleF64) -> DoubleF64 {
    const SQUARINGS: i32 = 10;
    let s = r.ldexp(-SQUARINGS);
    let mut term = s;
    let mut sum = s;
    for n in 2..=14 {
        term = term * s / DoubleF64::new(n as f64, 0.0);
        sum = sum + term;
        if term.hi.abs() < 1e-36 * sum.hi.abs().max(1e-300) {
            break;
        }
    }
    for _ in 0..SQUARINGS {
        sum = sum * (sum + DoubleF64::new(2.0, 0.0));
    }
    sum
}

impl From<f64> for DoubleF64 {
    fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }
}

impl Add for DoubleF64 {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::new(s, e + f)
    }
}

impl Neg for DoubleF64 {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleF64 {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + -b
    }
}

impl Mul for DoubleF64 {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        Self::new(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleF64 {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Self::new(q1, q2) + Self::from(q3)
    }
}

impl PartialOrd for DoubleF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

/// `bias + sum a_i b_i` with every product and partial sum carried exactly
/// to double-double precision.
pub fn dot_dd(bias: DoubleF64, a: &[DoubleF64], b: &[f64]) -> DoubleF64 {
    a.iter().zip(b).fold(bias, |acc, (x, &w)| acc + x.mul_f64(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(v: f64) -> DoubleF64 {
        DoubleF64::from(v)
    }

    fn rel(a: DoubleF64, b: DoubleF64) -> f64 {
        ((a - b).to_f64() / b.to_f64()).abs()
    }

    #[test]
    fn arithmetic_keeps_the_low_word() {
        let x = dd(1.0) + dd(1e-20);
        assert_eq!(x.hi, 1.0);
        assert_eq!(x.lo, 1e-20);
        assert_eq!((x - dd(1.0)).to_f64(), 1e-20);
        let third = dd(1.0) / dd(3.0);
        assert!(rel(third * dd(3.0), dd(1.0)) < 1e-31);
    }

    #[test]
    fn exp_and_ln_agree_to_double_double_precision() {
        for i in 0..400 {
            let x = dd(i as f64 * 0.05 - 10.0) + dd(1e-19 * i as f64);
            let back = x.exp().ln();
            assert!((back - x).to_f64().abs() < 1e-29, "x = {x:?}");
            let y = dd(0.3);
            assert!(rel((x + y).exp(), x.exp() * y.exp()) < 1e-30);
        }
        assert!(rel(dd(1.0).exp(), DoubleF64::new(std::f64::consts::E, 1.445_646_891_729_250_2e-16)) < 1e-31);
    }

    #[test]
    fn small_arguments() {
        let tiny = dd(1e-12);
        // expm1(x) = x + x^2 / 2 + ...
        let expect = tiny + tiny * tiny / dd(2.0) + tiny * tiny * tiny / dd(6.0);
        assert!(rel(tiny.exp_m1(), expect) < 1e-30);
        let small = dd(1e-9);
        assert!(rel(small.tanh(), small - small * small * small / dd(3.0)) < 1e-30);
        assert_eq!(dd(50.0).tanh().to_f64(), 1.0);
    }

    #[test]
    fn matches_f64_functions() {
        for &v in &[-3.7, -0.2, 0.0, 0.4, 2.5, 30.0] {
            assert!((dd(v).exp().to_f64() - v.exp()).abs() <= 1e-15 * v.exp());
            assert!((dd(v).tanh().to_f64() - v.tanh()).abs() <= 1e-15);
        }
        assert!((dd(7.5).ln().to_f64() - 7.5f64.ln()).abs() < 1e-15);
    }
}
