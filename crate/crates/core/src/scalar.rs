//! Coefficient fields for jet arithmetic.
//!
//! Two fields are provided: `f64` (the default working precision) and
//! [`Exact`], an arbitrary-precision rational used to reproduce catalog
//! values without rounding. Transcendental functions are partial on the
//! exact field: they only succeed where the result is itself rational
//! (`exp(0) = 1`, `ln(1) = 0`, square roots of perfect squares, ...).

use std::fmt::{Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::exprlang::Literal;

/// Arbitrary-precision rational coefficient.
pub type Exact = BigRational;

pub trait Scalar:
    Clone
    + Debug
    + Display
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    /// `None` when the value cannot be represented (non-finite, or an
    /// inexact literal in the exact field).
    fn from_f64(v: f64) -> Option<Self>;
    fn from_literal(lit: &Literal) -> Option<Self>;
    fn to_f64(&self) -> f64;
    fn is_zero(&self) -> bool;
    /// -1, 0 or 1.
    fn sign(&self) -> i8;
    fn abs(&self) -> Self {
        if self.sign() < 0 {
            -self.clone()
        } else {
            self.clone()
        }
    }
    /// True when `self` is indistinguishable from zero relative to `scale`.
    /// Exact values are negligible only when exactly zero.
    fn is_negligible(&self, scale: &Self, rel_tol: f64) -> bool;
    fn is_finite(&self) -> bool;

    fn exp(&self) -> Option<Self>;
    fn ln(&self) -> Option<Self>;
    fn sin(&self) -> Option<Self>;
    fn cos(&self) -> Option<Self>;
    fn sqrt(&self) -> Option<Self>;
    /// `self^r` for a non-integer exponent, `self > 0`.
    fn powr(&self, r: &Self) -> Option<Self>;
    /// Integer value of `self`, when it is one.
    fn as_integer(&self) -> Option<i64>;

    fn powi(&self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }
    fn from_literal(lit: &Literal) -> Option<Self> {
        Some(lit.approx)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn sign(&self) -> i8 {
        if *self > 0.0 {
            1
        } else if *self < 0.0 {
            -1
        } else {
            0
        }
    }
    fn is_negligible(&self, scale: &Self, rel_tol: f64) -> bool {
        f64::abs(*self) <= rel_tol * f64::abs(*scale)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn exp(&self) -> Option<Self> {
        Some(f64::exp(*self)).filter(|v| v.is_finite())
    }
    fn ln(&self) -> Option<Self> {
        (*self > 0.0).then(|| f64::ln(*self))
    }
    fn sin(&self) -> Option<Self> {
        Some(f64::sin(*self))
    }
    fn cos(&self) -> Option<Self> {
        Some(f64::cos(*self))
    }
    fn sqrt(&self) -> Option<Self> {
        (*self >= 0.0).then(|| f64::sqrt(*self))
    }
    fn powr(&self, r: &Self) -> Option<Self> {
        (*self > 0.0).then(|| self.powf(*r))
    }
    fn as_integer(&self) -> Option<i64> {
        (self.fract() == 0.0 && f64::abs(*self) < 9.0e15).then_some(*self as i64)
    }
    fn powi(&self, n: u32) -> Self {
        f64::powi(*self, n as i32)
    }
}

impl Scalar for Exact {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v)
    }
    fn from_literal(lit: &Literal) -> Option<Self> {
        lit.exact.clone()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn sign(&self) -> i8 {
        if self.is_positive() {
            1
        } else if self.is_negative() {
            -1
        } else {
            0
        }
    }
    fn is_negligible(&self, _scale: &Self, _rel_tol: f64) -> bool {
        Zero::is_zero(self)
    }
    fn is_finite(&self) -> bool {
        true
    }
    fn exp(&self) -> Option<Self> {
        Zero::is_zero(self).then(One::one)
    }
    fn ln(&self) -> Option<Self> {
        One::is_one(self).then(Zero::zero)
    }
    fn sin(&self) -> Option<Self> {
        Zero::is_zero(self).then(Zero::zero)
    }
    fn cos(&self) -> Option<Self> {
        Zero::is_zero(self).then(One::one)
    }
    fn sqrt(&self) -> Option<Self> {
        if self.is_negative() {
            return None;
        }
        let n = exact_isqrt(self.numer())?;
        let d = exact_isqrt(self.denom())?;
        Some(BigRational::new(n, d))
    }
    fn powr(&self, r: &Self) -> Option<Self> {
        // only square roots of integer powers are rational in general
        if !self.is_positive() {
            return None;
        }
        let two = BigInt::from(2);
        if r.denom() == &two {
            let base = Scalar::sqrt(self)?;
            let num = r.numer().to_i64()?;
            return Some(rational_powi(&base, num));
        }
        None
    }
    fn as_integer(&self) -> Option<i64> {
        if self.is_integer() {
            self.numer().to_i64()
        } else {
            None
        }
    }
}

fn exact_isqrt(v: &BigInt) -> Option<BigInt> {
    let r = v.sqrt();
    (&r * &r == *v).then_some(r)
}

pub(crate) fn rational_powi(base: &Exact, n: i64) -> Exact {
    let p = <Exact as Scalar>::powi(base, n.unsigned_abs() as u32);
    if n < 0 {
        p.recip()
    } else {
        p
    }
}


/// Reads `p`, `p/q` or a finite decimal such as `-0.25` as an exact rational.
pub fn parse_rational(s: &str) -> Option<Exact> {
    let s = s.trim();
    if let Ok(q) = s.parse::<BigRational>() {
        return Some(q);
    }
    let (neg, body) = s.strip_prefix('-').map_or((false, s), |r| (true, r));
    let (ip, fp) = body.split_once('.')?;
    let digits = format!("{ip}{fp}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let q = BigRational::new(digits.parse::<BigInt>().ok()?, BigInt::from(10).pow(fp.len() as u32));
    Some(if neg { -q } else { q })
}

#[cfg(test)]
mod parse_tests {
    use super::*;

    #[test]
    fn rationals_from_text() {
        let q = |n: i64, d: i64| BigRational::new(n.into(), d.into());
        assert_eq!(parse_rational("-3/4"), Some(q(-3, 4)));
        assert_eq!(parse_rational("0.25"), Some(q(1, 4)));
        assert_eq!(parse_rational("-1.5"), Some(q(-3, 2)));
        assert_eq!(parse_rational("7"), Some(q(7, 1)));
        assert_eq!(parse_rational("1e3"), None);
        assert_eq!(parse_rational("."), None);
    }
}
