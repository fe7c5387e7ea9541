//! Coefficient fields used by the series engine: `f64`, exact rationals and
//! truncated Taylor jets over either.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

pub type Rat = BigRational;

/// Build an exact rational from machine integers.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Exact conversion of a finite double to a rational.
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_float(x)
}

pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_ratio(n: i64, d: i64) -> Self;
    /// Division; `None` when the divisor is not invertible.
    fn try_div(&self, rhs: &Self) -> Option<Self>;
    fn is_zero(&self) -> bool;
    /// Value used for numeric evaluation (jets report their constant term).
    fn to_f64(&self) -> f64;
    /// Magnitude used for tolerance decisions.
    fn magnitude(&self) -> f64 {
        self.to_f64().abs()
    }
    fn exact() -> bool;
    /// exp, where representable in this field.
    fn exp_s(&self) -> Option<Self>;
    /// Natural log, where representable in this field.
    fn ln_s(&self) -> Option<Self>;
    /// Exact image of a double; `None` when the field cannot hold it.
    fn from_f64(x: f64) -> Option<Self>;

    fn from_i64(v: i64) -> Self {
        Self::from_ratio(v, 1)
    }
    fn scale_i64(&self, v: i64) -> Self {
        self.clone() * Self::from_i64(v)
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        n as f64 / d as f64
    }
    fn try_div(&self, rhs: &Self) -> Option<Self> {
        if *rhs == 0.0 {
            None
        } else {
            Some(self / rhs)
        }
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn exact() -> bool {
        false
    }
    fn exp_s(&self) -> Option<Self> {
        Some(self.exp())
    }
    fn ln_s(&self) -> Option<Self> {
        if *self > 0.0 {
            Some(self.ln())
        } else {
            None
        }
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(x)
    }
}

impl Scalar for Rat {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        rat(n, d)
    }
    fn try_div(&self, rhs: &Self) -> Option<Self> {
        if Zero::is_zero(rhs) {
            None
        } else {
            Some(self / rhs)
        }
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn to_f64(&self) -> f64 {
        self.to_f64_lossy()
    }
    fn magnitude(&self) -> f64 {
        self.abs().to_f64_lossy()
    }
    fn exact() -> bool {
        true
    }
    fn exp_s(&self) -> Option<Self> {
        Zero::is_zero(self).then(One::one)
    }
    fn ln_s(&self) -> Option<Self> {
        One::is_one(self).then(Zero::zero)
    }
    fn from_f64(x: f64) -> Option<Self> {
        rat_from_f64(x)
    }
}

trait LossyF64 {
    fn to_f64_lossy(&self) -> f64;
}

impl LossyF64 for Rat {
    fn to_f64_lossy(&self) -> f64 {
        if let Some(v) = ToPrimitive::to_f64(self) {
            if v.is_finite() {
                return v;
            }
        }
        // Huge numerators and denominators: scale by bit length first.
        let nb = self.numer().bits() as i64;
        let db = self.denom().bits() as i64;
        let shift = nb - db;
        let scaled = if shift > 0 {
            self / Rat::from_integer(BigInt::one() << (shift as usize))
        } else {
            self * Rat::from_integer(BigInt::one() << ((-shift) as usize))
        };
        ToPrimitive::to_f64(&scaled).unwrap_or(f64::NAN) * 2f64.powi(shift as i32)
    }
}

/// Truncated Taylor series in an auxiliary variable `t` (coefficients
/// `c[0] + c[1] t + ...`). Used to differentiate in `s` through recursions
/// that are rational in `s`, including removable 0/0 points.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub c: Vec<T>,
}

/// Length of jets created from plain constants. Binary operations keep the
/// shorter of the two operands, so a constant never limits precision below
/// this.
pub const JET_LEN: usize = 4;

impl<T: Scalar> Jet<T> {
    pub fn constant(v: T, len: usize) -> Self {
        let mut c = vec![T::zero(); len.max(1)];
        c[0] = v;
        Jet { c }
    }
    /// The variable `v + t`.
    pub fn variable(v: T, len: usize) -> Self {
        let mut j = Self::constant(v, len.max(2));
        j.c[1] = T::one();
        j
    }
    pub fn len(&self) -> usize {
        self.c.len()
    }
    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
    pub fn value(&self) -> &T {
        &self.c[0]
    }
    /// k-th Taylor coefficient (not the derivative).
    pub fn coeff(&self, k: usize) -> T {
        self.c.get(k).cloned().unwrap_or_else(T::zero)
    }
    /// k-th derivative at t = 0.
    pub fn derivative(&self, k: usize) -> T {
        let mut f = T::one();
        for i in 2..=k {
            f = f * T::from_i64(i as i64);
        }
        self.coeff(k) * f
    }

    fn binop(&self, o: &Self, f: impl Fn(&T, &T) -> T) -> Self {
        let n = self.len().min(o.len());
        Jet {
            c: (0..n).map(|i| f(&self.c[i], &o.c[i])).collect(),
        }
    }

    fn leading_zeros(&self, tol: f64) -> usize {
        let scale = self.c.iter().map(|x| x.magnitude()).fold(0.0, f64::max);
        self.c
            .iter()
            .take_while(|x| {
                if T::exact() {
                    x.is_zero()
                } else {
                    x.magnitude() <= tol * scale.max(1.0)
                }
            })
            .count()
    }
}

impl<T: Scalar> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binop(&o, |a, b| a.clone() + b.clone())
    }
}
impl<T: Scalar> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binop(&o, |a, b| a.clone() - b.clone())
    }
}
impl<T: Scalar> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet {
            c: self.c.into_iter().map(|x| -x).collect(),
        }
    }
}
impl<T: Scalar> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let n = self.len().min(o.len());
        let mut c = vec![T::zero(); n];
        for i in 0..n {
            if self.c[i].is_zero() {
                continue;
            }
            for j in 0..(n - i) {
                c[i + j] = c[i + j].clone() + self.c[i].clone() * o.c[j].clone();
            }
        }
        Jet { c }
    }
}

impl<T: Scalar> Scalar for Jet<T> {
    fn zero() -> Self {
        Jet::constant(T::zero(), JET_LEN)
    }
    fn one() -> Self {
        Jet::constant(T::one(), JET_LEN)
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        Jet::constant(T::from_ratio(n, d), JET_LEN)
    }
    /// Division that cancels common leading zeros (removable singularities);
    /// each cancelled order shortens the result by one.
    fn try_div(&self, rhs: &Self) -> Option<Self> {
        let n = self.len().min(rhs.len());
        let zb = rhs.leading_zeros(1e-13);
        if zb >= n {
            return None;
        }
        let za = self.leading_zeros(1e-11);
        if za < zb {
            return None;
        }
        let m = n - zb;
        let a: Vec<T> = (0..m).map(|i| self.coeff(i + zb)).collect();
        let b: Vec<T> = (0..m).map(|i| rhs.coeff(i + zb)).collect();
        let mut q = vec![T::zero(); m];
        for i in 0..m {
            let mut acc = a[i].clone();
            for j in 0..i {
                acc = acc - q[j].clone() * b[i - j].clone();
            }
            q[i] = acc.try_div(&b[0])?;
        }
        Some(Jet { c: q })
    }
    fn is_zero(&self) -> bool {
        self.c.iter().all(|x| x.is_zero())
    }
    fn to_f64(&self) -> f64 {
        self.c[0].to_f64()
    }
    fn magnitude(&self) -> f64 {
        self.c.iter().map(|x| x.magnitude()).fold(0.0, f64::max)
    }
    fn exact() -> bool {
        T::exact()
    }
    fn exp_s(&self) -> Option<Self> {
        // exp(c0 + e) = exp(c0) * sum e^m / m!
        let n = self.len();
        let mut e = self.clone();
        e.c[0] = T::zero();
        let e0 = self.c[0].exp_s()?;
        let mut term = Jet::constant(T::one(), n);
        let mut acc = term.clone();
        for m in 1..n {
            term = (term * e.clone()).try_div(&Jet::constant(T::from_i64(m as i64), n))?;
            acc = acc + term.clone();
        }
        Some(acc * Jet::constant(e0, n))
    }
    fn ln_s(&self) -> Option<Self> {
        let n = self.len();
        let l0 = self.c[0].ln_s()?;
        let w = self.try_div(&Jet::constant(self.c[0].clone(), n))? - Jet::constant(T::one(), n);
        let mut pw = Jet::constant(T::one(), n);
        let mut acc = Jet::constant(l0, n);
        for m in 1..n {
            pw = pw * w.clone();
            let t = pw.try_div(&Jet::constant(T::from_i64(m as i64), n))?;
            acc = if m % 2 == 1 { acc + t } else { acc - t };
        }
        Some(acc)
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(Jet::constant(T::from_f64(x)?, JET_LEN))
    }
}

/// Conversion between coefficient fields.
pub trait FromScalar<S> {
    fn from_scalar(s: &S) -> Self;
}

impl FromScalar<f64> for f64 {
    fn from_scalar(s: &f64) -> Self {
        *s
    }
}
impl FromScalar<Rat> for Rat {
    fn from_scalar(s: &Rat) -> Self {
        s.clone()
    }
}
impl FromScalar<Rat> for f64 {
    fn from_scalar(s: &Rat) -> Self {
        s.to_f64_lossy()
    }
}
impl<T: Scalar + FromScalar<S>, S> FromScalar<S> for Jet<T> {
    fn from_scalar(s: &S) -> Self {
        Jet::constant(T::from_scalar(s), JET_LEN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_product_rule() {
        let x = Jet::variable(2.0_f64, 3);
        let y = x.clone() * x.clone() * x;
        assert_eq!(y.c, vec![8.0, 12.0, 6.0]);
    }

    #[test]
    fn jet_removable_division() {
        // (t^2 + 2t) / t = t + 2
        let num = Jet {
            c: vec![rat(0, 1), rat(2, 1), rat(1, 1), rat(0, 1)],
        };
        let den = Jet {
            c: vec![rat(0, 1), rat(1, 1), rat(0, 1), rat(0, 1)],
        };
        let q = num.try_div(&den).unwrap();
        assert_eq!(q.c, vec![rat(2, 1), rat(1, 1), rat(0, 1)]);
    }

    #[test]
    fn jet_pole_is_not_invertible() {
        let num = Jet::constant(rat(1, 1), 3);
        let den = Jet {
            c: vec![rat(0, 1), rat(1, 1), rat(0, 1)],
        };
        assert!(num.try_div(&den).is_none());
    }

    #[test]
    fn huge_rational_to_f64() {
        let big = Rat::from_integer(BigInt::from(10).pow(400))
            / Rat::from_integer(BigInt::from(10).pow(399));
        assert!((Scalar::to_f64(&big) - 10.0).abs() < 1e-12);
    }
}
