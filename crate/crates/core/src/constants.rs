//! Universal coefficients c_{q,s}, d_{2p+1,s} and the residue constants c_q.
//!
//! Values are computed as truncated Laurent series in t = s − s₀ over exact
//! rationals, so poles and removable points come out of the same code path.

use crate::scalar::{rat, Rat};
use num_traits::{One, Signed, Zero};
use serde::Serialize;

/// Truncated Laurent series `t^val (c_0 + c_1 t + ...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Laurent {
    pub val: i32,
    pub c: Vec<Rat>,
}

impl Laurent {
    pub fn constant(v: Rat, len: usize) -> Self {
        let mut c = vec![Rat::zero(); len];
        c[0] = v;
        Laurent { val: 0, c }.normalized()
    }

    /// `a + t`.
    pub fn linear(a: Rat, len: usize) -> Self {
        let mut c = vec![Rat::zero(); len];
        c[0] = a;
        if len > 1 {
            c[1] = Rat::one();
        }
        Laurent { val: 0, c }.normalized()
    }

    fn normalized(mut self) -> Self {
        let lz = self.c.iter().take_while(|x| x.is_zero()).count();
        if lz == self.c.len() {
            // Identically zero to the carried precision.
            return self;
        }
        self.val += lz as i32;
        self.c.drain(0..lz);
        self
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|x| x.is_zero())
    }

    /// Coefficient of t^k.
    pub fn coeff(&self, k: i32) -> Rat {
        let i = k - self.val;
        if i < 0 {
            Rat::zero()
        } else {
            self.c.get(i as usize).cloned().unwrap_or_else(Rat::zero)
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        if self.is_zero() || o.is_zero() {
            return Laurent {
                val: 0,
                c: vec![Rat::zero(); self.c.len().min(o.c.len())],
            };
        }
        let n = self.c.len().min(o.c.len());
        let mut c = vec![Rat::zero(); n];
        for i in 0..n {
            for j in 0..(n - i) {
                c[i + j] += &self.c[i] * &o.c[j];
            }
        }
        Laurent {
            val: self.val + o.val,
            c,
        }
        .normalized()
    }

    pub fn scale(&self, a: &Rat) -> Self {
        Laurent {
            val: self.val,
            c: self.c.iter().map(|x| x * a).collect(),
        }
        .normalized()
    }

    pub fn add(&self, o: &Self) -> Self {
        if self.is_zero() {
            return o.clone();
        }
        if o.is_zero() {
            return self.clone();
        }
        let val = self.val.min(o.val);
        let top = (self.val + self.c.len() as i32).min(o.val + o.c.len() as i32);
        let n = (top - val).max(1) as usize;
        let c = (0..n)
            .map(|i| self.coeff(val + i as i32) + o.coeff(val + i as i32))
            .collect();
        Laurent { val, c }.normalized()
    }

    pub fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let n = self.c.len();
        let mut q = vec![Rat::zero(); n];
        for i in 0..n {
            let mut acc = if i == 0 { Rat::one() } else { Rat::zero() };
            for j in 0..i {
                acc -= &q[j] * &self.c[i - j];
            }
            q[i] = acc / &self.c[0];
        }
        Some(Laurent {
            val: -self.val,
            c: q,
        })
    }
}

/// Value of a universal coefficient at a point: finite, or a pole with its
/// principal data.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffValue {
    Finite {
        #[serde(serialize_with = "ser_rat")]
        value: Rat,
    },
    Pole {
        #[serde(serialize_with = "ser_rat")]
        location: Rat,
        order: u32,
        #[serde(serialize_with = "ser_rat")]
        residue: Rat,
    },
}

pub fn ser_rat<S: serde::Serializer>(r: &Rat, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

impl CoeffValue {
    pub fn finite(&self) -> Option<&Rat> {
        match self {
            CoeffValue::Finite { value } => Some(value),
            CoeffValue::Pole { .. } => None,
        }
    }
}

const LAURENT_LEN: usize = 8;

fn half_n(n: u32) -> Rat {
    rat(n as i64, 2)
}

/// c_{q,s} as a Laurent series about s₀.
pub fn c_laurent(q: u32, s0: &Rat, n: u32) -> Laurent {
    c_laurent_len(q, s0, n, LAURENT_LEN)
}

fn c_laurent_len(q: u32, s0: &Rat, n: u32, len: usize) -> Laurent {
    let x0 = s0 - half_n(n);
    if q == 0 {
        return Laurent::constant(Rat::one(), len);
    }
    if q == 1 {
        return Laurent {
            val: 0,
            c: vec![Rat::zero(); len],
        };
    }
    if q % 2 == 0 {
        let p = (q / 2) as i64;
        let mut pref = Rat::one();
        for i in 1..=p {
            pref *= rat(4 * i, 1);
        }
        if p % 2 == 1 {
            pref = -pref;
        }
        let mut acc = Laurent::constant(Rat::one() / pref, len);
        for i in 1..=p {
            let f = Laurent::linear(&x0 - rat(i, 1), len)
                .recip()
                .expect("linear factor");
            acc = acc.mul(&f);
        }
        return acc;
    }
    let p = ((q - 1) / 2) as i64;
    let sgn = if (p - 1) % 2 == 0 {
        rat(2, 1)
    } else {
        rat(-2, 1)
    };
    let a = c_laurent_len(q - 3, s0, n, len).scale(&sgn);
    let b = c_laurent_len(q - 2, s0, n, len);
    let den = Laurent::linear(&x0 - rat(p, 1) - rat(1, 2), len).scale(&rat(2 * (2 * p + 1), 1));
    a.add(&b).mul(&den.recip().expect("linear factor"))
}

fn to_value(l: &Laurent, s0: &Rat) -> CoeffValue {
    if l.is_zero() || l.val >= 0 {
        CoeffValue::Finite { value: l.coeff(0) }
    } else {
        CoeffValue::Pole {
            location: s0.clone(),
            order: (-l.val) as u32,
            residue: l.coeff(-1),
        }
    }
}

/// c_{q,s} at a rational s.
pub fn c_coeff(q: u32, s: &Rat, n: u32) -> CoeffValue {
    to_value(&c_laurent(q, s, n), s)
}

/// d_{2p+1,s} = ((n + 2p − s)/(2n)) (−1)^p c_{2p,s}, the form that reduces to
/// (n − s)/(2n) at p = 0.
pub fn d_coeff(p: u32, s: &Rat, n: u32) -> CoeffValue {
    to_value(&d_laurent(p, s, n), s)
}

pub fn d_laurent(p: u32, s0: &Rat, n: u32) -> Laurent {
    // (n + 2p − s) = (n + 2p − s₀) − t
    let num = Laurent::linear(s0 - rat(n as i64 + 2 * p as i64, 1), LAURENT_LEN).scale(&rat(-1, 1));
    let sign = if p % 2 == 0 {
        rat(1, 2 * n as i64)
    } else {
        rat(-1, 2 * n as i64)
    };
    num.mul(&c_laurent(2 * p, s0, n)).scale(&sign)
}

/// Residue constant c_q.
pub fn residue_c(q: u32, n: u32) -> Rat {
    if q <= 1 {
        return Rat::zero();
    }
    if q % 2 == 0 {
        let p = (q / 2) as i64;
        let mut den = Rat::one();
        for i in 1..=p {
            den *= rat(4 * i, 1);
        }
        for i in 1..p {
            den *= rat(i, 1);
        }
        let v = Rat::one() / den;
        return if p % 2 == 1 { -v } else { v };
    }
    let p = ((q - 1) / 2) as i64;
    let s0 = rat(n as i64 + q as i64, 2);
    let sgn = if (p - 1) % 2 == 0 {
        rat(2, 1)
    } else {
        rat(-2, 1)
    };
    let a = c_coeff(q - 3, &s0, n)
        .finite()
        .cloned()
        .expect("finite at s0")
        * sgn;
    let b = c_coeff(q - 2, &s0, n)
        .finite()
        .cloned()
        .expect("finite at s0");
    (a + b) / rat(2 * (2 * p + 1), 1)
}

/// Residue of c_{q,s} at s = (n + q)/2 read off the Laurent expansion.
pub fn laurent_residue(q: u32, n: u32) -> Rat {
    c_laurent(q, &rat(n as i64 + q as i64, 2), n).coeff(-1)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoeffRow {
    pub q: u32,
    #[serde(serialize_with = "ser_rat")]
    pub residue: Rat,
    pub residue_f64: f64,
    pub residue_sign: i32,
    pub spot: Vec<(String, CoeffValue)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoeffTable {
    pub n: u32,
    pub rows: Vec<CoeffRow>,
}

/// Table of c_q residues and spot values of c_{q,s} at the given points.
pub fn coeff_table(n: u32, qmax: u32, spots: &[Rat]) -> CoeffTable {
    let rows = (1..=qmax)
        .map(|q| {
            let r = residue_c(q, n);
            CoeffRow {
                q,
                residue_f64: crate::scalar::Scalar::to_f64(&r),
                residue_sign: if r.is_zero() {
                    0
                } else if r.is_positive() {
                    1
                } else {
                    -1
                },
                residue: r,
                spot: spots
                    .iter()
                    .map(|s| (s.to_string(), c_coeff(q, s, n)))
                    .collect(),
            }
        })
        .collect();
    CoeffTable { n, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c1_vanishes() {
        for n in 1..6 {
            assert_eq!(
                c_coeff(1, &rat(7, 3), n),
                CoeffValue::Finite { value: Rat::zero() }
            );
            assert!(residue_c(1, n).is_zero());
        }
    }

    #[test]
    fn c2_spot_value() {
        // −1/(4 (s − n/2 − 1)) at n = 2, s = 3
        assert_eq!(c_coeff(2, &rat(3, 1), 2).finite().unwrap(), &rat(-1, 4));
    }

    #[test]
    fn even_residues_closed_form() {
        assert_eq!(residue_c(2, 3), rat(-1, 4));
        assert_eq!(residue_c(4, 3), rat(1, 32));
        assert_eq!(laurent_residue(4, 5), rat(1, 32));
    }

    #[test]
    fn c3_is_one_third() {
        assert_eq!(residue_c(3, 2), rat(1, 3));
        assert_eq!(laurent_residue(3, 2), rat(1, 3));
    }

    #[test]
    fn pole_is_reported() {
        match c_coeff(2, &rat(2, 1), 2) {
            CoeffValue::Pole { order, residue, .. } => {
                assert_eq!(order, 1);
                assert_eq!(residue, rat(-1, 4));
            }
            v => panic!("expected pole, got {v:?}"),
        }
    }

    #[test]
    fn odd_positive_above_threshold() {
        for p in 1..5u32 {
            let q = 2 * p + 1;
            for n in 2..5u32 {
                let s = rat((n + q) as i64, 2) + rat(1, 7);
                let v = c_coeff(q, &s, n).finite().cloned().unwrap();
                assert!(v.is_positive(), "q={q} n={n}");
            }
        }
    }

    #[test]
    fn d_coefficients() {
        let s = rat(5, 2);
        assert_eq!(
            d_coeff(0, &s, 3).finite().unwrap(),
            &((rat(3, 1) - &s) / rat(6, 1))
        );
        assert!(d_coeff(0, &rat(3, 1), 3).finite().unwrap().is_zero());
        // p = 1, n = 3, s = 3: (3 + 2 − 3)/6 · (−1) c_{2,3}, c_{2,3} = −1/2
        assert_eq!(d_coeff(1, &rat(3, 1), 3).finite().unwrap(), &rat(1, 6));
        let s = rat(11, 4);
        let c2 = c_coeff(2, &s, 3).finite().cloned().unwrap();
        let want = (rat(5, 1) - &s) / rat(6, 1) * (-c2);
        assert_eq!(d_coeff(1, &s, 3).finite().unwrap(), &want);
    }

    #[test]
    fn d_smooth_across_half_integer() {
        for p in 0..4u32 {
            for n in 2..5u32 {
                let s = rat((n + 2 * p + 1) as i64, 2);
                assert!(d_coeff(p, &s, n).finite().is_some());
            }
        }
    }
}
