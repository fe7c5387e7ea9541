//! Truncated polyhomogeneous expansions `r^α Σ a_{k,j} r^k (log r)^j`.

use crate::error::{Error, Result};
use crate::scalar::{FromScalar, Rat, Scalar};
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

/// Highest power of log r carried by default. Products that would need a
/// higher power lower the truncation order instead.
pub const LOG_CAP: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PolyLogSeries<T> {
    base: T,
    order: i32,
    log_cap: u32,
    terms: BTreeMap<(i32, u32), T>,
}

impl<T: Scalar> PolyLogSeries<T> {
    pub fn new(base: T, order: i32) -> Self {
        PolyLogSeries {
            base,
            order,
            log_cap: LOG_CAP,
            terms: BTreeMap::new(),
        }
    }

    pub fn zero(order: i32) -> Self {
        Self::new(T::zero(), order)
    }

    pub fn constant(c: T, order: i32) -> Self {
        let mut s = Self::zero(order);
        s.insert(0, 0, c);
        s
    }

    pub fn one(order: i32) -> Self {
        Self::constant(T::one(), order)
    }

    /// `c r^k (log r)^j` with base exponent 0.
    pub fn monomial(c: T, k: i32, j: u32, order: i32) -> Self {
        let mut s = Self::zero(order);
        s.insert(k, j, c);
        s
    }

    /// `r^base (c_0 + c_1 r + ...)`, truncated at `order`.
    pub fn from_coeffs(base: T, coeffs: &[T], order: i32) -> Self {
        let mut s = Self::new(base, order);
        for (k, c) in coeffs.iter().enumerate() {
            s.insert(k as i32, 0, c.clone());
        }
        s
    }

    /// The series `log r`.
    pub fn log_r(order: i32) -> Self {
        Self::monomial(T::one(), 0, 1, order)
    }

    pub fn base(&self) -> &T {
        &self.base
    }
    pub fn order(&self) -> i32 {
        self.order
    }
    pub fn log_cap(&self) -> u32 {
        self.log_cap
    }
    pub fn with_log_cap(mut self, cap: u32) -> Self {
        self.log_cap = cap;
        self.enforce_cap();
        self
    }
    pub fn terms(&self) -> impl Iterator<Item = (i32, u32, &T)> {
        self.terms.iter().map(|(&(k, j), c)| (k, j, c))
    }
    pub fn len(&self) -> usize {
        self.terms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, k: i32, j: u32) -> T {
        self.terms.get(&(k, j)).cloned().unwrap_or_else(T::zero)
    }

    /// Lowest k carrying a nonzero coefficient; `order + 1` when empty.
    pub fn valuation(&self) -> i32 {
        self.terms
            .keys()
            .next()
            .map(|&(k, _)| k)
            .unwrap_or(self.order + 1)
    }

    pub fn max_log(&self) -> u32 {
        self.terms.keys().map(|&(_, j)| j).max().unwrap_or(0)
    }

    /// Add `c` to the coefficient at (k, j). Terms beyond the order are
    /// dropped; a log power above the cap lowers the order.
    pub fn insert(&mut self, k: i32, j: u32, c: T) {
        if k > self.order || c.is_zero() {
            return;
        }
        if j > self.log_cap {
            self.set_order(k - 1);
            return;
        }
        let e = self.terms.entry((k, j)).or_insert_with(T::zero);
        *e = e.clone() + c;
        if e.is_zero() {
            self.terms.remove(&(k, j));
        }
    }

    pub fn set_coeff(&mut self, k: i32, j: u32, c: T) {
        self.terms.remove(&(k, j));
        self.insert(k, j, c);
    }

    fn set_order(&mut self, order: i32) {
        if order < self.order {
            self.order = order;
            self.terms.retain(|&(k, _), _| k <= order);
        }
    }

    fn enforce_cap(&mut self) {
        if let Some(k) = self
            .terms
            .keys()
            .filter(|&&(_, j)| j > self.log_cap)
            .map(|&(k, _)| k)
            .min()
        {
            self.set_order(k - 1);
        }
    }

    /// Lower the truncation order (never raises it).
    pub fn truncate(mut self, order: i32) -> Self {
        self.set_order(order);
        self
    }

    /// Declare a higher truncation order; missing terms become zeros.
    /// Only meaningful when the caller knows those coefficients vanish.
    pub fn extend_order(mut self, order: i32) -> Self {
        self.order = self.order.max(order);
        self
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> PolyLogSeries<U> {
        let mut out = PolyLogSeries::new(f(&self.base), self.order);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            out.insert(k, j, f(c));
        }
        out
    }

    pub fn convert<U: Scalar + FromScalar<T>>(&self) -> PolyLogSeries<U> {
        self.map(|c| U::from_scalar(c))
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn scale(&self, a: &T) -> Self {
        let mut out = Self::new(self.base.clone(), self.order);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            out.insert(k, j, c.clone() * a.clone());
        }
        out
    }

    fn check_base(&self, o: &Self) -> Result<()> {
        if self.base == o.base {
            Ok(())
        } else {
            Err(Error::BaseMismatch)
        }
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check_base(o)?;
        let mut out = Self::new(self.base.clone(), self.order.min(o.order));
        out.log_cap = self.log_cap.min(o.log_cap);
        for (&(k, j), c) in self.terms.iter().chain(o.terms.iter()) {
            out.insert(k, j, c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.neg())
    }

    /// Add a constant multiple of `r^k (log r)^j` (base exponent kept).
    pub fn add_term(&self, k: i32, j: u32, c: T) -> Self {
        let mut out = self.clone();
        out.insert(k, j, c);
        out
    }

    pub fn mul(&self, o: &Self) -> Self {
        let order = (self.order + o.valuation()).min(o.order + self.valuation());
        let mut out = Self::new(self.base.clone() + o.base.clone(), order);
        out.log_cap = self.log_cap.min(o.log_cap);
        let mut acc: BTreeMap<(i32, u32), T> = BTreeMap::new();
        for (&(ka, ja), ca) in &self.terms {
            for (&(kb, jb), cb) in &o.terms {
                let k = ka + kb;
                if k > order {
                    break;
                }
                let e = acc.entry((k, ja + jb)).or_insert_with(T::zero);
                *e = e.clone() + ca.clone() * cb.clone();
            }
        }
        for ((k, j), c) in acc {
            out.insert(k, j, c);
        }
        out
    }

    /// Multiply by `r^m`.
    pub fn shift(&self, m: i32) -> Self {
        let mut out = Self::new(self.base.clone(), self.order + m);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            out.insert(k + m, j, c.clone());
        }
        out
    }

    /// Multiply by `log r`.
    pub fn mul_log(&self) -> Self {
        let mut out = Self::new(self.base.clone(), self.order);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            out.insert(k, j + 1, c.clone());
        }
        out
    }

    /// Replace the base exponent by `base + m` and move the ladder down by m,
    /// so the represented function is unchanged.
    pub fn rebase(&self, m: i32) -> Self {
        let mut out = self.shift(-m);
        out.base = self.base.clone() + T::from_i64(m as i64);
        out
    }

    /// d/dr.
    pub fn derivative(&self) -> Self {
        let mut out = Self::new(self.base.clone(), self.order - 1);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            let e = self.base.clone() + T::from_i64(k as i64);
            out.insert(k - 1, j, e * c.clone());
            if j > 0 {
                out.insert(k - 1, j - 1, c.scale_i64(j as i64));
            }
        }
        out
    }

    /// θ = r d/dr; keeps the ladder.
    pub fn theta(&self) -> Self {
        let mut out = Self::new(self.base.clone(), self.order);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            let e = self.base.clone() + T::from_i64(k as i64);
            out.insert(k, j, e * c.clone());
            if j > 0 {
                out.insert(k, j - 1, c.scale_i64(j as i64));
            }
        }
        out
    }

    /// Split `a = c r^v (1 + w)`; requires a log-free leading term.
    fn unit_split(&self) -> Result<(i32, T, Self)> {
        let v = self.valuation();
        if v > self.order {
            return Err(Error::NonUnitLeading("series vanishes to its order".into()));
        }
        if self.terms.keys().any(|&(k, j)| k == v && j > 0) {
            return Err(Error::NonUnitLeading("log in leading term".into()));
        }
        let c = self.coeff(v, 0);
        let mut w = Self::new(T::zero(), self.order - v);
        w.log_cap = self.log_cap;
        for (&(k, j), a) in &self.terms {
            if k == v && j == 0 {
                continue;
            }
            let q = a.try_div(&c).ok_or_else(|| {
                Error::NonUnitLeading("leading coefficient not invertible".into())
            })?;
            w.insert(k - v, j, q);
        }
        Ok((v, c, w))
    }

    /// Σ_m coeffs[m] w^m with w of positive valuation.
    fn compose_maclaurin(w: &Self, coeffs: impl Fn(usize) -> T) -> Self {
        let nmax = (w.order.max(0) as usize) + 1;
        let mut out = Self::constant(coeffs(0), w.order);
        out.log_cap = w.log_cap;
        let mut pw = Self::one(w.order);
        for m in 1..=nmax {
            pw = pw.mul(w);
            if pw.is_empty() {
                break;
            }
            let a = coeffs(m);
            if !a.is_zero() {
                out = out.add(&pw.scale(&a)).expect("same base");
            }
        }
        out.order = out.order.min(w.order);
        out
    }

    pub fn recip(&self) -> Result<Self> {
        let (v, c, w) = self.unit_split()?;
        let inv_c = T::one()
            .try_div(&c)
            .ok_or_else(|| Error::NonUnitLeading("zero leading coefficient".into()))?;
        let geo = Self::compose_maclaurin(&w, |m| if m % 2 == 0 { T::one() } else { -T::one() });
        let mut out = geo.scale(&inv_c).shift(-v);
        out.base = -self.base.clone();
        Ok(out)
    }

    pub fn div(&self, o: &Self) -> Result<Self> {
        Ok(self.mul(&o.recip()?))
    }

    fn require_base_zero(&self, what: &str) -> Result<()> {
        if self.base.is_zero() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "{what}: base exponent must be 0"
            )))
        }
    }

    pub fn exp(&self) -> Result<Self> {
        self.require_base_zero("exp")?;
        if self.valuation() < 0 {
            return Err(Error::Precondition("exp: negative powers of r".into()));
        }
        if self.terms.keys().any(|&(k, j)| k == 0 && j > 0) {
            return Err(Error::Precondition("exp: pure log-leading term".into()));
        }
        let c0 = self.coeff(0, 0);
        let e0 = c0
            .exp_s()
            .ok_or_else(|| Error::NonUnitLeading("exp of a nonzero exact constant".into()))?;
        let mut w = self.clone();
        w.terms.remove(&(0, 0));
        let mut fact = T::one();
        let facts: Vec<T> = (0..=(w.order.max(0) as usize + 1))
            .map(|m| {
                if m > 1 {
                    fact = fact.clone() * T::from_i64(m as i64);
                }
                fact.clone()
            })
            .collect();
        let out = Self::compose_maclaurin(&w, |m| T::one().try_div(&facts[m]).unwrap());
        Ok(out.scale(&e0))
    }

    pub fn log(&self) -> Result<Self> {
        self.require_base_zero("log")?;
        let (v, c, w) = self.unit_split()?;
        if v != 0 {
            return Err(Error::NonUnitLeading(
                "log of a series vanishing at r = 0".into(),
            ));
        }
        let l0 = c
            .ln_s()
            .ok_or_else(|| Error::NonUnitLeading("log of a non-unit leading coefficient".into()))?;
        let out = Self::compose_maclaurin(&w, |m| {
            if m == 0 {
                T::zero()
            } else {
                let s = if m % 2 == 1 { T::one() } else { -T::one() };
                s.try_div(&T::from_i64(m as i64)).unwrap()
            }
        });
        Ok(out.add(&Self::constant(l0, out.order)).expect("same base"))
    }

    /// `(r e^w)^α = r^α exp(α w)`; requires `w(0) = 0`.
    pub fn rpow(w: &Self, alpha: &T) -> Result<Self> {
        w.require_base_zero("rpow")?;
        if w.valuation() < 1 {
            return Err(Error::Precondition("rpow: w(0) must vanish".into()));
        }
        let mut out = w.scale(alpha).exp()?;
        out.base = alpha.clone();
        Ok(out)
    }

    /// `a^α` for a base-0 series with unit leading term.
    pub fn pow_unit(&self, alpha: &T) -> Result<Self> {
        self.log()?.scale(alpha).exp()
    }

    /// Integer power, allowing a nontrivial leading term and base exponent.
    pub fn powi(&self, p: i32) -> Result<Self> {
        let b = if p >= 0 { self.clone() } else { self.recip()? };
        let mut out = Self::one(b.order - b.valuation());
        let mut first = true;
        for _ in 0..p.unsigned_abs() {
            out = if first { b.clone() } else { out.mul(&b) };
            first = false;
        }
        Ok(out)
    }

    /// `f(x (1 + δ(x)))` for δ of positive valuation and base exponent 0.
    pub fn compose_near_identity(&self, delta: &Self) -> Result<Self> {
        delta.require_base_zero("compose")?;
        if delta.valuation() < 1 {
            return Err(Error::Precondition("compose: δ(0) must vanish".into()));
        }
        let one_plus = delta.add(&Self::one(delta.order))?;
        let l = one_plus.log()?;
        let logx = Self::log_r(l.order);
        let lg = logx.add(&l)?;
        let v = self.valuation();
        let order = self.order.min(v + delta.order);
        let mut out = Self::new(self.base.clone(), order);
        out.log_cap = self.log_cap.min(delta.log_cap);
        let mut by_k: BTreeMap<i32, Vec<(u32, T)>> = BTreeMap::new();
        for (&(k, j), c) in &self.terms {
            by_k.entry(k).or_default().push((j, c.clone()));
        }
        let rel = order - v;
        for (k, js) in by_k {
            if k > order {
                break;
            }
            let e = self.base.clone() + T::from_i64(k as i64);
            let fac = l.scale(&e).exp()?.truncate(rel);
            let mut inner = Self::zero(rel);
            let mut lgp = Self::one(rel);
            let mut jprev = 0u32;
            for (j, c) in js {
                while jprev < j {
                    lgp = lgp.mul(&lg).truncate(rel);
                    jprev += 1;
                }
                inner = inner.add(&lgp.scale(&c))?;
            }
            let mut piece = fac.mul(&inner).shift(k);
            piece.base = self.base.clone();
            out = out.add(&piece.truncate(order))?;
        }
        out.order = out.order.min(order);
        Ok(out)
    }

    /// Numeric value at r > 0 using the stored terms.
    pub fn eval(&self, r: f64) -> f64 {
        let lr = r.ln();
        let b = self.base.to_f64();
        self.terms
            .iter()
            .map(|(&(k, j), c)| c.to_f64() * r.powf(b + k as f64) * lr.powi(j as i32))
            .sum()
    }

    /// Magnitude of the last retained order at r, a crude truncation estimate.
    pub fn tail_estimate(&self, r: f64) -> f64 {
        let lr = r.ln().abs().max(1.0);
        let b = self.base.to_f64();
        self.terms
            .iter()
            .filter(|(&(k, _), _)| k >= self.order - 1)
            .map(|(&(k, j), c)| c.magnitude() * r.powf(b + k as f64) * lr.powi(j as i32))
            .sum()
    }
}

impl<T: Scalar> PolyLogSeries<T> {
    /// Antiderivative with zero integration constant, term by term.
    pub fn integrate(&self) -> Result<Self> {
        let mut out = Self::new(self.base.clone(), self.order + 1);
        out.log_cap = self.log_cap;
        for (&(k, j), c) in &self.terms {
            let a1 = self.base.clone() + T::from_i64(k as i64 + 1);
            if a1.is_zero() {
                let q = c
                    .try_div(&T::from_i64(j as i64 + 1))
                    .ok_or_else(|| Error::Precondition("integrate".into()))?;
                out.insert(k + 1, j + 1, q);
                continue;
            }
            // r^{a+1} Σ_i (-1)^i j!/(j-i)! log^{j-i} / (a+1)^{i+1}
            let mut coef = c
                .try_div(&a1)
                .ok_or_else(|| Error::Precondition("integrate".into()))?;
            for i in 0..=j {
                out.insert(k + 1, j - i, coef.clone());
                coef = (-coef).scale_i64((j - i) as i64);
                coef = coef
                    .try_div(&a1)
                    .ok_or_else(|| Error::Precondition("integrate".into()))?;
            }
        }
        Ok(out)
    }

    /// For `y = x (1 + δ(x))`, the series η with `x = y (1 + η(y))`.
    pub fn revert_near_identity(delta: &Self) -> Result<Self> {
        delta.require_base_zero("revert")?;
        if delta.valuation() < 1 {
            return Err(Error::Precondition("revert: δ(0) must vanish".into()));
        }
        let order = delta.order;
        let one = Self::one(order);
        let mut eta = Self::zero(order);
        for _ in 0..=order.max(0) {
            let d = delta.compose_near_identity(&eta)?;
            let next = one.add(&d)?.recip()?.sub(&one)?;
            if next == eta {
                break;
            }
            eta = next;
        }
        Ok(eta)
    }

    /// Value and first derivative at r > 0.
    pub fn eval_d(&self, r: f64) -> (f64, f64) {
        (self.eval(r), self.derivative().eval(r))
    }
}

impl PolyLogSeries<f64> {
    /// Largest coefficient magnitude, used for relative comparisons.
    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    k: i32,
    j: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    num: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    den: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    float: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SeriesJson {
    base_exponent: Value,
    #[serde(default = "default_order")]
    truncation_order: i32,
    terms: Vec<TermJson>,
}

fn default_order() -> i32 {
    i32::MAX / 4
}

fn bigint_json(b: &BigInt) -> Value {
    match b.to_i64() {
        Some(v) => Value::from(v),
        None => Value::String(b.to_string()),
    }
}

fn json_bigint(v: &Value) -> Result<BigInt> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .map(BigInt::from)
            .ok_or_else(|| Error::Invalid("non-integer num/den".into())),
        Value::String(s) => s
            .parse()
            .map_err(|_| Error::Invalid(format!("bad integer {s}"))),
        _ => Err(Error::Invalid("num/den must be integer".into())),
    }
}

fn rat_json(r: &Rat) -> Value {
    serde_json::json!({"num": bigint_json(r.numer()), "den": bigint_json(r.denom())})
}

/// Series with a runtime exact/float mode flag.
#[derive(Clone, Debug, PartialEq)]
pub enum Series {
    Exact(PolyLogSeries<Rat>),
    Float(PolyLogSeries<f64>),
}

fn mismatch() -> Error {
    Error::ModeMismatch("exact and float operands; promote explicitly".into())
}

impl Series {
    pub fn is_exact(&self) -> bool {
        matches!(self, Series::Exact(_))
    }

    pub fn promote(&self) -> Series {
        match self {
            Series::Exact(s) => Series::Float(s.convert()),
            Series::Float(s) => Series::Float(s.clone()),
        }
    }

    pub fn as_float(&self) -> PolyLogSeries<f64> {
        match self {
            Series::Exact(s) => s.convert(),
            Series::Float(s) => s.clone(),
        }
    }

    pub fn mul(&self, o: &Series) -> Result<Series> {
        match (self, o) {
            (Series::Exact(a), Series::Exact(b)) => Ok(Series::Exact(a.mul(b))),
            (Series::Float(a), Series::Float(b)) => Ok(Series::Float(a.mul(b))),
            _ => Err(mismatch()),
        }
    }

    pub fn add(&self, o: &Series) -> Result<Series> {
        match (self, o) {
            (Series::Exact(a), Series::Exact(b)) => Ok(Series::Exact(a.add(b)?)),
            (Series::Float(a), Series::Float(b)) => Ok(Series::Float(a.add(b)?)),
            _ => Err(mismatch()),
        }
    }

    pub fn derivative(&self) -> Series {
        match self {
            Series::Exact(a) => Series::Exact(a.derivative()),
            Series::Float(a) => Series::Float(a.derivative()),
        }
    }

    pub fn exp(&self) -> Result<Series> {
        match self {
            Series::Exact(a) => Ok(Series::Exact(a.exp()?)),
            Series::Float(a) => Ok(Series::Float(a.exp()?)),
        }
    }

    pub fn log(&self) -> Result<Series> {
        match self {
            Series::Exact(a) => Ok(Series::Exact(a.log()?)),
            Series::Float(a) => Ok(Series::Float(a.log()?)),
        }
    }

    pub fn to_json(&self) -> Value {
        let (base, order, terms) = match self {
            Series::Exact(s) => (
                rat_json(s.base()),
                s.order(),
                s.terms()
                    .map(|(k, j, c)| TermJson {
                        k,
                        j,
                        num: Some(bigint_json(c.numer())),
                        den: Some(bigint_json(c.denom())),
                        float: None,
                    })
                    .collect::<Vec<_>>(),
            ),
            Series::Float(s) => (
                Value::from(*s.base()),
                s.order(),
                s.terms()
                    .map(|(k, j, c)| TermJson {
                        k,
                        j,
                        num: None,
                        den: None,
                        float: Some(*c),
                    })
                    .collect(),
            ),
        };
        serde_json::to_value(SeriesJson {
            base_exponent: base,
            truncation_order: order,
            terms,
        })
        .expect("serializable")
    }

    /// Parse the JSON form. Exact mode is chosen when every term carries
    /// num/den; mixing exact and float terms is rejected.
    pub fn from_json(v: &Value) -> Result<Series> {
        let sj: SeriesJson = serde_json::from_value(v.clone())?;
        let exact_terms = sj.terms.iter().filter(|t| t.num.is_some()).count();
        let float_terms = sj.terms.iter().filter(|t| t.float.is_some()).count();
        if exact_terms > 0 && float_terms > 0 {
            return Err(mismatch());
        }
        let exact_base = matches!(sj.base_exponent, Value::Object(_));
        if exact_terms > 0 || (float_terms == 0 && exact_base) {
            let base = match &sj.base_exponent {
                Value::Object(m) => {
                    let n = json_bigint(
                        m.get("num")
                            .ok_or_else(|| Error::Invalid("base num".into()))?,
                    )?;
                    let d = json_bigint(
                        m.get("den")
                            .ok_or_else(|| Error::Invalid("base den".into()))?,
                    )?;
                    if d.is_zero() {
                        return Err(Error::Invalid("zero denominator".into()));
                    }
                    Rat::new(n, d)
                }
                Value::Number(n) => {
                    let x = n.as_f64().unwrap_or(f64::NAN);
                    Rat::from_float(x).ok_or_else(|| Error::Invalid("base exponent".into()))?
                }
                _ => return Err(Error::Invalid("base_exponent".into())),
            };
            let mut s = PolyLogSeries::new(base, sj.truncation_order);
            for t in &sj.terms {
                let n = json_bigint(t.num.as_ref().unwrap())?;
                let d = json_bigint(
                    t.den
                        .as_ref()
                        .ok_or_else(|| Error::Invalid("missing den".into()))?,
                )?;
                if d.is_zero() {
                    return Err(Error::Invalid("zero denominator".into()));
                }
                s.insert(t.k, t.j, Rat::new(n, d));
            }
            Ok(Series::Exact(s))
        } else {
            let base = sj
                .base_exponent
                .as_f64()
                .ok_or_else(|| Error::Invalid("float base_exponent".into()))?;
            let mut s = PolyLogSeries::new(base, sj.truncation_order);
            for t in &sj.terms {
                s.insert(t.k, t.j, t.float.unwrap_or(0.0));
            }
            Ok(Series::Float(s))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;

    fn q(n: i64, d: i64) -> Rat {
        rat(n, d)
    }

    fn poly(c: &[(i64, i64)], order: i32) -> PolyLogSeries<Rat> {
        let v: Vec<Rat> = c.iter().map(|&(n, d)| q(n, d)).collect();
        PolyLogSeries::from_coeffs(q(0, 1), &v, order)
    }

    #[test]
    fn telescoping_product() {
        let a = poly(&[(1, 1), (1, 1)], 5);
        let b = poly(&[(1, 1), (-1, 1)], 5);
        let p = a.mul(&b);
        assert_eq!(p.coeff(0, 0), q(1, 1));
        assert_eq!(p.coeff(1, 0), q(0, 1));
        assert_eq!(p.coeff(2, 0), q(-1, 1));
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn log_monomial_bookkeeping() {
        let a = PolyLogSeries::monomial(q(1, 1), 1, 1, 6);
        let b = PolyLogSeries::monomial(q(1, 1), 1, 0, 6);
        let p = a.mul(&b);
        assert_eq!(p.coeff(2, 1), q(1, 1));
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn truncation_is_contravariant() {
        let a = poly(&[(1, 1), (2, 1)], 3);
        let b = poly(&[(1, 1), (3, 1)], 5);
        assert_eq!(a.mul(&b).order(), 3);
    }

    #[test]
    fn log_one_plus_r() {
        let a = poly(&[(1, 1), (1, 1)], 3);
        let l = a.log().unwrap();
        assert_eq!(l.coeff(1, 0), q(1, 1));
        assert_eq!(l.coeff(2, 0), q(-1, 2));
        assert_eq!(l.coeff(3, 0), q(1, 3));
        assert_eq!(l.coeff(0, 0), q(0, 1));
    }

    #[test]
    fn log_of_tilde_u_jets() {
        // log(1 + a r + b r^2/2) = a r + (b - a^2) r^2 / 2 + ...
        let (a, b) = (q(-3, 7), q(5, 11));
        let u = PolyLogSeries::from_coeffs(q(0, 1), &[q(1, 1), a.clone(), b.clone() / q(2, 1)], 2);
        let l = u.log().unwrap();
        assert_eq!(l.coeff(1, 0), a.clone());
        assert_eq!(l.coeff(2, 0), (b - a.clone() * a) / q(2, 1));
    }

    #[test]
    fn exp_log_round_trip() {
        let a = poly(&[(1, 1), (1, 1), (1, 1)], 6);
        let back = a.log().unwrap().exp().unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn log_rejects_non_unit() {
        let a = poly(&[(2, 1), (1, 1)], 4);
        assert!(matches!(a.log(), Err(Error::NonUnitLeading(_))));
        let b = poly(&[(0, 1), (1, 1)], 4);
        assert!(matches!(b.log(), Err(Error::NonUnitLeading(_))));
    }

    #[test]
    fn rpow_identity_case() {
        let w = PolyLogSeries::<f64>::zero(4);
        let p = PolyLogSeries::rpow(&w, &2.5).unwrap();
        assert_eq!(*p.base(), 2.5);
        assert_eq!(p.coeff(0, 0), 1.0);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn rpow_first_coefficient() {
        let w = poly(&[(0, 1), (3, 4), (1, 5)], 4);
        let alpha = q(7, 3);
        let p = PolyLogSeries::rpow(&w, &alpha).unwrap();
        assert_eq!(p.coeff(1, 0), alpha.clone() * q(3, 4));
        assert_eq!(p.base(), &alpha);
    }

    #[test]
    fn derivative_rules() {
        let a = PolyLogSeries::monomial(q(1, 1), 2, 1, 5);
        let d = a.derivative();
        assert_eq!(d.coeff(1, 1), q(2, 1));
        assert_eq!(d.coeff(1, 0), q(1, 1));
        let c = PolyLogSeries::constant(q(3, 1), 5);
        assert!(c.derivative().is_empty());
        let m = PolyLogSeries::constant(q(1, 1), 5);
        let mut m = m;
        m.base = q(1, 3);
        let dm = m.derivative();
        assert_eq!(dm.coeff(-1, 0), q(1, 3));
        assert_eq!(*dm.base(), q(1, 3));
    }

    #[test]
    fn recip_roundtrip() {
        let a = poly(&[(0, 1), (2, 1), (1, 1), (-1, 3)], 7);
        let inv = a.recip().unwrap();
        assert_eq!(inv.valuation(), -1);
        let one = a.mul(&inv);
        assert_eq!(one.coeff(0, 0), q(1, 1));
        for k in 1..=one.order() {
            assert_eq!(one.coeff(k, 0), q(0, 1), "k={k}");
        }
    }

    #[test]
    fn log_cap_lowers_order() {
        let l = PolyLogSeries::<Rat>::monomial(q(1, 1), 1, 2, 10);
        let p = l.mul(&PolyLogSeries::monomial(q(1, 1), 2, 1, 10));
        assert_eq!(p.order(), 2);
        assert!(p.is_empty());
    }

    #[test]
    fn compose_reversion_identity() {
        // x = r (1 + r) inverted, then composed back.
        let e = poly(&[(1, 1), (1, 1)], 6);
        let delta = e.sub(&PolyLogSeries::one(6)).unwrap();
        // r as function of x: iterate r = x / (1 + r)
        let mut d = PolyLogSeries::<Rat>::zero(6);
        for _ in 0..8 {
            let comp = e.compose_near_identity(&d).unwrap_or_else(|_| e.clone());
            d = comp.recip().unwrap().sub(&PolyLogSeries::one(6)).unwrap();
            if d.valuation() < 1 {
                d = PolyLogSeries::zero(6);
            }
        }
        let rx =
            PolyLogSeries::monomial(q(1, 1), 1, 0, 7).mul(&d.add(&PolyLogSeries::one(6)).unwrap());
        // x = r(1 + r) with r = rx
        let back = rx.mul(&rx.add(&PolyLogSeries::one(7)).unwrap());
        assert_eq!(back.coeff(1, 0), q(1, 1));
        for k in 2..=back.order() {
            assert_eq!(back.coeff(k, 0), q(0, 1), "k={k}");
        }
        let _ = delta;
    }

    #[test]
    fn json_round_trip() {
        let a = Series::Exact(poly(&[(1, 2), (-3, 5)], 4).mul_log());
        let back = Series::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
        let f = Series::Float(PolyLogSeries::from_coeffs(0.5, &[1.0, 0.25], 3));
        assert_eq!(Series::from_json(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn mixed_modes_rejected() {
        let a = Series::Exact(poly(&[(1, 1)], 2));
        let b = Series::Float(PolyLogSeries::one(2));
        assert!(matches!(a.mul(&b), Err(Error::ModeMismatch(_))));
        assert!(a.promote().mul(&b).is_ok());
    }

    #[test]
    fn integrate_inverts_derivative() {
        let mut a = poly(&[(0, 1), (2, 1), (-1, 3)], 6);
        a.insert(3, 1, q(5, 2));
        a.insert(4, 2, q(-1, 7));
        let back = a.integrate().unwrap().derivative();
        for k in 0..=5 {
            for j in 0..=2 {
                assert_eq!(back.coeff(k, j), a.coeff(k, j), "k={k} j={j}");
            }
        }
        // ∫ r^{-1} = log r
        let inv = PolyLogSeries::monomial(q(1, 1), -1, 0, 3)
            .integrate()
            .unwrap();
        assert_eq!(inv.coeff(0, 1), q(1, 1));
    }

    #[test]
    fn reversion_round_trip() {
        // y = x (1 + x + x^2 log x)
        let mut d = poly(&[(0, 1), (1, 1)], 6);
        d.insert(2, 1, q(1, 1));
        let eta = PolyLogSeries::revert_near_identity(&d).unwrap();
        let back = d.compose_near_identity(&eta).unwrap();
        // (1 + δ(x(y))) (1 + η(y)) = 1
        let one = PolyLogSeries::one(6);
        let prod = one.add(&back).unwrap().mul(&one.add(&eta).unwrap());
        for (k, j, c) in prod.terms() {
            if (k, j) != (0, 0) {
                assert!(Scalar::is_zero(c), "k={k} j={j} c={c}");
            }
        }
        assert_eq!(eta.coeff(1, 0), q(-1, 1));
    }
}
