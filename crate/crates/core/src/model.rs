//! Separable background geometries `dr² + Σ ψ_i(r)² dθ_i²` (torus slab) and
//! `dρ² + φ(ρ)² g_{S^n}` (warped ball), their boundary series and invariants.
//!
//! Coordinates: `r` is the distance to the boundary for the current metric.
//! A geometry may carry a radial conformal factor `e^{2Ω}` with Ω given as a
//! function of the *base* distance; the current distance is then
//! `r̃ = ∫ e^Ω dr` and `ψ̃ = e^Ω ψ`.

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, integrate};
use crate::scalar::{Jet, Scalar};
use crate::series::PolyLogSeries;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    TorusSlab,
    WarpedBall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Poly,
    /// `c0 + Σ_m a_m cos(m x) + b_m sin(m x)`, coefficients `[c0, a1, b1, a2, b2, ...]`.
    Trig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub basis: Basis,
    pub coeffs: Vec<f64>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl Profile {
    pub fn poly(c: &[f64]) -> Self {
        Profile {
            basis: Basis::Poly,
            coeffs: c.to_vec(),
        }
    }

    pub fn trig(c: &[f64]) -> Self {
        Profile {
            basis: Basis::Trig,
            coeffs: c.to_vec(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&c| c == 0.0)
    }

    /// `[φ, φ', ..., φ^{(m)}]` at x.
    pub fn derivs(&self, x: f64, m: usize) -> Vec<f64> {
        match self.basis {
            Basis::Poly => {
                let mut c = self.coeffs.clone();
                let mut out = Vec::with_capacity(m + 1);
                for _ in 0..=m {
                    out.push(c.iter().rev().fold(0.0, |acc, a| acc * x + a));
                    c = c
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(i, a)| i as f64 * a)
                        .collect();
                }
                out
            }
            Basis::Trig => (0..=m)
                .map(|k| {
                    let mut v = if k == 0 {
                        self.coeffs.first().copied().unwrap_or(0.0)
                    } else {
                        0.0
                    };
                    let shift = k as f64 * PI / 2.0;
                    for (i, pair) in self.coeffs[1.min(self.coeffs.len())..]
                        .chunks(2)
                        .enumerate()
                    {
                        let w = (i + 1) as f64;
                        let a = pair[0];
                        let b = pair.get(1).copied().unwrap_or(0.0);
                        let p = w.powi(k as i32);
                        v += p * (a * (w * x + shift).cos() + b * (w * x + shift).sin());
                    }
                    v
                })
                .collect(),
        }
    }

    /// Taylor coefficients of `φ(x0 + t)` through degree `deg`. Exact fields
    /// are supported for polynomials and for trig profiles about 0.
    pub fn taylor<T: Scalar>(&self, x0: f64, deg: usize) -> Result<Vec<T>> {
        let conv = |v: f64| T::from_f64(v).ok_or_else(|| Error::Unsupported("coefficient".into()));
        if !T::exact() {
            let d = self.derivs(x0, deg);
            return d
                .iter()
                .enumerate()
                .map(|(k, v)| conv(v / factorial(k)))
                .collect();
        }
        match self.basis {
            Basis::Poly => {
                let x = conv(x0)?;
                let c: Vec<T> = self
                    .coeffs
                    .iter()
                    .map(|&v| conv(v))
                    .collect::<Result<_>>()?;
                // repeated synthetic division gives the shifted coefficients
                let mut work = c;
                let mut out = Vec::new();
                for _ in 0..=deg {
                    if work.is_empty() {
                        out.push(T::zero());
                        continue;
                    }
                    let mut q = vec![T::zero(); work.len() - 1];
                    let mut acc = T::zero();
                    for i in (0..work.len()).rev() {
                        acc = acc * x.clone() + work[i].clone();
                        if i > 0 {
                            q[i - 1] = acc.clone();
                        }
                    }
                    out.push(acc);
                    work = q;
                }
                Ok(out)
            }
            Basis::Trig => {
                if x0 != 0.0 {
                    return Err(Error::Unsupported(
                        "exact trig Taylor coefficients only about 0".into(),
                    ));
                }
                let mut out = vec![T::zero(); deg + 1];
                out[0] = conv(self.coeffs.first().copied().unwrap_or(0.0))?;
                let mut fact = T::one();
                for k in 0..=deg {
                    if k > 0 {
                        fact = fact * T::from_i64(k as i64);
                    }
                    for (i, pair) in self.coeffs[1.min(self.coeffs.len())..]
                        .chunks(2)
                        .enumerate()
                    {
                        let w = (i + 1) as i64;
                        let a = conv(pair[0])?;
                        let b = conv(pair.get(1).copied().unwrap_or(0.0))?;
                        let wk = T::from_i64(w.pow(k as u32));
                        // d^k cos(wx)|0, d^k sin(wx)|0
                        let (ck, sk) = match k % 4 {
                            0 => (1, 0),
                            1 => (0, 1),
                            2 => (-1, 0),
                            _ => (0, -1),
                        };
                        let term = (a.scale_i64(ck) + b.scale_i64(sk)) * wk;
                        out[k] = out[k].clone() + term.try_div(&fact).unwrap();
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalFactor {
    #[serde(default)]
    pub basis: Basis,
    pub coeffs: Vec<f64>,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

/// On-disk geometry description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub kind: Kind,
    pub n: usize,
    pub profiles: Vec<Vec<f64>>,
    #[serde(default)]
    pub basis: Basis,
    #[serde(default)]
    pub symmetric: bool,
    /// Slab thickness (torus) or boundary radius ρ_b (ball); default 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conformal: Vec<ConformalFactor>,
}

impl GeometrySpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Intrinsic geometry of the slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Fiber {
    Flat,
    Sphere,
}

/// Current distance as a function of base distance, for nonconstant Ω.
#[derive(Debug)]
struct DistanceMap {
    breaks: Vec<f64>,
    cum: Vec<f64>,
    rule: (Vec<f64>, Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct ModelGeometry {
    spec: GeometrySpec,
    profiles: Vec<Profile>,
    omega: Vec<(Profile, f64)>,
    length: f64,
    map: Option<Arc<DistanceMap>>,
    /// Ω when it is constant.
    omega_const: Option<f64>,
}

/// ψ_i and its first three derivatives in the current distance.
#[derive(Clone, Debug)]
pub struct Local {
    pub psi: Vec<[f64; 4]>,
}

fn sphere_area(n: usize) -> f64 {
    // |S^0| = 2, |S^1| = 2π, |S^n| = 2π/(n-1) |S^{n-2}|
    let mut a = if n % 2 == 0 { 2.0 } else { 2.0 * PI };
    let mut k = if n % 2 == 0 { 0 } else { 1 };
    while k < n {
        k += 2;
        a *= 2.0 * PI / (k as f64 - 1.0);
    }
    a
}

impl ModelGeometry {
    /// Validate a spec (positivity, center condition, symmetry).
    pub fn new(spec: GeometrySpec) -> Result<Self> {
        let n = spec.n;
        if n < 2 {
            return Err(Error::Invalid(
                "boundary dimension must be at least 2".into(),
            ));
        }
        let length = spec.length.unwrap_or(1.0);
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Invalid("length must be positive".into()));
        }
        let profiles: Vec<Profile> = spec
            .profiles
            .iter()
            .map(|c| Profile {
                basis: spec.basis,
                coeffs: c.clone(),
            })
            .collect();
        match spec.kind {
            Kind::TorusSlab => {
                if profiles.len() != n {
                    return Err(Error::Invalid(format!(
                        "torus slab needs {n} profiles, got {}",
                        profiles.len()
                    )));
                }
            }
            Kind::WarpedBall => {
                if profiles.len() != 1 {
                    return Err(Error::Invalid("warped ball takes one profile".into()));
                }
            }
        }
        if profiles.iter().any(|p| p.coeffs.is_empty()) {
            return Err(Error::Invalid("empty profile".into()));
        }
        let omega: Vec<(Profile, f64)> = spec
            .conformal
            .iter()
            .map(|c| {
                (
                    Profile {
                        basis: c.basis,
                        coeffs: c.coeffs.clone(),
                    },
                    c.alpha,
                )
            })
            .collect();
        let mut g = ModelGeometry {
            spec,
            profiles,
            omega,
            length,
            map: None,
            omega_const: None,
        };
        g.validate()?;
        g.build_map()?;
        Ok(g)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::new(GeometrySpec::from_json(s)?)
    }

    fn validate(&self) -> Result<()> {
        let rb = self.base_extent();
        let samples = 200;
        match self.kind() {
            Kind::TorusSlab => {
                // the far half mirrors the near half when symmetric
                let top = if self.symmetric() { rb } else { self.length };
                for p in &self.profiles {
                    for i in 0..=samples {
                        let x = top * i as f64 / samples as f64;
                        if !self.symmetric() && i == samples {
                            continue;
                        }
                        let v = p.derivs(x, 0)[0];
                        if !(v > 0.0) {
                            return Err(Error::DegenerateMetric(format!(
                                "profile value {v} at r = {x}"
                            )));
                        }
                    }
                    if self.symmetric() {
                        for i in 0..=samples {
                            let x = self.length * i as f64 / samples as f64;
                            let a = p.derivs(x, 0)[0];
                            let b = p.derivs(self.length - x, 0)[0];
                            if (a - b).abs() > 1e-14 * a.abs().max(1.0) {
                                return Err(Error::Invalid(format!(
                                    "profile not symmetric: residual {:e}",
                                    (a - b).abs()
                                )));
                            }
                        }
                    }
                }
            }
            Kind::WarpedBall => {
                let p = &self.profiles[0];
                let d = p.derivs(0.0, 2);
                if d[0].abs() > 1e-12 || (d[1] - 1.0).abs() > 1e-12 || d[2].abs() > 1e-12 {
                    return Err(Error::SingularCenter(format!(
                        "need φ(0)=0, φ'(0)=1, φ''(0)=0; got {:?}",
                        d
                    )));
                }
                for i in 1..=samples {
                    let x = self.length * i as f64 / samples as f64;
                    let v = p.derivs(x, 0)[0];
                    if !(v > 0.0) {
                        return Err(Error::DegenerateMetric(format!("φ({x}) = {v}")));
                    }
                }
            }
        }
        // conformal factors must keep the far end smooth
        for (w, a) in &self.omega {
            let d = w.derivs(rb, 1)[1] * a;
            let needs_flat_end = self.kind() == Kind::WarpedBall || self.symmetric();
            if needs_flat_end && d.abs() > 1e-12 {
                return Err(Error::Invalid(format!(
                    "conformal factor must have zero slope at r = {rb}; got {d:e}"
                )));
            }
        }
        Ok(())
    }

    fn build_map(&mut self) -> Result<()> {
        if self.omega.iter().all(|(w, _)| w.is_constant()) {
            let c: f64 = self.omega.iter().map(|(w, a)| a * w.coeffs[0]).sum();
            self.omega_const = Some(c);
            self.map = None;
            return Ok(());
        }
        let rb = self.base_extent();
        let m = 64;
        let breaks: Vec<f64> = (0..=m).map(|i| rb * i as f64 / m as f64).collect();
        let rule = gauss_legendre(24);
        let mut cum = vec![0.0];
        for i in 0..m {
            let v = integrate(
                |x| self.omega_at(x)[0].exp(),
                breaks[i],
                breaks[i + 1],
                &rule,
            );
            cum.push(cum[i] + v);
        }
        if !cum[m].is_finite() || cum[m] <= 0.0 {
            return Err(Error::CollarTooSmall("rescaled distance not finite".into()));
        }
        self.map = Some(Arc::new(DistanceMap { breaks, cum, rule }));
        self.omega_const = None;
        Ok(())
    }

    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }
    pub fn n(&self) -> usize {
        self.spec.n
    }
    pub fn kind(&self) -> Kind {
        self.spec.kind
    }
    pub fn symmetric(&self) -> bool {
        self.spec.symmetric
    }
    pub fn fiber(&self) -> Fiber {
        match self.kind() {
            Kind::TorusSlab => Fiber::Flat,
            Kind::WarpedBall => Fiber::Sphere,
        }
    }
    pub fn is_rescaled(&self) -> bool {
        !self.omega.is_empty()
    }

    /// Distance from the boundary to the center / midplane in base metric.
    pub fn base_extent(&self) -> f64 {
        match self.kind() {
            Kind::TorusSlab => 0.5 * self.length,
            Kind::WarpedBall => self.length,
        }
    }

    /// Same in the current metric.
    pub fn extent(&self) -> f64 {
        self.to_current(self.base_extent())
    }

    /// Number of boundary components carried by the computations.
    pub fn components(&self) -> usize {
        match self.kind() {
            Kind::TorusSlab if self.symmetric() => 2,
            _ => 1,
        }
    }

    /// Ω and its first three derivatives at base distance r.
    pub fn omega_at(&self, r: f64) -> [f64; 4] {
        let mut o = [0.0; 4];
        for (w, a) in &self.omega {
            let d = w.derivs(r, 3);
            for k in 0..4 {
                o[k] += a * d[k];
            }
        }
        o
    }

    /// Base-coordinate ψ_i derivatives (order ≤ m) at base distance r.
    pub fn base_psi(&self, r: f64, m: usize) -> Vec<Vec<f64>> {
        match self.kind() {
            Kind::TorusSlab => self.profiles.iter().map(|p| p.derivs(r, m)).collect(),
            Kind::WarpedBall => {
                let d = self.profiles[0].derivs(self.length - r, m);
                let d: Vec<f64> = d
                    .iter()
                    .enumerate()
                    .map(|(k, v)| if k % 2 == 0 { *v } else { -v })
                    .collect();
                vec![d; self.n()]
            }
        }
    }

    /// Base distance → current distance.
    pub fn to_current(&self, r: f64) -> f64 {
        if let Some(c) = self.omega_const {
            return c.exp() * r;
        }
        let map = self.map.as_ref().expect("distance map");
        let m = map.breaks.len() - 1;
        let h = map.breaks[1];
        let i = ((r / h).floor() as usize).min(m - 1);
        map.cum[i] + integrate(|x| self.omega_at(x)[0].exp(), map.breaks[i], r, &map.rule)
    }

    /// Current distance → base distance.
    pub fn to_base(&self, rt: f64) -> f64 {
        if let Some(c) = self.omega_const {
            return (-c).exp() * rt;
        }
        let mut r = rt * (-self.omega_at(0.0)[0]).exp();
        for _ in 0..60 {
            let f = self.to_current(r) - rt;
            let step = f / self.omega_at(r)[0].exp();
            r -= step;
            if step.abs() < 1e-16 * r.abs().max(1e-300) {
                break;
            }
        }
        r
    }

    /// ψ_i and derivatives up to third order in the current distance.
    pub fn local(&self, rt: f64) -> Local {
        let r = self.to_base(rt);
        let base = self.base_psi(r, 4);
        if let Some(c) = self.omega_const {
            let e = c.exp();
            let psi = base
                .iter()
                .map(|d| [e * d[0], d[1], d[2] / e, d[3] / (e * e)])
                .collect();
            return Local { psi };
        }
        // Taylor jets in t = r' - r, then reparametrize by the current distance
        let om = self.omega_at(r);
        let order = 4;
        let oser = PolyLogSeries::from_coeffs(0.0, &[0.0, om[1], om[2] / 2.0, om[3] / 6.0], order);
        let speed = oser.exp().expect("exp").scale(&om[0].exp());
        let psis: Vec<PolyLogSeries<f64>> = base
            .iter()
            .map(|d| {
                let t = PolyLogSeries::from_coeffs(
                    0.0,
                    &[d[0], d[1], d[2] / 2.0, d[3] / 6.0, d[4] / 24.0],
                    order,
                );
                t.mul(&speed)
            })
            .collect();
        let out = reparametrize(&psis, &speed).expect("reparametrize");
        let psi = out
            .iter()
            .map(|s| {
                [
                    s.coeff(0, 0),
                    s.coeff(1, 0),
                    2.0 * s.coeff(2, 0),
                    6.0 * s.coeff(3, 0),
                ]
            })
            .collect();
        Local { psi }
    }

    /// Volume of one boundary component for the boundary metric k.
    pub fn boundary_volume(&self) -> f64 {
        let psi0: Vec<f64> = self.local(0.0).psi.iter().map(|d| d[0]).collect();
        match self.kind() {
            Kind::TorusSlab => psi0.iter().product(),
            Kind::WarpedBall => psi0[0].powi(self.n() as i32) * sphere_area(self.n()),
        }
    }

    /// Total boundary volume over the components carried.
    pub fn total_boundary_volume(&self) -> f64 {
        self.components() as f64 * self.boundary_volume()
    }

    /// Taylor series of ψ_i in the current distance at the boundary.
    pub fn psi_series<T: Scalar>(&self, order: i32) -> Result<Vec<PolyLogSeries<T>>> {
        let deg = order.max(0) as usize;
        let base: Vec<PolyLogSeries<T>> = match self.kind() {
            Kind::TorusSlab => self
                .profiles
                .iter()
                .map(|p| {
                    Ok(PolyLogSeries::from_coeffs(
                        T::zero(),
                        &p.taylor::<T>(0.0, deg)?,
                        order,
                    ))
                })
                .collect::<Result<_>>()?,
            Kind::WarpedBall => {
                let c = self.profiles[0].taylor::<T>(self.length, deg)?;
                let c: Vec<T> = c
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| if k % 2 == 0 { v } else { -v })
                    .collect();
                vec![PolyLogSeries::from_coeffs(T::zero(), &c, order); self.n()]
            }
        };
        if self.omega.is_empty() {
            return Ok(base);
        }
        let mut om = PolyLogSeries::<T>::zero(order);
        for (w, a) in &self.omega {
            let c = w.taylor::<T>(0.0, deg)?;
            let a = T::from_f64(*a).ok_or_else(|| Error::Unsupported("alpha".into()))?;
            om = om.add(&PolyLogSeries::from_coeffs(T::zero(), &c, order).scale(&a))?;
        }
        let speed = om.exp()?;
        let scaled: Vec<PolyLogSeries<T>> = base.iter().map(|p| p.mul(&speed)).collect();
        reparametrize(&scaled, &speed)
    }

    /// Geometry for `e^{2ω} ḡ`, ω given in this geometry's base distance.
    pub fn rescaled(&self, omega: &Profile, alpha: f64) -> Result<ModelGeometry> {
        let mut spec = self.spec.clone();
        spec.conformal.push(ConformalFactor {
            basis: omega.basis,
            coeffs: omega.coeffs.clone(),
            alpha,
        });
        ModelGeometry::new(spec)
    }
}

/// Re-express series `g(t)` in the variable τ with `dτ/dt = speed(t)`.
pub fn reparametrize<T: Scalar>(
    g: &[PolyLogSeries<T>],
    speed: &PolyLogSeries<T>,
) -> Result<Vec<PolyLogSeries<T>>> {
    let s0 = speed.coeff(0, 0);
    let inv = T::one()
        .try_div(&s0)
        .ok_or_else(|| Error::Precondition("zero speed".into()))?;
    let tau = speed.integrate()?;
    let order = tau.order() - 1;
    let delta = tau
        .shift(-1)
        .scale(&inv)
        .sub(&PolyLogSeries::one(order))?
        .truncate(order);
    // s0 · (1/s0) need not be exactly one in floating point
    let delta = delta.sub(&PolyLogSeries::constant(delta.coeff(0, 0), order))?;
    let eta = PolyLogSeries::revert_near_identity(&delta)?;
    let logs = g.iter().any(|s| s.max_log() > 0) || eta.max_log() > 0;
    if logs && s0 != T::one() {
        return Err(Error::Unsupported("log terms with non-unit speed".into()));
    }
    g.iter()
        .map(|s| {
            let c = s.compose_near_identity(&eta)?;
            // y = τ / s0
            let mut out = PolyLogSeries::new(c.base().clone(), c.order());
            let mut p = T::one();
            let mut last = 0;
            for (k, j, v) in c.terms() {
                while last < k {
                    p = p * inv.clone();
                    last += 1;
                }
                out.insert(k, j, v.clone() * p.clone());
            }
            Ok(out)
        })
        .collect()
}

/// Radial series of the background quantities at the boundary.
#[derive(Clone, Debug)]
pub struct BoundarySeries<T> {
    pub n: usize,
    pub fiber: Fiber,
    pub psi: Vec<PolyLogSeries<T>>,
    /// ψ_i'/ψ_i
    pub q: Vec<PolyLogSeries<T>>,
    /// ½ h^{μν} h'_{μν} = Σ ψ_i'/ψ_i
    pub p: PolyLogSeries<T>,
    /// ψ_i^{-2}
    pub inv_psi2: Vec<PolyLogSeries<T>>,
    /// sectional curvatures K(∂_r, ∂_i)
    pub k0: Vec<PolyLogSeries<T>>,
    /// sectional curvatures K(∂_i, ∂_j), i < j, row-major
    pub kij: Vec<Vec<PolyLogSeries<T>>>,
    pub rbar: PolyLogSeries<T>,
    pub ric00: PolyLogSeries<T>,
    /// mixed tangential Ricci R̄^i_i
    pub ric: Vec<PolyLogSeries<T>>,
    /// area density ratio Π ψ_i / ψ_i(0)
    pub jac: PolyLogSeries<T>,
}

impl<T: Scalar> BoundarySeries<T> {
    pub fn from_psi(psi: Vec<PolyLogSeries<T>>, fiber: Fiber) -> Result<Self> {
        let n = psi.len();
        let inv: Vec<PolyLogSeries<T>> = psi.iter().map(|p| p.recip()).collect::<Result<_>>()?;
        let dpsi: Vec<_> = psi.iter().map(|p| p.derivative()).collect();
        let ddpsi: Vec<_> = dpsi.iter().map(|p| p.derivative()).collect();
        let q: Vec<_> = (0..n).map(|i| dpsi[i].mul(&inv[i])).collect();
        let inv_psi2: Vec<_> = inv.iter().map(|p| p.mul(p)).collect();
        let k0: Vec<_> = (0..n).map(|i| ddpsi[i].mul(&inv[i]).neg()).collect();
        let mut kij = vec![vec![PolyLogSeries::zero(0); n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                kij[i][j] = match fiber {
                    Fiber::Flat => q[i].mul(&q[j]).neg(),
                    Fiber::Sphere => {
                        let d2 = dpsi[i].mul(&dpsi[i]);
                        let one = PolyLogSeries::one(d2.order());
                        one.sub(&d2)?.mul(&inv_psi2[i])
                    }
                };
            }
        }
        let mut p = q[0].clone();
        let mut ric00 = k0[0].clone();
        for i in 1..n {
            p = p.add(&q[i])?;
            ric00 = ric00.add(&k0[i])?;
        }
        let mut ric = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = k0[i].clone();
            for j in 0..n {
                if j != i {
                    r = r.add(&kij[i][j])?;
                }
            }
            ric.push(r);
        }
        let mut rbar = ric00.clone();
        for r in &ric {
            rbar = rbar.add(r)?;
        }
        let mut jac = PolyLogSeries::one(psi[0].order());
        for p in &psi {
            let c = p.coeff(0, 0);
            let unit = p.scale(
                &T::one()
                    .try_div(&c)
                    .ok_or_else(|| Error::DegenerateMetric("ψ(0) = 0".into()))?,
            );
            jac = jac.mul(&unit);
        }
        Ok(BoundarySeries {
            n,
            fiber,
            psi,
            q,
            p,
            inv_psi2,
            k0,
            kij,
            rbar,
            ric00,
            ric,
            jac,
        })
    }

    pub fn of(g: &ModelGeometry, order: i32) -> Result<Self> {
        Self::from_psi(g.psi_series::<T>(order)?, g.fiber())
    }

    /// Weighted tangential eigenvalue series `Σ μ_i ψ_i^{-2}`.
    pub fn lambda(&self, weights: &[T]) -> Result<PolyLogSeries<T>> {
        let mut out = PolyLogSeries::zero(self.inv_psi2[0].order());
        for (w, s) in weights.iter().zip(&self.inv_psi2) {
            if !w.is_zero() {
                out = out.add(&s.scale(w))?;
            }
        }
        Ok(out)
    }

    pub fn invariants(&self) -> BoundaryInvariants<T> {
        let n = self.n;
        let c0 = |s: &PolyLogSeries<T>| s.coeff(0, 0);
        let l: Vec<T> = self.q.iter().map(|s| -c0(s)).collect();
        let h = l.iter().cloned().fold(T::zero(), |a, b| a + b);
        let hn = h.try_div(&T::from_i64(n as i64)).unwrap();
        let lo: Vec<T> = l.iter().map(|x| x.clone() - hn.clone()).collect();
        let lo2 = lo.iter().fold(T::zero(), |a, x| a + x.clone() * x.clone());
        let lo3 = lo
            .iter()
            .fold(T::zero(), |a, x| a + x.clone() * x.clone() * x.clone());
        let (r, ric) = match self.fiber {
            Fiber::Flat => (T::zero(), vec![T::zero(); n]),
            Fiber::Sphere => {
                let k = c0(&self.inv_psi2[0]);
                (
                    k.scale_i64((n * (n - 1)) as i64),
                    vec![k.scale_i64(n as i64 - 1); n],
                )
            }
        };
        BoundaryInvariants {
            n,
            h,
            lo,
            lo_norm_sq: lo2,
            lo3,
            r,
            ric,
            rbar: c0(&self.rbar),
            rbar_ric: self.ric.iter().map(c0).collect(),
            d_rbar: self.rbar.coeff(1, 0),
            rbar_normal: self.k0.iter().map(c0).collect(),
            rbar00: c0(&self.ric00),
            d_rbar00: self.ric00.coeff(1, 0),
        }
    }
}

/// Boundary invariants; vectors hold diagonal entries with mixed indices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryInvariants<T> {
    pub n: usize,
    #[serde(rename = "H")]
    pub h: T,
    #[serde(rename = "Lo")]
    pub lo: Vec<T>,
    #[serde(rename = "LoNormSq")]
    pub lo_norm_sq: T,
    #[serde(rename = "Lo3")]
    pub lo3: T,
    #[serde(rename = "R")]
    pub r: T,
    #[serde(rename = "Ric")]
    pub ric: Vec<T>,
    #[serde(rename = "Rbar")]
    pub rbar: T,
    #[serde(rename = "RbarRic")]
    pub rbar_ric: Vec<T>,
    #[serde(rename = "dRbar")]
    pub d_rbar: T,
    #[serde(rename = "RbarNormal")]
    pub rbar_normal: Vec<T>,
    #[serde(rename = "Rbar00")]
    pub rbar00: T,
    #[serde(rename = "dRbar00")]
    pub d_rbar00: T,
}

impl<T: Scalar> BoundaryInvariants<T> {
    fn dot(a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .fold(T::zero(), |s, (x, y)| s + x.clone() * y.clone())
    }
    /// L̊^{μν} R̄_{μν}
    pub fn lo_rbar_ric(&self) -> T {
        Self::dot(&self.lo, &self.rbar_ric)
    }
    /// L̊^{μν} R_{μν}
    pub fn lo_ric(&self) -> T {
        Self::dot(&self.lo, &self.ric)
    }
    /// L̊^{μν} R̄_{0μν0}
    pub fn lo_rbar_normal(&self) -> T {
        Self::dot(&self.lo, &self.rbar_normal)
    }
    pub fn trace_lo(&self) -> T {
        self.lo.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    fn frac(&self, a: i64, b: i64) -> T {
        T::from_ratio(a, b)
    }

    /// Residual of the Gauss contraction identity for L̊ against R̄_{0μν0}.
    pub fn gauss_residual(&self) -> T {
        let n = self.n as i64;
        let rhs = self.lo_rbar_ric() - self.lo_ric()
            + self.frac(n - 2, n) * self.h.clone() * self.lo_norm_sq.clone()
            - self.lo3.clone();
        self.lo_rbar_normal() - rhs
    }

    /// Residual of the Codazzi-type identity for ∇̄_r R̄_00 (tangential
    /// derivative terms vanish on the models).
    pub fn codazzi_residual(&self) -> T {
        let n = self.n as i64;
        let h = self.h.clone();
        let rhs = self.frac(1, 2) * self.d_rbar.clone() - self.lo_rbar_ric()
            + self.frac(n - 1, 2 * n) * h.clone() * self.rbar.clone()
            - self.frac(1 + n, 2 * n) * h.clone() * self.r.clone()
            - self.frac(1 + n, 2 * n) * h.clone() * self.lo_norm_sq.clone()
            + self.frac(n * n - 1, 2 * n * n) * h.clone() * h.clone() * h;
        self.d_rbar00.clone() - rhs
    }

    pub fn to_f64(&self) -> BoundaryInvariants<f64> {
        let v = |x: &[T]| x.iter().map(|a| a.to_f64()).collect::<Vec<_>>();
        BoundaryInvariants {
            n: self.n,
            h: self.h.to_f64(),
            lo: v(&self.lo),
            lo_norm_sq: self.lo_norm_sq.to_f64(),
            lo3: self.lo3.to_f64(),
            r: self.r.to_f64(),
            ric: v(&self.ric),
            rbar: self.rbar.to_f64(),
            rbar_ric: v(&self.rbar_ric),
            d_rbar: self.d_rbar.to_f64(),
            rbar_normal: v(&self.rbar_normal),
            rbar00: self.rbar00.to_f64(),
            d_rbar00: self.d_rbar00.to_f64(),
        }
    }
}

pub fn boundary_invariants(g: &ModelGeometry) -> Result<BoundaryInvariants<f64>> {
    Ok(BoundarySeries::<f64>::of(g, 6)?.invariants())
}

/// Exact invariants when the profiles allow it.
pub fn boundary_invariants_exact(
    g: &ModelGeometry,
) -> Result<BoundaryInvariants<crate::scalar::Rat>> {
    Ok(BoundarySeries::<crate::scalar::Rat>::of(g, 6)?.invariants())
}

/// Pointwise curvature of the current metric at distance r (f64).
#[derive(Clone, Debug)]
pub struct PointCurvature {
    pub k0: Vec<f64>,
    pub kij: Vec<Vec<f64>>,
    pub rbar: f64,
    pub ric00: f64,
    pub ric: Vec<f64>,
    /// Σ ψ_i'/ψ_i
    pub p: f64,
}

pub fn point_curvature(fiber: Fiber, loc: &Local) -> PointCurvature {
    let n = loc.psi.len();
    let q: Vec<f64> = loc.psi.iter().map(|d| d[1] / d[0]).collect();
    let k0: Vec<f64> = loc.psi.iter().map(|d| -d[2] / d[0]).collect();
    let mut kij = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kij[i][j] = match fiber {
                    Fiber::Flat => -q[i] * q[j],
                    Fiber::Sphere => (1.0 - loc.psi[i][1].powi(2)) / loc.psi[i][0].powi(2),
                };
            }
        }
    }
    let ric00: f64 = k0.iter().sum();
    let ric: Vec<f64> = (0..n)
        .map(|i| k0[i] + (0..n).filter(|&j| j != i).map(|j| kij[i][j]).sum::<f64>())
        .collect();
    let rbar = ric00 + ric.iter().sum::<f64>();
    PointCurvature {
        k0,
        kij,
        rbar,
        ric00,
        ric,
        p: q.iter().sum(),
    }
}

/// Per-order residuals between the Taylor coefficients of `h_{μν}(r)` and
/// the curvature expressions of the Fermi expansion.
#[derive(Clone, Debug, Serialize)]
pub struct FermiReport {
    pub order: usize,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Christoffel symbols and Riemann tensor of a diagonal metric whose
/// components depend on x⁰ only, as jets in x⁰. Used as an independent
/// route to the normal curvature components.
struct DiagonalEngine {
    dim: usize,
    g: Vec<Jet<f64>>,
    gamma: Vec<Vec<Vec<Jet<f64>>>>,
}

fn jet_d(j: &Jet<f64>) -> Jet<f64> {
    let n = j.len();
    let mut c = vec![0.0; n];
    for k in 0..n - 1 {
        c[k] = (k + 1) as f64 * j.coeff(k + 1);
    }
    c[n - 1] = 0.0;
    Jet { c }
}

impl DiagonalEngine {
    fn new(g: Vec<Jet<f64>>) -> Self {
        let dim = g.len();
        let len = g[0].len();
        let zero = Jet::constant(0.0, len);
        let dg: Vec<Jet<f64>> = g.iter().map(jet_d).collect();
        let mut gamma = vec![vec![vec![zero.clone(); dim]; dim]; dim];
        // Γ^a_{bc} = ½ g^{aa}(∂_b g_{ac} + ∂_c g_{ab} − ∂_a g_{bc})
        let d = |a: usize, b: usize, c: usize| -> Jet<f64> {
            if a == 0 && b == c {
                dg[b].clone()
            } else {
                Jet::constant(0.0, len)
            }
        };
        for a in 0..dim {
            let inv = Jet::constant(1.0, len).try_div(&g[a]).unwrap();
            for b in 0..dim {
                for c in 0..dim {
                    let t = d(b, a, c) + d(c, a, b) - d(a, b, c);
                    gamma[a][b][c] = inv.clone() * t * Jet::constant(0.5, len);
                }
            }
        }
        DiagonalEngine { dim, g, gamma }
    }

    /// Riemann with the sign convention R_{ij} = R^k_{ijk}, all indices down.
    fn riemann(&self, a: usize, b: usize, c: usize, dd: usize) -> Jet<f64> {
        let len = self.g[0].len();
        let gm = &self.gamma;
        let pd = |j: &Jet<f64>, idx: usize| {
            if idx == 0 {
                jet_d(j)
            } else {
                Jet::constant(0.0, len)
            }
        };
        // standard R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce}Γ^e_{db} − Γ^a_{de}Γ^e_{cb}
        let mut v = pd(&gm[a][dd][b], c) - pd(&gm[a][c][b], dd);
        for e in 0..self.dim {
            v = v + gm[a][c][e].clone() * gm[e][dd][b].clone()
                - gm[a][dd][e].clone() * gm[e][c][b].clone();
        }
        -(self.g[a].clone() * v)
    }

    fn nabla0_riemann(&self, a: usize, b: usize, c: usize, dd: usize) -> Jet<f64> {
        let mut v = jet_d(&self.riemann(a, b, c, dd));
        for e in 0..self.dim {
            v = v
                - self.gamma[e][0][a].clone() * self.riemann(e, b, c, dd)
                - self.gamma[e][0][b].clone() * self.riemann(a, e, c, dd)
                - self.gamma[e][0][c].clone() * self.riemann(a, b, e, dd)
                - self.gamma[e][0][dd].clone() * self.riemann(a, b, c, e);
        }
        v
    }
}

/// Compare the Taylor coefficients of h_{μμ} = ψ_μ² with the Fermi
/// expansion built from the independent Christoffel engine. For the ball
/// the engine sees the flat-fiber metric `dr² + ψ² Σ dy²`, which shares
/// every normal component entering the expansion through third order.
pub fn fermi_check(g: &ModelGeometry, order: usize) -> Result<Vec<FermiReport>> {
    let order = order.clamp(1, 3);
    let psi = g.psi_series::<f64>(5)?;
    let n = g.n();
    let len = 5;
    let mut metric = vec![Jet::constant(1.0, len)];
    for p in &psi {
        let j = Jet {
            c: (0..len).map(|k| p.coeff(k as i32, 0)).collect(),
        };
        metric.push(j.clone() * j);
    }
    let eng = DiagonalEngine::new(metric.clone());
    let mut reports = Vec::new();
    for m in 1..=order {
        let mut res = Vec::with_capacity(n);
        for mu in 1..=n {
            let direct = metric[mu].coeff(m);
            let k = metric[mu].coeff(0);
            let l = eng.gamma[0][mu][mu].coeff(0);
            let r0mm0 = eng.riemann(0, mu, mu, 0).coeff(0);
            let expansion = match m {
                1 => -2.0 * l,
                2 => l * l / k - r0mm0,
                _ => {
                    let nab = eng.nabla0_riemann(0, mu, mu, 0).coeff(0);
                    // L^σ_(μ R̄_ν)00σ for diagonal data
                    let mix = (l / k) * eng.riemann(mu, 0, 0, mu).coeff(0);
                    -(nab - 4.0 * mix) / 3.0
                }
            };
            res.push((direct - expansion).abs());
        }
        let max = res.iter().cloned().fold(0.0, f64::max);
        reports.push(FermiReport {
            order: m,
            residuals: res,
            max_residual: max,
        });
    }
    Ok(reports)
}

/// Rescale by `e^{2ω}` (ω in the base distance of `g`) and return the new
/// geometry with its invariants.
pub fn conformal_rescale(
    g: &ModelGeometry,
    omega: &Profile,
) -> Result<(ModelGeometry, BoundaryInvariants<f64>)> {
    let out = g.rescaled(omega, 1.0)?;
    let inv = boundary_invariants(&out)?;
    Ok((out, inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rat};

    pub fn torus2() -> ModelGeometry {
        ModelGeometry::new(GeometrySpec {
            kind: Kind::TorusSlab,
            n: 2,
            profiles: vec![vec![1.0, 1.0], vec![1.0, -1.0]],
            basis: Basis::Poly,
            symmetric: false,
            length: None,
            conformal: vec![],
        })
        .unwrap()
    }

    fn ball(n: usize, coeffs: Vec<f64>, basis: Basis) -> ModelGeometry {
        ModelGeometry::new(GeometrySpec {
            kind: Kind::WarpedBall,
            n,
            profiles: vec![coeffs],
            basis,
            symmetric: false,
            length: None,
            conformal: vec![],
        })
        .unwrap()
    }

    #[test]
    fn torus_invariants_exact() {
        let inv = boundary_invariants_exact(&torus2()).unwrap();
        assert_eq!(inv.lo, vec![rat(-1, 1), rat(1, 1)]);
        assert_eq!(inv.h, rat(0, 1));
        assert_eq!(inv.lo_norm_sq, rat(2, 1));
        assert_eq!(inv.rbar, rat(2, 1));
        assert_eq!(inv.trace_lo(), rat(0, 1));
    }

    #[test]
    fn euclidean_ball_invariants() {
        let inv = boundary_invariants_exact(&ball(3, vec![0.0, 1.0], Basis::Poly)).unwrap();
        assert_eq!(inv.h, rat(3, 1));
        assert_eq!(inv.lo_norm_sq, rat(0, 1));
        assert_eq!(inv.r, rat(6, 1));
        assert_eq!(inv.rbar, rat(0, 1));
    }

    #[test]
    fn contraction_identities_hold() {
        let gs = vec![
            torus2(),
            ball(2, vec![0.0, 1.0, 0.0, 0.3], Basis::Poly),
            ball(3, vec![0.0, 0.0, 1.0], Basis::Trig),
        ];
        for g in gs {
            let inv = boundary_invariants(&g).unwrap();
            assert!(inv.gauss_residual().abs() < 1e-12);
            assert!(
                inv.codazzi_residual().abs() < 1e-12,
                "{}",
                inv.codazzi_residual()
            );
        }
        let exact: BoundaryInvariants<Rat> = boundary_invariants_exact(&ball(
            3,
            vec![0.0, 1.0, 0.0, -0.25, 0.0, 0.125],
            Basis::Poly,
        ))
        .unwrap();
        assert_eq!(exact.codazzi_residual(), rat(0, 1));
        assert_eq!(exact.gauss_residual(), rat(0, 1));
    }

    #[test]
    fn lambda_for_torus_mode() {
        let g = torus2();
        let bs = BoundarySeries::<f64>::of(&g, 4).unwrap();
        let w = [(2.0 * PI).powi(2), 0.0];
        let lam = bs.lambda(&w).unwrap();
        let r = 0.01;
        let want = (2.0 * PI / (1.0 + r)).powi(2);
        assert!((lam.eval(r) - want).abs() < 1e-6);
    }

    #[test]
    fn degenerate_and_singular() {
        let bad = GeometrySpec {
            kind: Kind::TorusSlab,
            n: 2,
            profiles: vec![vec![-1.0, 1.0], vec![1.0]],
            basis: Basis::Poly,
            symmetric: false,
            length: None,
            conformal: vec![],
        };
        assert!(matches!(
            ModelGeometry::new(bad),
            Err(Error::DegenerateMetric(_))
        ));
        let sing = GeometrySpec {
            kind: Kind::WarpedBall,
            n: 2,
            profiles: vec![vec![0.1, 1.0]],
            basis: Basis::Poly,
            symmetric: false,
            length: None,
            conformal: vec![],
        };
        assert!(matches!(
            ModelGeometry::new(sing),
            Err(Error::SingularCenter(_))
        ));
    }

    #[test]
    fn fermi_residuals_small() {
        for g in [torus2(), ball(3, vec![0.0, 0.0, 1.0], Basis::Trig)] {
            let rep = fermi_check(&g, 3).unwrap();
            assert_eq!(rep[0].max_residual, 0.0);
            for r in rep {
                assert!(r.max_residual < 1e-12, "{:?}", r);
            }
        }
    }

    #[test]
    fn constant_rescale_scales_invariants() {
        let g = torus2();
        let c = 0.3;
        let (g2, inv2) = conformal_rescale(&g, &Profile::poly(&[c])).unwrap();
        let inv = boundary_invariants(&g).unwrap();
        assert!((inv2.lo_norm_sq - (-2.0 * c).exp() * inv.lo_norm_sq).abs() < 1e-13);
        assert!((g2.boundary_volume() - (2.0 * c).exp()).abs() < 1e-13);
    }

    #[test]
    fn linear_rescale_shifts_mean_curvature() {
        let g = ball(2, vec![0.0, 1.0], Basis::Poly);
        let a = 0.4;
        // ω = a r near the boundary, flattened at the center
        let w = Profile::poly(&[0.0, a, -a / 2.0]);
        let (_, inv2) = conformal_rescale(&g, &w).unwrap();
        assert!((inv2.h - (2.0 - 2.0 * a)).abs() < 1e-12, "{}", inv2.h);
    }

    #[test]
    fn rescale_round_trip() {
        let g = ball(3, vec![0.0, 1.0, 0.0, 0.2], Basis::Poly);
        let w = Profile::poly(&[0.1, 0.3, -0.15]);
        let there = g.rescaled(&w, 1.0).unwrap();
        let back = there.rescaled(&w, -1.0).unwrap();
        let a = boundary_invariants(&g).unwrap();
        let b = boundary_invariants(&back).unwrap();
        assert!((a.h - b.h).abs() < 1e-12);
        assert!((a.rbar - b.rbar).abs() < 1e-12);
        assert!((a.d_rbar - b.d_rbar).abs() < 1e-12);
        let (la, lb) = (g.local(0.37), back.local(0.37));
        for k in 0..4 {
            assert!((la.psi[0][k] - lb.psi[0][k]).abs() < 1e-12);
        }
        // pointwise: rescaled ψ̃(r̃(r)) = e^{ω(r)} ψ(r)
        let r = 0.25;
        let rt = there.to_current(r);
        let want = w.derivs(r, 0)[0].exp() * g.base_psi(r, 0)[0][0];
        assert!((there.local(rt).psi[0][0] - want).abs() < 1e-13);
    }

    #[test]
    fn trig_taylor_exact() {
        let p = Profile::trig(&[0.0, 0.0, 1.0]);
        let t: Vec<Rat> = p.taylor(0.0, 5).unwrap();
        assert_eq!(
            t,
            vec![
                rat(0, 1),
                rat(1, 1),
                rat(0, 1),
                rat(-1, 6),
                rat(0, 1),
                rat(1, 120)
            ]
        );
        let d = p.derivs(0.3, 3);
        assert!((d[3] + 0.3f64.cos()).abs() < 1e-15);
    }
}
