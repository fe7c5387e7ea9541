//! End-to-end checks of the global identities: energy vs total Q, the
//! renormalized volume vs 𝒮, the conformal primitive, Gauss–Bonnet and
//! the umbilic invariant, plus the constant-rescale covariance suite.
//!
//! Closed forms built from boundary invariants are evaluated in the
//! geodesic gauge ĝ̄ = r̂² g, where they hold with the cut-off r̂ > ε. The
//! ḡ-gauge version of the volume identity is checked separately.

use crate::constants::residue_c;
use crate::error::{Error, Result};
use crate::model::{
    point_curvature, BoundaryInvariants, BoundarySeries, Kind, ModelGeometry, Profile,
};
use crate::normalform::{geodesic_gauge, GeodesicGauge};
use crate::numerics::{gauss_legendre, integrate, lstsq};
use crate::scalar::Scalar;
use crate::scattering::{
    a_coefficients, q_curvature, residue_extract, s_derivative, DerivativeReport, Gauge, Mode,
    QReport, Scatterer,
};
use crate::series::PolyLogSeries;
use crate::yamabe::{density_series, sy_global_solve, volume_expansion, SYSolution, VolumeLedger};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

pub const TOL_B: f64 = 1e-4;
pub const TOL_C: f64 = 1e-4;
pub const TOL_C_INTERNAL: f64 = 1e-8;
pub const TOL_D: f64 = 1e-3;
pub const TOL_E_BALL: f64 = 1e-3;
pub const TOL_E: f64 = 1e-2;
pub const TOL_F: f64 = 1e-4;
pub const TOL_COV: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct VerifyConfig {
    pub bvp_tol: f64,
    pub budget_scale: f64,
    pub alpha_step: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            bvp_tol: 1e-10,
            budget_scale: 1.0,
            alpha_step: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    fn new(value: f64, error: f64) -> Self {
        Estimate { value, error }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub artifact: String,
    pub diagnostics: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub check: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub residual: f64,
    /// budget_scale · (tolerance · scale + lhs.error + rhs.error)
    pub budget: f64,
    pub tolerance: f64,
    pub scale: f64,
    pub budget_scale: f64,
    pub verdict: Verdict,
    pub provenance: Vec<Provenance>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl IdentityReport {
    fn build(
        check: &str,
        lhs: Estimate,
        rhs: Estimate,
        tolerance: f64,
        scale: f64,
        budget_scale: f64,
        provenance: Vec<Provenance>,
        extra: serde_json::Value,
    ) -> Self {
        let residual = (lhs.value - rhs.value).abs();
        let budget = budget_scale * (tolerance * scale + lhs.error + rhs.error);
        let verdict = if residual <= budget && residual.is_finite() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        IdentityReport {
            check: check.into(),
            lhs,
            rhs,
            residual,
            budget,
            tolerance,
            scale,
            budget_scale,
            verdict,
            provenance,
            extra,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// One converged pipeline: Yamabe solve, Q, 𝒮, gauge and volume ledger.
pub struct Pipeline {
    pub g: ModelGeometry,
    pub sol: SYSolution,
    pub q: QReport,
    pub s_deriv: DerivativeReport,
    pub gauge: GeodesicGauge,
    pub ledger: VolumeLedger,
}

impl Pipeline {
    pub fn new(g: ModelGeometry, tol: f64) -> Result<Pipeline> {
        let sol = sy_global_solve(&g, tol)?;
        let (q, s_deriv) = {
            let sc = Scatterer::new(&g, &sol)?;
            (q_curvature(&sc)?, s_derivative(&sc)?)
        };
        let gauge = geodesic_gauge(&sol, &g)?;
        let ledger = volume_expansion(&sol, &g)?;
        Ok(Pipeline {
            g,
            sol,
            q,
            s_deriv,
            gauge,
            ledger,
        })
    }

    /// Total boundary volume over the components carried.
    pub fn area(&self) -> f64 {
        self.g.total_boundary_volume()
    }

    fn c_n(&self) -> f64 {
        Scalar::to_f64(&residue_c(self.g.n() as u32, self.g.n() as u32))
    }

    fn provenance(&self) -> Vec<Provenance> {
        vec![
            Provenance {
                artifact: "SYSolution".into(),
                diagnostics: serde_json::json!({
                    "residual_norm": self.sol.residual_norm,
                    "c": self.sol.c,
                    "lcal": self.sol.lcal,
                    "r0": self.sol.r0,
                }),
            },
            Provenance {
                artifact: "VolumeLedger".into(),
                diagnostics: serde_json::to_value(&self.ledger.fit_diagnostics).unwrap_or_default(),
            },
            Provenance {
                artifact: "QReport".into(),
                diagnostics: serde_json::to_value(&self.q).unwrap_or_default(),
            },
            Provenance {
                artifact: "SDerivative".into(),
                diagnostics: serde_json::json!({
                    "value": self.s_deriv.value,
                    "error": self.s_deriv.error,
                }),
            },
        ]
    }

    /// V̂ − V: change of the finite part when the cut-off r > ε is replaced
    /// by r̂ > ε, from the divergent terms of the volume density.
    pub fn hat_volume_shift(&self) -> Result<f64> {
        let anchor =
            self.sol.anchor.as_ref().ok_or_else(|| {
                Error::Precondition("volume needs a converged global solve".into())
            })?;
        let n = self.g.n() as i32;
        let dens = density_series(&self.g, anchor)?.shift(-n - 1);
        Ok(self.area() * cutoff_shift(&dens, &self.gauge.series.eta)?)
    }
}

/// Constant-term change of f.p.∫_{r>ε} ρ dr when the cut-off becomes
/// r̂ > ε, with r = r̂(1 + η(r̂)). Only the r^{−m}, m ≥ 2, terms contribute.
pub fn cutoff_shift(rho: &PolyLogSeries<f64>, eta: &PolyLogSeries<f64>) -> Result<f64> {
    let mut out = 0.0;
    for (k, j, a) in rho.terms() {
        let m = -(k + *rho.base() as i32);
        if m < 2 || *a == 0.0 {
            continue;
        }
        if j > 0 {
            return Err(Error::Unsupported("log term in the divergent part".into()));
        }
        let one = PolyLogSeries::one(eta.order()).with_log_cap(eta.log_cap());
        let p = one.add(eta)?.powi(1 - m)?;
        out += a / (m - 1) as f64 * p.coeff(m - 1, 0);
    }
    Ok(out)
}

fn quad(f: impl Fn(f64) -> f64, from: f64, top: f64) -> f64 {
    let rule = gauss_legendre(24);
    let mut a = from;
    let mut total = 0.0;
    while a < top {
        let b = (a * 1.5).max(a + 1e-3).min(a + 0.05 * top).min(top);
        total += integrate(&f, a, b, &rule);
        a = b;
    }
    total
}

// ---------------------------------------------------------------- log coefficient

/// ℰ from the volume ledger against 2c_n ∮Q, Q from the scattering ladder.
pub fn check_thm_b(p: &Pipeline, cfg: &VerifyConfig) -> IdentityReport {
    let cn = p.c_n();
    let area = p.area();
    let l = &p.ledger;
    let lhs = Estimate::new(l.energy, (l.energy - l.fit_diagnostics.energy_fit).abs());
    let rhs = Estimate::new(2.0 * cn * p.q.q * area, 2.0 * p.q.error * area);
    IdentityReport::build(
        "B",
        lhs,
        rhs,
        TOL_B,
        rhs.value.abs().max(area * 1e-3),
        cfg.budget_scale,
        p.provenance(),
        serde_json::json!({
            "normalization": "E = 2 c_n oint Q",
            "c_n": cn,
            "oint_Q": p.q.q * area,
        }),
    )
}

// ---------------------------------------------------------------- renormalized volume

/// Pieces of the volume identity in one gauge.
#[derive(Clone, Debug, Serialize)]
pub struct VolumeTerms {
    pub gauge: Gauge,
    /// −∮𝒮
    pub s_term: f64,
    /// −(1/n) Σ_j j a_j' w_{n−j}, per unit boundary volume
    pub a_sum: f64,
    /// (1/n)(w_n − 2c_n Q), per unit boundary volume
    pub energy_term: f64,
    pub total: f64,
}

fn volume_terms(p: &Pipeline, gauge: Gauge, s: f64) -> Result<VolumeTerms> {
    let n = p.g.n();
    let cn = p.c_n();
    let a = a_coefficients(&p.g, gauge)?;
    // w = coefficients of the area factor of {r = ε} in g, times r^{n−1}
    let w: Vec<f64> = match gauge {
        Gauge::Hat => match &p.gauge.exact {
            Some(e) => (0..=n as i32)
                .map(|j| Scalar::to_f64(&e.hat.jac.coeff(j, 0)))
                .collect(),
            None => (0..=n as i32)
                .map(|j| p.gauge.series.hat.jac.coeff(j, 0))
                .collect(),
        },
        Gauge::Bar => {
            let ut = p
                .sol
                .anchor
                .as_ref()
                .ok_or_else(|| Error::Precondition("needs a global solve".into()))?;
            let bs = BoundarySeries::<f64>::of(&p.g, ut.order() + 1)?;
            let jac = bs.jac.with_log_cap(ut.log_cap());
            let ws = ut.powi(1 - n as i32)?.mul(&jac);
            (0..=n as i32).map(|j| ws.coeff(j, 0)).collect()
        }
    };
    let q_local = -a.value[n - 1] / cn;
    let sum: f64 = (1..=n).map(|j| j as f64 * a.d1[j - 1] * w[n - j]).sum();
    let a_sum = -sum / n as f64;
    let energy_term = (w[n] - 2.0 * cn * q_local) / n as f64;
    let area = p.area();
    Ok(VolumeTerms {
        gauge,
        s_term: -s * area,
        a_sum: a_sum * area,
        energy_term: energy_term * area,
        total: -s * area + (a_sum + energy_term) * area,
    })
}

/// Specialized closed forms of the volume identity in the geodesic gauge,
/// per unit boundary volume, without the −𝒮 term.
pub fn volume_closed_form(hat: &BoundaryInvariants<f64>) -> Result<f64> {
    let (h, r, rb, lo2) = (hat.h, hat.r, hat.rbar, hat.lo_norm_sq);
    match hat.n {
        2 => Ok(-(8.0 * r - 4.0 * rb - 8.0 * lo2 - 3.0 * h * h) / 96.0),
        3 => {
            // tangential derivative terms vanish on the models
            let (lap_h, div_div_lo) = (0.0, 0.0);
            Ok(-13.0 / 432.0 * h * r
                + 5.0 / 1296.0 * h * rb
                + h.powi(3) / 162.0
                + 25.0 / 432.0 * h * lo2
                - lap_h / 72.0
                + div_div_lo / 24.0
                + hat.lo_rbar_ric() / 24.0
                - hat.lo_ric() / 12.0
                + hat.d_rbar / 144.0)
        }
        n => Err(Error::Unsupported(format!(
            "volume closed form for n = {n}"
        ))),
    }
}

/// The volume identity: hat-gauge general assembly and closed form against
/// V̂, the internal agreement of the two, and the ḡ-gauge assembly against V.
pub fn check_thm_c(p: &Pipeline, cfg: &VerifyConfig) -> Result<Vec<IdentityReport>> {
    let n = p.g.n();
    if !(2..=3).contains(&n) {
        return Err(Error::Unsupported(format!("volume identity for n = {n}")));
    }
    let s = p.s_deriv.value;
    let area = p.area();
    let s_err = p.s_deriv.error * area;
    let l = &p.ledger;
    let v_err = (l.finite_part - l.fit_diagnostics.finite_part_fit).abs();
    let shift = p.hat_volume_shift()?;
    let v_hat = l.finite_part + shift;

    let hat = volume_terms(p, Gauge::Hat, s)?;
    let bar = volume_terms(p, Gauge::Bar, s)?;
    let closed = -s * area + volume_closed_form(&p.gauge.hat)? * area;
    let scale = v_hat.abs().max(s.abs() * area).max(area * 1e-3);

    let mut prov = p.provenance();
    prov.push(Provenance {
        artifact: "ACoefficients".into(),
        diagnostics: serde_json::json!({
            "hat": hat,
            "bar": bar,
        }),
    });
    let extra = serde_json::json!({
        "V": l.finite_part,
        "V_hat": v_hat,
        "cutoff_shift": shift,
        "closed_form": closed,
    });
    Ok(vec![
        IdentityReport::build(
            "C",
            Estimate::new(v_hat, v_err),
            Estimate::new(hat.total, s_err),
            TOL_C,
            scale,
            cfg.budget_scale,
            prov.clone(),
            extra.clone(),
        ),
        IdentityReport::build(
            "C.closed_form",
            Estimate::new(hat.total, 0.0),
            Estimate::new(closed, 0.0),
            TOL_C_INTERNAL,
            scale,
            cfg.budget_scale,
            prov.clone(),
            extra.clone(),
        ),
        IdentityReport::build(
            "C.bar_gauge",
            Estimate::new(l.finite_part, v_err),
            Estimate::new(bar.total, s_err),
            TOL_C,
            l.finite_part.abs().max(scale),
            cfg.budget_scale,
            prov,
            extra,
        ),
    ])
}

// ---------------------------------------------------------------- conformal primitive

fn oint_s(g: &ModelGeometry, tol: f64) -> Result<(f64, f64)> {
    let sol = sy_global_solve(g, tol)?;
    let sc = Scatterer::new(g, &sol)?;
    let d = s_derivative(&sc)?;
    let a = g.total_boundary_volume();
    Ok((d.value * a, d.error * a))
}

/// d/dα ∮𝒮 dv over e^{2αω}ḡ by centered differences (steps h and h/2,
/// Richardson) against −2c_n ∮Q ω|_M.
pub fn check_thm_d(
    p: &Pipeline,
    omega: &Profile,
    label: &str,
    cfg: &VerifyConfig,
) -> Result<IdentityReport> {
    let h = cfg.alpha_step;
    if !(1e-3..=0.2).contains(&h) {
        return Err(Error::StepSize(format!(
            "alpha step {h} outside [1e-3, 0.2]"
        )));
    }
    let alphas = [h, -h, h / 2.0, -h / 2.0];
    let vals: Vec<(f64, f64)> = alphas
        .par_iter()
        .map(|&a| oint_s(&p.g.rescaled(omega, a)?, cfg.bvp_tol))
        .collect::<Result<Vec<_>>>()?;
    let d1 = (vals[0].0 - vals[1].0) / (2.0 * h);
    let d2 = (vals[2].0 - vals[3].0) / h;
    let lhs = (4.0 * d2 - d1) / 3.0;
    let noise: f64 = vals.iter().map(|v| v.1).sum::<f64>() / h;
    let lhs_err = (d2 - d1).abs() / 3.0 + noise;
    if !lhs.is_finite() {
        return Err(Error::StepSize("non-finite difference quotient".into()));
    }
    let w0 = omega.derivs(0.0, 0)[0];
    let cn = p.c_n();
    let area = p.area();
    let rhs = -2.0 * cn * p.q.q * w0 * area;
    let rhs_err = 2.0 * cn.abs() * p.q.error * w0.abs() * area;
    Ok(IdentityReport::build(
        &format!("D.{label}"),
        Estimate::new(lhs, lhs_err),
        Estimate::new(rhs, rhs_err),
        TOL_D,
        rhs.abs().max(area * 1e-3),
        cfg.budget_scale,
        p.provenance(),
        serde_json::json!({
            "alpha_step": h,
            "omega": omega,
            "omega_boundary": w0,
            "difference_quotients": [d1, d2],
        }),
    ))
}

// ---------------------------------------------------------------- Gauss-Bonnet

#[derive(Clone, Debug, Serialize)]
pub struct FinitePartFit {
    pub condition: f64,
    pub residual: f64,
    pub finite_part_fit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GaussBonnetLedger {
    #[serde(rename = "weylSq")]
    pub weyl_sq: f64,
    #[serde(rename = "einsteinFP")]
    pub einstein_fp: f64,
    #[serde(rename = "einsteinFit")]
    pub einstein_fit: FinitePartFit,
    #[serde(rename = "calC")]
    pub cal_c: f64,
    #[serde(rename = "sTerm")]
    pub s_term: f64,
    pub chi: i32,
}

impl GaussBonnetLedger {
    /// ¼∫|W|² − ½ f.p.∫|E|² + ∮(−6𝒮 + 𝒞).
    pub fn total(&self) -> f64 {
        0.25 * self.weyl_sq - 0.5 * self.einstein_fp + self.s_term + self.cal_c
    }
    pub fn term_scale(&self) -> f64 {
        [
            0.25 * self.weyl_sq,
            0.5 * self.einstein_fp,
            self.s_term,
            self.cal_c,
        ]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// The boundary term 𝒞 of the four-dimensional Gauss–Bonnet formula.
pub fn cal_c(inv: &BoundaryInvariants<f64>) -> f64 {
    let (h, r, rb, lo2) = (inv.h, inv.r, inv.rbar, inv.lo_norm_sq);
    let div_div_lo = 0.0;
    -11.0 / 36.0 * h * r
        + rb * h / 108.0
        + 5.0 / 108.0 * h.powi(3)
        + 389.0 / 144.0 * h * lo2
        + 0.25 * div_div_lo
        + 23.0 / 6.0 * inv.lo_rbar_ric()
        - 17.0 / 3.0 * inv.lo_ric()
        + inv.d_rbar / 12.0
        - 2.0 / 3.0 * inv.lo3
}

/// |W|²_ḡ · J at base distance r; |W|² dv is conformally invariant in
/// dimension four.
fn weyl_density(g: &ModelGeometry, r: f64) -> f64 {
    let loc = g.local(r);
    let pc = point_curvature(g.fiber(), &loc);
    let n = g.n();
    let dim = (n + 1) as f64;
    let mut rm = 0.0;
    for i in 0..n {
        rm += pc.k0[i] * pc.k0[i];
        for j in i + 1..n {
            rm += pc.kij[i][j] * pc.kij[i][j];
        }
    }
    let ric2 = pc.ric00 * pc.ric00 + pc.ric.iter().map(|x| x * x).sum::<f64>();
    let w2 =
        4.0 * rm - 4.0 / (dim - 2.0) * ric2 + 2.0 * pc.rbar * pc.rbar / ((dim - 1.0) * (dim - 2.0));
    w2 * jacobian(g, r)
}

fn jacobian(g: &ModelGeometry, r: f64) -> f64 {
    let p: f64 = g.local(r).psi.iter().map(|d| d[0]).product();
    let p0: f64 = g.local(0.0).psi.iter().map(|d| d[0]).product();
    p / p0
}

/// |E|²_g dv_g / dr per unit boundary volume, E the trace-free Ricci of
/// g = u^{−2}ḡ: E = Ric̊_ḡ + (N−2) u^{−1} (∇̄²u)̊ in dimension N.
fn einstein_density(g: &ModelGeometry, sol: &SYSolution, r: f64) -> f64 {
    let loc = g.local(r);
    let pc = point_curvature(g.fiber(), &loc);
    let n = g.n();
    let dim = (n + 1) as f64;
    let (a, b, c) = sol.eval(r);
    let u = r * a;
    let du = a + r * b;
    let ddu = 2.0 * b + r * c;
    let q: Vec<f64> = loc.psi.iter().map(|d| d[1] / d[0]).collect();
    let lap = ddu + q.iter().sum::<f64>() * du;
    let tr = (pc.rbar + (dim - 2.0) * lap / u) / dim;
    let e0 = pc.ric00 + (dim - 2.0) * ddu / u - tr;
    let mut s = e0 * e0;
    for i in 0..n {
        let e = pc.ric[i] + (dim - 2.0) * q[i] * du / u - tr;
        s += e * e;
    }
    s * jacobian(g, r)
}

/// The same density as a boundary series (leading order r^{−2}).
fn einstein_series(g: &ModelGeometry, ut: &PolyLogSeries<f64>) -> Result<PolyLogSeries<f64>> {
    let n = g.n();
    let dim = (n + 1) as i64;
    let cap = ut.log_cap();
    let k = ut.order();
    let bs = BoundarySeries::<f64>::of(g, k + 2)?;
    let cap_of = |s: &PolyLogSeries<f64>| s.clone().with_log_cap(cap).truncate(k);
    let u = ut.shift(1);
    let du = u.derivative();
    let ddu = du.derivative();
    let inv_u = u.recip()?;
    let q: Vec<_> = bs.q.iter().map(cap_of).collect();
    let lap = ddu.add(&cap_of(&bs.p).mul(&du))?;
    let tr = cap_of(&bs.rbar)
        .add(&lap.mul(&inv_u).scale(&((dim - 2) as f64)))?
        .scale(&(1.0 / dim as f64));
    let e0 = cap_of(&bs.ric00)
        .add(&ddu.mul(&inv_u).scale(&((dim - 2) as f64)))?
        .sub(&tr)?;
    let mut sq = e0.mul(&e0);
    for i in 0..n {
        let e = cap_of(&bs.ric[i])
            .add(&q[i].mul(&du).mul(&inv_u).scale(&((dim - 2) as f64)))?
            .sub(&tr)?;
        sq = sq.add(&e.mul(&e))?;
    }
    Ok(sq.mul(&cap_of(&bs.jac)))
}

/// f.p. ∫_{r>ε} |E|² dv_g over all components, with an ε-ladder fit as
/// cross-check.
fn einstein_finite_part(p: &Pipeline) -> Result<(f64, f64, FinitePartFit)> {
    let g = &p.g;
    let ut = p
        .sol
        .anchor
        .as_ref()
        .ok_or_else(|| Error::Precondition("needs a global solve".into()))?;
    let rho = einstein_series(g, ut)?;
    let prim = rho.integrate()?;
    let top = g.extent();
    let x0 = (0.01 * top).min(p.sol.r0);
    let tail = |e: f64| quad(|r| einstein_density(g, &p.sol, r), e, top);
    let fp = prim.eval(x0) + tail(x0);
    let a2 = rho.coeff(-2, 0);

    let eps: Vec<f64> = (0..16).map(|i| 0.002 * top * 1.25f64.powi(i)).collect();
    let nb = 6;
    let mut a = DMatrix::zeros(eps.len(), nb);
    let mut b = DVector::zeros(eps.len());
    for (i, &e) in eps.iter().enumerate() {
        let lower = if e < x0 {
            prim.eval(x0) - prim.eval(e) + tail(x0)
        } else {
            tail(e)
        };
        b[i] = lower - a2 / e;
        let le = e.ln();
        let row = [-le, 1.0, e, e * le, e * e, e * e * le];
        for (k, v) in row.iter().enumerate() {
            a[(i, k)] = *v;
        }
    }
    let (x, cond) = lstsq(&a, &b);
    if cond > 1e8 {
        return Err(Error::IllConditionedFit(cond));
    }
    let resid = (&a * &x - &b).amax();
    let area = p.area();
    let shift = cutoff_shift(&rho, &p.gauge.series.eta)?;
    Ok((
        area * (fp + shift),
        area * shift,
        FinitePartFit {
            condition: cond,
            residual: resid,
            finite_part_fit: area * (x[1] + shift),
        },
    ))
}

pub fn euler_characteristic(g: &ModelGeometry) -> i32 {
    match g.kind() {
        Kind::TorusSlab => 0,
        Kind::WarpedBall => 1,
    }
}

/// Gauss–Bonnet in dimension four, evaluated in the geodesic gauge.
pub fn check_thm_e(
    p: &Pipeline,
    cfg: &VerifyConfig,
) -> Result<(GaussBonnetLedger, IdentityReport)> {
    if p.g.n() != 3 {
        return Err(Error::Unsupported("Gauss–Bonnet needs n = 3".into()));
    }
    let g = &p.g;
    let comps = g.components() as f64;
    let vol = g.boundary_volume();
    let weyl_sq = comps * vol * quad(|r| weyl_density(g, r), 0.0, g.extent());
    let (einstein_fp, fp_shift, fit) = einstein_finite_part(p)?;
    let area = p.area();
    let chi = euler_characteristic(g);
    let ledger = GaussBonnetLedger {
        weyl_sq,
        einstein_fp,
        einstein_fit: fit.clone(),
        cal_c: cal_c(&p.gauge.hat) * area,
        s_term: -6.0 * p.s_deriv.value * area,
        chi,
    };
    let target = 8.0 * PI * PI * chi as f64;
    let (tol, scale) = match g.kind() {
        Kind::WarpedBall => (TOL_E_BALL, 8.0 * PI * PI),
        Kind::TorusSlab => (TOL_E, ledger.term_scale()),
    };
    let lhs_err = 6.0 * p.s_deriv.error * area + 0.5 * (einstein_fp - fit.finite_part_fit).abs();
    let mut prov = p.provenance();
    prov.push(Provenance {
        artifact: "GaussBonnetLedger".into(),
        diagnostics: serde_json::to_value(&ledger).unwrap_or_default(),
    });
    let report = IdentityReport::build(
        "E",
        Estimate::new(ledger.total(), lhs_err),
        Estimate::new(target, 0.0),
        tol,
        scale,
        cfg.budget_scale,
        prov,
        serde_json::json!({
            "gauge": "geodesic",
            "einstein_cutoff_shift": fp_shift,
        }),
    );
    Ok((ledger, report))
}

// ---------------------------------------------------------------- umbilic volume

/// Ṽ = ∮(−𝒮 + 𝒞/6) dv_k.
pub fn umbilic_invariant(p: &Pipeline) -> Estimate {
    let area = p.area();
    Estimate::new(
        (-p.s_deriv.value + cal_c(&p.gauge.hat) / 6.0) * area,
        p.s_deriv.error * area,
    )
}

/// Ṽ for ḡ against Ṽ for e^{2ω}ḡ on an umbilic ball.
pub fn check_cor_f(
    p: &Pipeline,
    omega: &Profile,
    label: &str,
    cfg: &VerifyConfig,
) -> Result<IdentityReport> {
    if p.g.kind() != Kind::WarpedBall || p.g.n() != 3 {
        return Err(Error::Unsupported(
            "umbilic invariant needs a four-dimensional warped ball".into(),
        ));
    }
    let other = Pipeline::new(p.g.rescaled(omega, 1.0)?, cfg.bvp_tol)?;
    let a = umbilic_invariant(p);
    let b = umbilic_invariant(&other);
    let mut prov = p.provenance();
    prov.extend(other.provenance());
    Ok(IdentityReport::build(
        &format!("F.{label}"),
        a,
        b,
        TOL_F,
        a.value.abs().max(1.0),
        cfg.budget_scale,
        prov,
        serde_json::json!({ "omega": omega }),
    ))
}

// ---------------------------------------------------------------- covariance

/// Under ḡ ↦ e^{2c}ḡ: P_q eigenvalues scale by e^{−qc}, and
/// e^{nc} Q̃ = Q + P_n(c).
pub fn covariance_suite(
    p: &Pipeline,
    c: f64,
    checks: &[(u32, Mode)],
    cfg: &VerifyConfig,
) -> Result<Vec<IdentityReport>> {
    let n = p.g.n();
    let other_g = p.g.rescaled(&Profile::poly(&[c]), 1.0)?;
    let other = sy_global_solve(&other_g, cfg.bvp_tol)?;
    let sc0 = Scatterer::new(&p.g, &p.sol)?;
    let sc1 = Scatterer::new(&other_g, &other)?;
    let mut out = Vec::new();
    for (q, mode) in checks {
        let r0 = residue_extract(&sc0, *q, mode)?;
        let r1 = residue_extract(&sc1, *q, mode)?;
        let (e0, e1) = match (r0.eigenvalue, r1.eigenvalue) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Precondition(format!(
                    "no eigenvalue for q = {q} (c_q = 0)"
                )))
            }
        };
        let lhs = Estimate::new(e1, r1.richardson_error.abs());
        let rhs = Estimate::new(
            (-(*q as f64) * c).exp() * e0,
            (-(*q as f64) * c).exp() * r0.richardson_error.abs(),
        );
        out.push(IdentityReport::build(
            &format!("cov.P{q}[{}]", mode.label()),
            lhs,
            rhs,
            TOL_COV,
            e0.abs().max(1.0),
            cfg.budget_scale,
            vec![],
            serde_json::json!({ "c": c }),
        ));
    }
    let q1 = q_curvature(&sc1)?;
    let pn = residue_extract(&sc0, n as u32, &Mode::trivial(&p.g))?;
    let pn_c = pn.eigenvalue.unwrap_or(0.0) * c;
    let scale_q = (n as f64 * c).exp();
    out.push(IdentityReport::build(
        "cov.Q",
        Estimate::new(scale_q * q1.q, scale_q * q1.error),
        Estimate::new(
            p.q.q + pn_c,
            p.q.error + pn.richardson_error.abs() * c.abs(),
        ),
        TOL_COV,
        p.q.q.abs().max(1.0),
        cfg.budget_scale,
        vec![],
        serde_json::json!({ "c": c, "P_n_of_c": pn_c }),
    ));
    Ok(out)
}

/// Human-readable table of reports.
pub fn summary_table(reports: &[IdentityReport]) -> String {
    let mut s = format!(
        "{:<18} {:>20} {:>20} {:>11} {:>11}  {}\n",
        "check", "lhs", "rhs", "residual", "budget", "verdict"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<18} {:>20.12e} {:>20.12e} {:>11.3e} {:>11.3e}  {}\n",
            r.check,
            r.lhs.value,
            r.rhs.value,
            r.residual,
            r.budget,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    s
}
