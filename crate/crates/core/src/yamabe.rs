//! Singular Yamabe function `u = r ũ` for a model geometry: formal boundary
//! expansion, global radial solve and the renormalized volume ledger.

use crate::error::{Error, Result};
use crate::indicial::solve_orders;
use crate::model::{point_curvature, BoundarySeries, Kind, ModelGeometry};
use crate::numerics::{gauss_legendre, integrate, lstsq, Mesh};
use crate::scalar::{Jet, Rat, Scalar};
use crate::series::{PolyLogSeries, Series};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Log cap used for the high-order anchor series.
const ANCHOR_LOG_CAP: u32 = 6;
/// Extra orders carried by the anchor series beyond the first log.
const ANCHOR_EXTRA: i32 = 5;

/// Defect of the singular Yamabe equation for `u = r ũ`, written with
/// θ = r d/dr so that every term keeps the truncation order of ũ.
pub fn sy_defect<T: Scalar>(
    ut: &PolyLogSeries<T>,
    bs: &BoundarySeries<T>,
) -> Result<PolyLogSeries<T>> {
    let n = bs.n as i64;
    let th = ut.theta();
    let w = ut.add(&th)?;
    let cap = ut.log_cap();
    let one = PolyLogSeries::one(ut.order()).with_log_cap(cap);
    let t1 = one.sub(&w.mul(&w))?.scale(&T::from_i64(n * (n + 1)));
    let tt = th.theta().add(&th)?;
    let t2 = ut.mul(&tt).scale(&T::from_i64(2 * n));
    let t3 =
        bs.p.clone()
            .with_log_cap(cap)
            .shift(1)
            .mul(ut)
            .mul(&w)
            .scale(&T::from_i64(2 * n));
    let t4 = bs.rbar.clone().with_log_cap(cap).shift(2).mul(&ut.mul(ut));
    Ok(t1.add(&t2)?.add(&t3)?.add(&t4)?.truncate(ut.order()))
}

/// Order-by-order solution of the defect equation for ũ through order `k`
/// (in ũ), with the free coefficient of r^{n+1} set to `c`.
pub fn formal_solve<T: Scalar>(
    bs: &BoundarySeries<T>,
    k: i32,
    c: T,
    log_cap: u32,
) -> Result<PolyLogSeries<T>> {
    let n = bs.n as i32;
    let init = PolyLogSeries::one(k).with_log_cap(log_cap);
    solve_orders(
        &|ut| sy_defect(ut, bs),
        init,
        1,
        k,
        Some((n + 1, c)),
        log_cap,
    )
    .map_err(|e| match e {
        // report in u-orders
        Error::BeyondFirstLog { requested, max } => Error::BeyondFirstLog {
            requested: requested + 1,
            max,
        },
        e => e,
    })
}

/// Formal ũ through ũ-order `order - 1` (u-order `order`, at most n+2).
/// Exact arithmetic when the profiles permit, float otherwise.
pub fn formal_series(g: &ModelGeometry, order: usize) -> Result<Series> {
    let n = g.n();
    if order > n + 2 {
        return Err(Error::BeyondFirstLog {
            requested: order,
            max: n + 2,
        });
    }
    let k = order as i32 - 1;
    let exact = BoundarySeries::<Rat>::of(g, k + 2)
        .and_then(|bs| formal_solve(&bs, k, Rat::from_i64(0), crate::series::LOG_CAP));
    match exact {
        Ok(s) => Ok(Series::Exact(s)),
        Err(_) => {
            let bs = BoundarySeries::<f64>::of(g, k + 2)?;
            Ok(Series::Float(formal_solve(
                &bs,
                k,
                0.0,
                crate::series::LOG_CAP,
            )?))
        }
    }
}

/// High-order float anchor series with a given global coefficient c.
pub fn anchor_series(g: &ModelGeometry, c: f64) -> Result<PolyLogSeries<f64>> {
    let k = g.n() as i32 + 1 + ANCHOR_EXTRA;
    let bs = BoundarySeries::<f64>::of(g, k + 2)?;
    formal_solve(&bs, k, c, ANCHOR_LOG_CAP)
}

/// Float anchor series through ũ-order `k`.
pub fn anchor_series_order(g: &ModelGeometry, c: f64, k: i32) -> Result<PolyLogSeries<f64>> {
    let bs = BoundarySeries::<f64>::of(g, k + 2)?;
    // log powers first appear at order j(n+1)
    let cap = ANCHOR_LOG_CAP.max((k / (g.n() as i32 + 1)) as u32 + 1);
    formal_solve(&bs, k, c, cap)
}

fn anchor_jet(g: &ModelGeometry, c: f64) -> Result<PolyLogSeries<Jet<f64>>> {
    let k = g.n() as i32 + 1 + ANCHOR_EXTRA;
    let bs = BoundarySeries::<Jet<f64>>::of(g, k + 2)?;
    formal_solve(&bs, k, Jet::variable(c, 2), ANCHOR_LOG_CAP)
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonStep {
    pub residual: f64,
    pub damping: f64,
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub mesh: Mesh,
    /// Nodal values of ũ − (1 − slope·r); the reference is differentiated
    /// exactly, which keeps roundoff proportional to the correction.
    pub values: Vec<f64>,
    pub slope: f64,
}

impl Grid {
    pub fn eval_d2(&self, r: f64) -> (f64, f64, f64) {
        let (a, b, c) = self.mesh.eval_d2(&self.values, r);
        (a + 1.0 - self.slope * r, b - self.slope, c)
    }
}

#[derive(Clone, Debug)]
pub struct SYSolution {
    pub n: usize,
    /// ũ through the first log order, with the global coefficient left 0.
    pub formal: Series,
    /// Coefficient of r^{n+1} log r in ũ.
    pub lcal: f64,
    /// Coefficient of r^{n+1} in ũ, fixed by the global solve.
    pub c: Option<f64>,
    /// High-order series with c filled in, valid for r ≤ r0.
    pub anchor: Option<PolyLogSeries<f64>>,
    pub r0: f64,
    pub grid: Option<Grid>,
    pub residual_norm: f64,
    pub history: Vec<NewtonStep>,
    /// sup |ũ_grid − ũ_formal| / r^{n+2} on [r0, 4 r0]
    pub overlap_constant: f64,
}

impl SYSolution {
    /// ũ, ũ', ũ'' at r (current distance, 0 < r ≤ extent).
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        match (&self.grid, &self.anchor) {
            (Some(gr), Some(_)) if r >= self.r0 => gr.eval_d2(r),
            (_, Some(a)) => series_d2(a, r),
            _ => series_d2(&self.formal.as_float(), r),
        }
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "formal": self.formal.to_json(),
            "Lcal": self.lcal,
            "c": self.c,
            "r0": self.r0,
            "residual_norm": self.residual_norm,
            "newton": self.history,
            "overlap_constant": self.overlap_constant,
            "elements": self.grid.as_ref().map(|g| g.mesh.elements()),
            "degree": self.grid.as_ref().map(|g| g.mesh.p),
        })
    }

    /// CSV rows `r,u_tilde,du_tilde,defect` on a uniform sample.
    pub fn grid_csv(&self, g: &ModelGeometry, samples: usize) -> String {
        let mut out = String::from("r,u_tilde,du_tilde,defect\n");
        let top = g.extent();
        for i in 0..=samples {
            let r = self.r0 + (top - self.r0) * i as f64 / samples as f64;
            let (a, b, c) = self.eval(r);
            let d = pointwise_defect(g, r, a, b, c).0;
            out.push_str(&format!("{r:.12e},{a:.15e},{b:.15e},{d:.3e}\n"));
        }
        out
    }
}

fn series_d2(s: &PolyLogSeries<f64>, r: f64) -> (f64, f64, f64) {
    let d = s.derivative();
    (s.eval(r), d.eval(r), d.derivative().eval(r))
}

/// Formal part only.
pub fn sy_formal_expansion(g: &ModelGeometry, order: usize) -> Result<SYSolution> {
    let formal = formal_series(g, order)?;
    let n = g.n();
    let lcal = formal.as_float().coeff(n as i32 + 1, 1);
    Ok(SYSolution {
        n,
        formal,
        lcal,
        c: None,
        anchor: None,
        r0: 0.0,
        grid: None,
        residual_norm: 0.0,
        history: vec![],
        overlap_constant: f64::NAN,
    })
}

/// Equation value and partials with respect to (ũ, ũ', ũ'') at r.
fn pointwise_defect(g: &ModelGeometry, r: f64, a: f64, b: f64, c2: f64) -> (f64, [f64; 3]) {
    let pc = point_curvature(g.fiber(), &g.local(r));
    defect_with(g.n() as f64, pc.p, pc.rbar, r, a, b, c2)
}

fn defect_with(n: f64, p: f64, rbar: f64, r: f64, a: f64, b: f64, c2: f64) -> (f64, [f64; 3]) {
    let u = r * a;
    let du = a + r * b;
    let ddu = 2.0 * b + r * c2;
    let f = n * (n + 1.0) * (1.0 - du * du) + 2.0 * n * u * (ddu + p * du) + u * u * rbar;
    let f_du = -2.0 * n * (n + 1.0) * du + 2.0 * n * u * p;
    let f_u = 2.0 * n * (ddu + p * du) + 2.0 * u * rbar;
    let f_ddu = 2.0 * n * u;
    (f, [r * f_u + f_du, r * f_du + 2.0 * f_ddu, r * f_ddu])
}

/// Pick ε_min so the anchor truncation is below `tol`.
fn choose_r0(g: &ModelGeometry, anchor: &PolyLogSeries<f64>, tol: f64) -> f64 {
    let top = g.extent();
    let ladder = [0.1, 0.07, 0.05, 0.035, 0.025, 0.018, 0.012];
    for f in ladder {
        let r = f * top;
        if anchor.tail_estimate(r) <= tol {
            return r;
        }
    }
    ladder[ladder.len() - 1] * top
}

struct Collocation {
    p: Vec<f64>,
    rbar: Vec<f64>,
}

fn sample_background(g: &ModelGeometry, mesh: &Mesh) -> Collocation {
    let nodes = mesh.all_nodes();
    let top = g.extent();
    let mut p = Vec::with_capacity(nodes.len());
    let mut rbar = Vec::with_capacity(nodes.len());
    for &r in &nodes {
        if g.kind() == Kind::WarpedBall && (top - r).abs() < 1e-14 * top {
            // center row is replaced by the regularity condition
            p.push(0.0);
            rbar.push(0.0);
            continue;
        }
        let pc = point_curvature(g.fiber(), &g.local(r));
        p.push(pc.p);
        rbar.push(pc.rbar);
    }
    Collocation { p, rbar }
}

/// Global solve on [r0, extent] for symmetric slabs and warped balls.
pub fn sy_global_solve(g: &ModelGeometry, tol: f64) -> Result<SYSolution> {
    if !(tol >= 1e-12) {
        return Err(Error::Invalid("tolerance must be at least 1e-12".into()));
    }
    if g.kind() == Kind::TorusSlab && !g.symmetric() {
        return Err(Error::Unsupported(
            "global solve needs a symmetric slab".into(),
        ));
    }
    let n = g.n();
    let mut formal = sy_formal_expansion(g, n + 2)?;
    let probe = anchor_series(g, 0.0)?;
    let r0 = choose_r0(g, &probe, tol);
    let top = g.extent();
    let mut last_err = None;
    for &(p, ratio) in &[(14usize, 1.6f64), (18, 1.5), (24, 1.4), (30, 1.3)] {
        let hmax = 0.15 * top;
        let mesh = Mesh::graded(r0, top, (2.0 * r0).min(hmax), ratio, hmax, p);
        match newton(g, &mesh, r0, tol) {
            Ok((vals, c, hist, defect)) => {
                let slope = 0.5 / top;
                let anchor = anchor_series(g, c)?;
                formal.c = Some(c);
                formal.r0 = r0;
                formal.residual_norm = defect;
                formal.history = hist;
                let grid = Grid {
                    mesh,
                    values: vals,
                    slope,
                };
                formal.overlap_constant = overlap(&grid, &anchor, n, r0);
                formal.anchor = Some(anchor);
                formal.grid = Some(grid);
                if defect <= tol {
                    return Ok(formal);
                }
                last_err = Some(Error::NoConvergence(format!(
                    "defect {defect:e} above tolerance {tol:e} at degree {p}"
                )));
            }
            Err(e @ Error::LeftAdmissibleCone(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

fn overlap(grid: &Grid, anchor: &PolyLogSeries<f64>, n: usize, r0: f64) -> f64 {
    let formal = anchor.clone().truncate(n as i32 + 1);
    (0..=20)
        .map(|i| r0 * (1.0 + 3.0 * i as f64 / 20.0))
        .map(|r| (grid.eval_d2(r).0 - formal.eval(r)).abs() / r.powi(n as i32 + 2))
        .fold(0.0, f64::max)
}

type NewtonOut = (Vec<f64>, f64, Vec<NewtonStep>, f64);

fn newton(g: &ModelGeometry, mesh: &Mesh, r0: f64, tol: f64) -> Result<NewtonOut> {
    let n = g.n() as f64;
    let top = g.extent();
    let bg = sample_background(g, mesh);
    let np = mesh.p + 1;
    let ne = mesh.elements();
    let dofs = mesh.dofs();
    let nodes = mesh.all_nodes();
    // reference 1 − r/(2R) has u' = 0 at the center / midplane
    let sl = 0.5 / top;
    let mut x: Vec<f64> = vec![0.0; dofs];
    let mut c = 0.0;
    let mut hist = Vec::new();

    let assemble = |x: &[f64], c: f64, jac: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let mut f = DVector::zeros(dofs + 1);
        let mut a = if jac {
            Some(DMatrix::zeros(dofs + 1, dofs + 1))
        } else {
            None
        };
        let mut row = 0;
        for e in 0..ne {
            let (d1, d2) = mesh.element_derivs(x, e);
            let (ea, eb) = mesh.interval(e);
            let s = 2.0 / (eb - ea);
            for i in 1..np - 1 {
                let gi = e * np + i;
                let r = nodes[gi];
                let (val, part) = defect_with(
                    n,
                    bg.p[gi],
                    bg.rbar[gi],
                    r,
                    x[gi] + 1.0 - sl * r,
                    d1[i] - sl,
                    d2[i],
                );
                f[row] = val;
                if let Some(a) = a.as_mut() {
                    a[(row, gi)] += part[0];
                    for j in 0..np {
                        a[(row, e * np + j)] +=
                            part[1] * s * mesh.d1[(i, j)] + part[2] * s * s * mesh.d2[(i, j)];
                    }
                }
                row += 1;
            }
        }
        // continuity of value and slope across element interfaces
        for e in 0..ne - 1 {
            let (la, lb) = mesh.interval(e);
            let (ra, rb) = mesh.interval(e + 1);
            let sl = 2.0 / (lb - la);
            let sr = 2.0 / (rb - ra);
            let li = e * np + np - 1;
            let ri = (e + 1) * np;
            f[row] = x[li] - x[ri];
            if let Some(a) = a.as_mut() {
                a[(row, li)] = 1.0;
                a[(row, ri)] = -1.0;
            }
            row += 1;
            let dl: f64 = (0..np)
                .map(|j| mesh.d1[(np - 1, j)] * x[e * np + j])
                .sum::<f64>()
                * sl;
            let dr: f64 = (0..np)
                .map(|j| mesh.d1[(0, j)] * x[(e + 1) * np + j])
                .sum::<f64>()
                * sr;
            f[row] = (dl - dr) / sl;
            if let Some(a) = a.as_mut() {
                for j in 0..np {
                    a[(row, e * np + j)] += mesh.d1[(np - 1, j)];
                    a[(row, (e + 1) * np + j)] -= mesh.d1[(0, j)] * sr / sl;
                }
            }
            row += 1;
        }
        // anchors at r0: value and slope of the formal series with unknown c
        let an = anchor_jet(g, c)?;
        let v = eval_jet(&an, r0);
        let dv = eval_jet(&an.derivative(), r0);
        let s0 = 2.0 / (mesh.interval(0).1 - mesh.interval(0).0);
        f[row] = x[0] + 1.0 - sl * r0 - v.0;
        if let Some(a) = a.as_mut() {
            a[(row, 0)] = 1.0;
            a[(row, dofs)] = -v.1;
        }
        row += 1;
        let d0: f64 = (0..np).map(|j| mesh.d1[(0, j)] * x[j]).sum::<f64>() * s0;
        f[row] = r0 * (d0 - sl - dv.0);
        if let Some(a) = a.as_mut() {
            for j in 0..np {
                a[(row, j)] += r0 * mesh.d1[(0, j)] * s0;
            }
            a[(row, dofs)] = -r0 * dv.1;
        }
        row += 1;
        // regularity at the center / midplane
        let le = ne - 1;
        let (ea, eb) = mesh.interval(le);
        let se = 2.0 / (eb - ea);
        // u' = ũ + r ũ' vanishes there
        let dt: f64 = (0..np)
            .map(|j| mesh.d1[(np - 1, j)] * x[le * np + j])
            .sum::<f64>()
            * se;
        f[row] = x[dofs - 1] + 1.0 - sl * top + top * (dt - sl);
        if let Some(a) = a.as_mut() {
            for j in 0..np {
                a[(row, le * np + j)] = top * se * mesh.d1[(np - 1, j)];
            }
            a[(row, dofs - 1)] += 1.0;
        }
        row += 1;
        debug_assert_eq!(row, dofs + 1);
        Ok((f, a))
    };

    let mut converged = false;
    for _ in 0..60 {
        let (f, a) = assemble(&x, c, true)?;
        let fnorm = f.amax();
        let a = a.unwrap();
        let lu = a.lu();
        let delta = lu
            .solve(&(-&f))
            .ok_or_else(|| Error::NoConvergence("singular Newton matrix".into()))?;
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xt: Vec<f64> = x
                .iter()
                .zip(delta.iter())
                .map(|(a, d)| a + lam * d)
                .collect();
            let ct = c + lam * delta[dofs];
            if xt
                .iter()
                .zip(&nodes)
                .any(|(v, r)| !(v + 1.0 - sl * r > 0.0))
            {
                lam *= 0.5;
                continue;
            }
            let (ft, _) = assemble(&xt, ct, false)?;
            if ft.amax() < (1.0 - 1e-4 * lam) * fnorm || fnorm < 1e-13 {
                x = xt;
                c = ct;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        hist.push(NewtonStep {
            residual: fnorm,
            damping: lam,
        });
        if !accepted {
            // collocation roundoff floor; the off-node defect decides
            if fnorm < tol {
                converged = true;
                break;
            }
            if let Some(m) = x
                .iter()
                .zip(&nodes)
                .map(|(v, r)| v + 1.0 - sl * r)
                .reduce(f64::min)
            {
                if m <= 0.0 {
                    return Err(Error::LeftAdmissibleCone(m));
                }
            }
            return Err(Error::NoConvergence(format!(
                "line search failed; history {:?}",
                hist.iter()
                    .map(|h| (h.residual, h.damping))
                    .collect::<Vec<_>>()
            )));
        }
        let step = delta.amax() * lam;
        if step < 1e-14 || fnorm < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "Newton did not converge; history {:?}",
            hist.iter()
                .map(|h| (h.residual, h.damping))
                .collect::<Vec<_>>()
        )));
    }
    if let Some(m) = x
        .iter()
        .zip(&nodes)
        .map(|(v, r)| v + 1.0 - sl * r)
        .reduce(f64::min)
    {
        if m <= 0.0 {
            return Err(Error::LeftAdmissibleCone(m));
        }
    }
    // defect between nodes
    let mut defect: f64 = 0.0;
    for e in 0..ne {
        let (a, b) = mesh.interval(e);
        for k in 1..8 {
            let r = a + (b - a) * (k as f64 + 0.37) / 8.0;
            if r >= top * (1.0 - 1e-9) {
                continue;
            }
            let (w, dw, ddw) = mesh.eval_d2(&x, r);
            let (u, du, ddu) = (w + 1.0 - sl * r, dw - sl, ddw);
            defect = defect.max(pointwise_defect(g, r, u, du, ddu).0.abs());
        }
    }
    Ok((x, c, hist, defect))
}

fn eval_jet(s: &PolyLogSeries<Jet<f64>>, r: f64) -> (f64, f64) {
    let lr = r.ln();
    let b = s.base().to_f64();
    let mut v = (0.0, 0.0);
    for (k, j, c) in s.terms() {
        let w = r.powf(b + k as f64) * lr.powi(j as i32);
        v.0 += c.coeff(0) * w;
        v.1 += c.coeff(1) * w;
    }
    v
}

#[derive(Clone, Debug, Serialize)]
pub struct FitDiagnostics {
    pub condition: f64,
    pub residual: f64,
    pub energy_fit: f64,
    pub finite_part_fit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeLedger {
    /// Divergent coefficients c_0 … c_{n−1} (all components).
    pub c: Vec<f64>,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "V")]
    pub finite_part: f64,
    /// v^{(1)} … v^{(n)}
    pub v: Vec<f64>,
    /// Per-component V and ℰ.
    pub per_component: Vec<(f64, f64)>,
    pub fit_diagnostics: FitDiagnostics,
}

/// Radial density `ũ^{−1−n} J` as a series (coefficients v^{(j)}).
pub fn density_series(g: &ModelGeometry, ut: &PolyLogSeries<f64>) -> Result<PolyLogSeries<f64>> {
    let n = g.n() as i32;
    let bs = BoundarySeries::<f64>::of(g, ut.order() + 1)?;
    Ok(ut.powi(-1 - n)?.mul(&bs.jac).truncate(ut.order()))
}

/// ∫_ε^R r^{−1−n} ũ^{−1−n} J dr per unit boundary volume, using the series
/// below `x0` and quadrature above; ε may lie anywhere in (0, R).
fn radial_integrand(g: &ModelGeometry, sol: &SYSolution, r: f64) -> f64 {
    let n = g.n() as i32;
    let loc = g.local(r);
    let jac: f64 = loc.psi.iter().map(|d| d[0]).product::<f64>()
        / g.local(0.0).psi.iter().map(|d| d[0]).product::<f64>();
    let (u, _, _) = sol.eval(r);
    r.powi(-1 - n) * u.powi(-1 - n) * jac
}

fn quad_tail(g: &ModelGeometry, sol: &SYSolution, from: f64) -> f64 {
    let top = g.extent();
    let rule = gauss_legendre(24);
    // geometric pieces near the boundary, uniform further in
    let mut a = from;
    let mut total = 0.0;
    while a < top {
        let b = (a * 1.5).max(a + 1e-3).min(a + 0.05 * top).min(top);
        total += integrate(|r| radial_integrand(g, sol, r), a, b, &rule);
        a = b;
    }
    total
}

pub fn volume_expansion(sol: &SYSolution, g: &ModelGeometry) -> Result<VolumeLedger> {
    let n = g.n();
    let anchor = sol
        .anchor
        .as_ref()
        .ok_or_else(|| Error::Precondition("volume needs a converged global solve".into()))?;
    let dens = density_series(g, anchor)?;
    let vol = g.boundary_volume();
    let comps = g.components() as f64;
    let v: Vec<f64> = (1..=n as i32).map(|j| dens.coeff(j, 0)).collect();
    let mut c = vec![vol * comps / n as f64];
    for j in 1..n {
        c.push(comps * vol * v[j - 1] / (n - j) as f64);
    }
    let energy_one = vol * v[n - 1];
    // finite part: exact f.p. of the series part on (0, x0] plus quadrature
    // the density series is truncated, so switch to quadrature early
    let x0 = (0.01 * g.extent()).min(sol.r0);
    let prim = dens.shift(-(n as i32) - 1).integrate()?;
    let fp_series = prim.eval(x0);
    let v_one = vol * (fp_series + quad_tail(g, sol, x0));

    // ε-ladder fit of {ℰ, V} after subtracting the divergent part
    let eps: Vec<f64> = (0..16)
        .map(|i| 0.002 * g.extent() * 1.25f64.powi(i))
        .collect();
    let nb = 8;
    let mut a = DMatrix::zeros(eps.len(), nb);
    let mut b = DVector::zeros(eps.len());
    for (i, &e) in eps.iter().enumerate() {
        let lower = if e < x0 {
            prim.eval(x0) - prim.eval(e) + quad_tail(g, sol, x0)
        } else {
            quad_tail(g, sol, e)
        };
        let mut div = 0.0;
        for j in 0..n {
            let vj = if j == 0 { 1.0 } else { v[j - 1] };
            div += vj * e.powi(j as i32 - n as i32) / (n - j) as f64;
        }
        b[i] = lower - div;
        let le = e.ln();
        let row = [
            -le,
            1.0,
            e,
            e * le,
            e * e,
            e * e * le,
            e * e * e,
            e * e * e * le,
        ];
        for (k, val) in row.iter().enumerate() {
            a[(i, k)] = *val;
        }
    }
    let (x, cond) = lstsq(&a, &b);
    let resid = (&a * &x - &b).amax();
    if cond > 1e8 {
        return Err(Error::IllConditionedFit(cond));
    }
    Ok(VolumeLedger {
        c,
        energy: comps * energy_one,
        finite_part: comps * v_one,
        v,
        per_component: vec![(v_one, energy_one); g.components()],
        fit_diagnostics: FitDiagnostics {
            condition: cond,
            residual: resid,
            energy_fit: comps * vol * x[0],
            finite_part_fit: comps * vol * x[1],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Basis, GeometrySpec, Profile};
    use crate::scalar::rat;

    fn spec(kind: Kind, n: usize, profiles: Vec<Vec<f64>>, symmetric: bool) -> GeometrySpec {
        GeometrySpec {
            kind,
            n,
            profiles,
            basis: Basis::Poly,
            symmetric,
            length: None,
            conformal: vec![],
        }
    }

    fn exact(s: &Series) -> &PolyLogSeries<Rat> {
        match s {
            Series::Exact(s) => s,
            _ => panic!("expected exact series"),
        }
    }

    #[test]
    fn euclidean_ball_is_hyperbolic() {
        for n in 2..=4 {
            let g =
                ModelGeometry::new(spec(Kind::WarpedBall, n, vec![vec![0.0, 1.0]], false)).unwrap();
            let sol = sy_formal_expansion(&g, n + 2).unwrap();
            let s = exact(&sol.formal);
            assert_eq!(s.coeff(1, 0), rat(-1, 2));
            for k in 2..=n as i32 + 1 {
                assert_eq!(s.coeff(k, 0), rat(0, 1));
                assert_eq!(s.coeff(k, 1), rat(0, 1));
            }
            assert_eq!(sol.lcal, 0.0);
        }
    }

    #[test]
    fn torus_second_derivative() {
        let g = ModelGeometry::new(spec(
            Kind::TorusSlab,
            2,
            vec![vec![1.0, 1.0], vec![1.0, -1.0]],
            false,
        ))
        .unwrap();
        let s = sy_formal_expansion(&g, 4).unwrap();
        let s = exact(&s.formal);
        assert_eq!(s.coeff(1, 0), rat(0, 1));
        // ∂²ũ = 2 a_2
        assert_eq!(s.coeff(2, 0) * rat(2, 1), rat(-1, 1));
    }

    #[test]
    fn first_two_jets_match_closed_forms() {
        let g = ModelGeometry::new(spec(
            Kind::TorusSlab,
            3,
            vec![vec![1.0, 0.5, -0.5], vec![1.0, -0.25, 0.25], vec![2.0, 0.3]],
            false,
        ))
        .unwrap();
        let inv = crate::model::boundary_invariants_exact(&g).unwrap();
        let s = sy_formal_expansion(&g, 5).unwrap();
        let s = exact(&s.formal);
        let n = rat(3, 1);
        assert_eq!(s.coeff(1, 0), -inv.h.clone() / (rat(2, 1) * n.clone()));
        let want = -(inv.rbar.clone() + inv.h.clone() * inv.h.clone()) / (rat(3, 1) * n.clone())
            + (inv.r.clone() - inv.lo_norm_sq.clone()) / (rat(3, 1) * (n - rat(1, 1)));
        assert_eq!(s.coeff(2, 0) * rat(2, 1), want);
    }

    #[test]
    fn order_limit() {
        let g = ModelGeometry::new(spec(Kind::WarpedBall, 2, vec![vec![0.0, 1.0]], false)).unwrap();
        assert!(matches!(
            sy_formal_expansion(&g, 5),
            Err(Error::BeyondFirstLog { .. })
        ));
    }

    #[test]
    fn ball_global_solve_exact() {
        let g = ModelGeometry::new(spec(Kind::WarpedBall, 2, vec![vec![0.0, 1.0]], false)).unwrap();
        let sol = sy_global_solve(&g, 1e-12).unwrap();
        assert!(sol.residual_norm <= 1e-12, "{}", sol.residual_norm);
        for r in [0.01, 0.2, 0.5, 0.9, 1.0] {
            assert!((sol.eval(r).0 - (1.0 - r / 2.0)).abs() < 1e-12);
        }
        let led = volume_expansion(&sol, &g).unwrap();
        // ℰ = ∮ v^{(2)} = −½ · 4π
        assert!((led.energy + 2.0 * std::f64::consts::PI).abs() < 1e-10);
        assert!((led.fit_diagnostics.energy_fit - led.energy).abs() < 1e-6 * led.energy.abs());
        // V = 4π(1/8 − ln2/2)·... checked against the closed form per unit area
        let want = 4.0 * std::f64::consts::PI * (0.125 - 0.5 * 2f64.ln());
        assert!(
            (led.finite_part - want).abs() < 1e-9,
            "{} vs {}",
            led.finite_part,
            want
        );
    }

    #[test]
    fn torus_global_solve() {
        let sym = |s: f64| vec![1.0, s, -s];
        let g =
            ModelGeometry::new(spec(Kind::TorusSlab, 2, vec![sym(1.0), sym(-1.0)], true)).unwrap();
        let sol = sy_global_solve(&g, 1e-10).unwrap();
        assert!(sol.residual_norm <= 1e-10);
        assert!(sol.overlap_constant.is_finite());
        let led = volume_expansion(&sol, &g).unwrap();
        assert!(
            (led.fit_diagnostics.energy_fit - led.energy).abs() < 1e-6 * led.energy.abs().max(1.0)
        );
        assert!(
            (led.fit_diagnostics.finite_part_fit - led.finite_part).abs() < 1e-5,
            "{} vs {}",
            led.fit_diagnostics.finite_part_fit,
            led.finite_part
        );
        let v1 = (1.0 - 2.0) / 4.0 * 0.0;
        assert!((led.v[0] - v1).abs() < 1e-12);
    }

    #[test]
    fn constant_rescale_preserves_u_tilde() {
        let g = ModelGeometry::new(spec(
            Kind::WarpedBall,
            3,
            vec![vec![0.0, 1.0, 0.0, 0.1]],
            false,
        ))
        .unwrap();
        let c = 0.2;
        let h = g.rescaled(&Profile::poly(&[c]), 1.0).unwrap();
        let a = sy_global_solve(&g, 1e-10).unwrap();
        let b = sy_global_solve(&h, 1e-10).unwrap();
        for r in [0.05, 0.3, 0.6] {
            assert!((a.eval(r).0 - b.eval(c.exp() * r).0).abs() < 1e-10);
        }
    }
}
