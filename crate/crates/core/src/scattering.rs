//! Mode-wise scattering for `(Δ_g + s(n−s)) v = 0`: Frobenius data at the
//! boundary, a spectral interior solve, the connection value S(s), and the
//! quantities read off from it (residues, Q, 𝒮, fractional operators).

use crate::constants::residue_c;
use crate::error::{Error, Result};
use crate::indicial::solve_orders;
use crate::model::{BoundaryInvariants, BoundarySeries, Kind, ModelGeometry};
use crate::normalform::gauge_series;
use crate::numerics::{richardson, Mesh};
use crate::scalar::{Jet, Rat, Scalar, JET_LEN};
use crate::series::{PolyLogSeries, LOG_CAP};
use crate::yamabe::{anchor_series_order, formal_solve, SYSolution};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Frobenius order used for matching, in excess of n.
const MATCH_EXTRA: i32 = 20;
/// Log powers allowed in the numeric Frobenius series.
const FROB_LOG_CAP: u32 = 12;
/// Start of the interior mesh, as a fraction of the extent.
const MESH_START: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    #[default]
    Even,
    Odd,
}

/// Separated boundary mode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Fourier index on the torus; the parity picks the midplane condition.
    Torus { k: Vec<i64>, parity: Parity },
    /// Spherical harmonic degree.
    Ball { l: u32 },
}

impl Mode {
    pub fn trivial(g: &ModelGeometry) -> Mode {
        match g.kind() {
            Kind::TorusSlab => Mode::Torus {
                k: vec![0; g.n()],
                parity: Parity::Even,
            },
            Kind::WarpedBall => Mode::Ball { l: 0 },
        }
    }

    pub fn is_trivial(&self) -> bool {
        match self {
            Mode::Torus { k, .. } => k.iter().all(|&x| x == 0),
            Mode::Ball { l } => *l == 0,
        }
    }

    /// Parse `1,0`, `1,0:odd` (torus) or `l=2` / `2` (ball).
    pub fn parse(s: &str, g: &ModelGeometry) -> Result<Mode> {
        let s = s.trim();
        let m = match g.kind() {
            Kind::WarpedBall => {
                let t = s.strip_prefix("l=").unwrap_or(s);
                let l = t
                    .parse::<u32>()
                    .map_err(|_| Error::Invalid(format!("bad ball mode '{s}'")))?;
                Mode::Ball { l }
            }
            Kind::TorusSlab => {
                let (ks, par) = match s.split_once(':') {
                    Some((a, "even")) => (a, Parity::Even),
                    Some((a, "odd")) => (a, Parity::Odd),
                    Some(_) => return Err(Error::Invalid(format!("bad parity in '{s}'"))),
                    None => (s, Parity::Even),
                };
                let k = ks
                    .split(',')
                    .map(|x| x.trim().parse::<i64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Invalid(format!("bad torus mode '{s}'")))?;
                Mode::Torus { k, parity: par }
            }
        };
        m.check(g)?;
        Ok(m)
    }

    pub fn label(&self) -> String {
        match self {
            Mode::Torus { k, parity } => {
                let ks: Vec<String> = k.iter().map(|x| x.to_string()).collect();
                match parity {
                    Parity::Even => ks.join(","),
                    Parity::Odd => format!("{}:odd", ks.join(",")),
                }
            }
            Mode::Ball { l } => format!("l={l}"),
        }
    }

    pub fn check(&self, g: &ModelGeometry) -> Result<()> {
        match (self, g.kind()) {
            (Mode::Torus { k, parity }, Kind::TorusSlab) => {
                if k.len() != g.n() {
                    return Err(Error::ModeMismatch(format!(
                        "torus mode needs {} indices, got {}",
                        g.n(),
                        k.len()
                    )));
                }
                if *parity == Parity::Odd && !g.symmetric() {
                    return Err(Error::ModeMismatch(
                        "parity sectors need a symmetric slab".into(),
                    ));
                }
                Ok(())
            }
            (Mode::Ball { .. }, Kind::WarpedBall) => Ok(()),
            _ => Err(Error::ModeMismatch(format!(
                "mode {} does not fit a {:?} geometry",
                self.label(),
                g.kind()
            ))),
        }
    }

    /// Weights μ_i with λ(r) = Σ μ_i ψ_i(r)^{-2}.
    pub fn weights(&self, n: usize) -> Vec<f64> {
        match self {
            Mode::Torus { k, .. } => k.iter().map(|&x| (2.0 * PI * x as f64).powi(2)).collect(),
            Mode::Ball { l } => {
                let mut w = vec![0.0; n];
                w[0] = (*l as f64) * (*l as f64 + n as f64 - 1.0);
                w
            }
        }
    }

    /// Condition at the far end: true for v' = 0, false for v = 0.
    fn neumann(&self) -> bool {
        match self {
            Mode::Torus { parity, .. } => *parity == Parity::Even,
            Mode::Ball { l } => *l == 0,
        }
    }
}

/// Radial coefficients of the mode equation near the boundary, with the
/// factors of r absorbed so everything is a plain series.
#[derive(Clone, Debug)]
pub struct Background<T> {
    pub n: usize,
    /// ũ = u / r
    pub ut: PolyLogSeries<T>,
    /// r·P
    pub rp: PolyLogSeries<T>,
    /// r²·λ
    pub r2lam: PolyLogSeries<T>,
}

/// Which boundary defining function the expansion is taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gauge {
    /// ḡ with its distance r
    Bar,
    /// geodesic normal form, u = r̂
    Hat,
}

impl<T: Scalar> Background<T> {
    pub fn new(
        bs: &BoundarySeries<T>,
        ut: PolyLogSeries<T>,
        weights: &[T],
    ) -> Result<Background<T>> {
        Ok(Background {
            n: bs.n,
            ut,
            rp: bs.p.shift(1),
            r2lam: bs.lambda(weights)?.shift(2),
        })
    }

    /// Exact-capable background through order `k` with the global term left
    /// out (orders up to n do not see it).
    pub fn local(g: &ModelGeometry, weights: &[T], k: i32, gauge: Gauge) -> Result<Background<T>> {
        let n = g.n() as i32;
        let bs = BoundarySeries::<T>::of(g, k + 2)?;
        let ut = formal_solve(&bs, k.min(n), T::zero(), LOG_CAP)?;
        match gauge {
            Gauge::Bar => Background::new(&bs, ut, weights),
            Gauge::Hat => {
                let gs = gauge_series(&bs, &ut)?;
                Background::new(&gs.hat, PolyLogSeries::one(ut.order()), weights)
            }
        }
    }

    pub fn convert<U: Scalar + crate::scalar::FromScalar<T>>(&self) -> Background<U> {
        Background {
            n: self.n,
            ut: self.ut.convert(),
            rp: self.rp.convert(),
            r2lam: self.r2lam.convert(),
        }
    }
}

/// Indicial polynomial of the mode equation at exponent e.
fn indicial<T: Scalar>(n: usize, s: &T, e: &T) -> T {
    let nn = T::from_i64(n as i64);
    e.clone() * e.clone() - nn.clone() * e.clone() + s.clone() * (nn - s.clone())
}

/// Frobenius series `r^α(1 + …)` of the mode equation through order `order`,
/// for α ∈ {n−s, s}. A vanishing indicial value inside the range switches to
/// the log branch with the free coefficient set to zero.
pub fn frobenius<T: Scalar>(
    bg: &Background<T>,
    s: &T,
    alpha: &T,
    order: i32,
    log_cap: u32,
) -> Result<PolyLogSeries<T>> {
    let n = bg.n;
    let ut = bg.ut.clone().with_log_cap(log_cap);
    let a = ut.mul(&ut);
    let b = a.mul(&bg.rp.clone().with_log_cap(log_cap)).add(
        &ut.mul(&ut.add(&ut.theta())?)
            .scale(&T::from_i64(1 - n as i64)),
    )?;
    let nn = T::from_i64(n as i64);
    let c = PolyLogSeries::constant(s.clone() * (nn - s.clone()), order)
        .with_log_cap(log_cap)
        .sub(&a.mul(&bg.r2lam.clone().with_log_cap(log_cap)))?;
    let apply = |w: &PolyLogSeries<T>| -> Result<PolyLogSeries<T>> {
        let dw = w.theta().add(&w.scale(alpha))?;
        let ddw = dw.theta().add(&dw.scale(alpha))?;
        Ok(a.mul(&ddw.sub(&dw)?)
            .add(&b.mul(&dw))?
            .add(&c.mul(w))?
            .truncate(w.order()))
    };
    let mut resonance = None;
    for m in 1..=order {
        let e = alpha.clone() + T::from_i64(m as i64);
        let i = indicial(n, s, &e);
        let zero = if T::exact() {
            i.is_zero()
        } else {
            i.magnitude() < 1e-12
        };
        if zero {
            resonance = Some((m, T::zero()));
            break;
        }
    }
    let init = PolyLogSeries::one(order).with_log_cap(log_cap);
    let w = solve_orders(&apply, init, 1, order, resonance, log_cap)?;
    let mut out = PolyLogSeries::new(alpha.clone(), order).with_log_cap(log_cap);
    for (k, j, c) in w.terms() {
        out.insert(k, j, c.clone());
    }
    Ok(out)
}

/// F and G (exponents n−s and s) from the float anchor of a solved ũ.
pub fn frobenius_expand(
    g: &ModelGeometry,
    sol: &SYSolution,
    s: f64,
    mode: &Mode,
    order: i32,
) -> Result<(PolyLogSeries<f64>, PolyLogSeries<f64>)> {
    mode.check(g)?;
    let bg = float_background(g, sol, mode, order)?;
    let n = g.n() as f64;
    Ok((
        frobenius(&bg, &s, &(n - s), order, FROB_LOG_CAP)?,
        frobenius(&bg, &s, &s, order, FROB_LOG_CAP)?,
    ))
}

fn float_background(
    g: &ModelGeometry,
    sol: &SYSolution,
    mode: &Mode,
    order: i32,
) -> Result<Background<f64>> {
    let ut = anchor_series_order(g, sol.c.unwrap_or(0.0), order)?;
    let bs = BoundarySeries::<f64>::of(g, order + 2)?;
    Background::new(&bs, ut, &mode.weights(g.n()))
}

/// F through order J ≤ n in exact arithmetic, for rational s and rational
/// tangential weights μ_i (λ = Σ μ_i ψ_i^{-2}).
pub fn frobenius_exact(
    g: &ModelGeometry,
    s: &Rat,
    weights: &[Rat],
    order: i32,
    gauge: Gauge,
) -> Result<PolyLogSeries<Rat>> {
    let n = g.n() as i32;
    if order > n {
        return Err(Error::Precondition(format!(
            "exact Frobenius data is local only through order {n}"
        )));
    }
    let bg = Background::<Rat>::local(g, weights, n, gauge)?;
    let alpha = Rat::from_i64(n as i64) - s.clone();
    frobenius(&bg, s, &alpha, order, LOG_CAP)
}

/// Trivial-mode coefficients a_j(s) of F_s = 1 + a_1(s) r + …, with their
/// first and second s-derivatives at s = n.
#[derive(Clone, Debug, Serialize)]
pub struct ACoefficients {
    pub n: usize,
    pub gauge: Gauge,
    pub exact: bool,
    /// a_j(n), j = 1..=n
    pub value: Vec<f64>,
    /// a_j'(n)
    pub d1: Vec<f64>,
    /// a_j''(n)
    pub d2: Vec<f64>,
    #[serde(skip)]
    pub d1_exact: Option<Vec<Rat>>,
}

fn a_jets<T: Scalar>(g: &ModelGeometry, gauge: Gauge) -> Result<Vec<Jet<T>>> {
    let n = g.n();
    let bg = Background::<T>::local(g, &vec![T::zero(); n], n as i32, gauge)?;
    let bj: Background<Jet<T>> = Background {
        n,
        ut: bg.ut.map(|x| Jet::constant(x.clone(), JET_LEN)),
        rp: bg.rp.map(|x| Jet::constant(x.clone(), JET_LEN)),
        r2lam: bg.r2lam.map(|x| Jet::constant(x.clone(), JET_LEN)),
    };
    let s = Jet::variable(T::from_i64(n as i64), JET_LEN);
    let alpha = Jet::constant(T::from_i64(n as i64), JET_LEN) - s.clone();
    let f = frobenius(&bj, &s, &alpha, n as i32, LOG_CAP)?;
    if f.max_log() > 0 {
        return Err(Error::Precondition("log term below order n".into()));
    }
    Ok((1..=n as i32).map(|j| f.coeff(j, 0)).collect())
}

/// a_j(s) near s = n in exact arithmetic when the profiles allow it.
pub fn a_coefficients(g: &ModelGeometry, gauge: Gauge) -> Result<ACoefficients> {
    let n = g.n();
    if let Ok(js) = a_jets::<Rat>(g, gauge) {
        let d1: Vec<Rat> = js.iter().map(|j| j.derivative(1)).collect();
        return Ok(ACoefficients {
            n,
            gauge,
            exact: true,
            value: js.iter().map(|j| Scalar::to_f64(j.value())).collect(),
            d1: d1.iter().map(Scalar::to_f64).collect(),
            d2: js
                .iter()
                .map(|j| Scalar::to_f64(&j.derivative(2)))
                .collect(),
            d1_exact: Some(d1),
        });
    }
    let js = a_jets::<f64>(g, gauge)?;
    Ok(ACoefficients {
        n,
        gauge,
        exact: false,
        value: js.iter().map(|j| *j.value()).collect(),
        d1: js.iter().map(|j| j.derivative(1)).collect(),
        d2: js.iter().map(|j| j.derivative(2)).collect(),
        d1_exact: None,
    })
}

/// a_j(s) at a given rational s (trivial mode, ḡ gauge).
pub fn a_of_s(g: &ModelGeometry, s: &Rat) -> Result<Vec<Rat>> {
    let n = g.n() as i32;
    let f = frobenius_exact(g, s, &vec![Rat::from_i64(0); g.n()], n, Gauge::Bar)?;
    Ok((1..=n).map(|j| f.coeff(j, 0)).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeScatteringDatum {
    pub s: f64,
    pub mode: String,
    #[serde(rename = "S")]
    pub s_value: f64,
    /// |αF(ε)| relative to the larger of the two matched pieces
    pub conditioning: f64,
    /// change of S when matching at 2ε instead of ε
    pub sensitivity: f64,
    pub pole_flag: Option<String>,
    pub alpha: f64,
    pub beta: f64,
    #[serde(skip)]
    pub f_series: PolyLogSeries<f64>,
    #[serde(skip)]
    pub g_series: PolyLogSeries<f64>,
}

struct NodeData {
    /// coefficient of v' after dividing by u²
    pcoef: f64,
    /// 1/u²
    u2inv: f64,
    inv_psi2: Vec<f64>,
}

/// Shared, read-only context for mode-wise scattering on a solved geometry.
pub struct Scatterer<'a> {
    pub g: &'a ModelGeometry,
    pub sol: &'a SYSolution,
    pub n: usize,
    /// Frobenius order used for matching
    pub order: i32,
    ut: PolyLogSeries<f64>,
    bs: BoundarySeries<f64>,
    mesh: Mesh,
    nodes: Vec<NodeData>,
    /// index of the center node (ball), whose equation row is replaced
    center: Option<usize>,
}

impl<'a> Scatterer<'a> {
    pub fn new(g: &'a ModelGeometry, sol: &'a SYSolution) -> Result<Scatterer<'a>> {
        let grid = sol
            .grid
            .as_ref()
            .ok_or_else(|| Error::Precondition("scattering needs a globally solved ũ".into()))?;
        let n = g.n();
        let order = n as i32 + MATCH_EXTRA;
        let ut = anchor_series_order(g, sol.c.unwrap_or(0.0), order)?;
        let bs = BoundarySeries::<f64>::of(g, order + 2)?;
        let top = g.extent();
        let mesh = Mesh::graded(MESH_START * top, top, 0.02 * top, 1.4, 0.1 * top, 24);
        let mut nodes = Vec::with_capacity(mesh.dofs());
        let mut center = None;
        for (i, r) in mesh.all_nodes().into_iter().enumerate() {
            if g.kind() == Kind::WarpedBall && (top - r).abs() < 1e-14 * top {
                center = Some(i);
                nodes.push(NodeData {
                    pcoef: 0.0,
                    u2inv: 0.0,
                    inv_psi2: vec![0.0; n],
                });
                continue;
            }
            let (a, b) = if r < sol.r0 {
                let (v, d) = ut.eval_d(r);
                (v, d)
            } else {
                let (v, d, _) = grid.eval_d2(r);
                (v, d)
            };
            let u = r * a;
            let du = a + r * b;
            let loc = g.local(r);
            let p: f64 = loc.psi.iter().map(|d| d[1] / d[0]).sum();
            nodes.push(NodeData {
                pcoef: p - (n as f64 - 1.0) * du / u,
                u2inv: 1.0 / (u * u),
                inv_psi2: loc.psi.iter().map(|d| 1.0 / (d[0] * d[0])).collect(),
            });
        }
        Ok(Scatterer {
            g,
            sol,
            n,
            order,
            ut,
            bs,
            mesh,
            nodes,
            center,
        })
    }

    /// Inner end of the interior mesh.
    pub fn r0(&self) -> f64 {
        self.mesh.breaks[0]
    }

    /// Interior solution normalized by v(ε) = 1; returns nodal values.
    fn interior(&self, s: f64, mode: &Mode) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let p = mesh.p;
        let m = mesh.elements();
        let dofs = mesh.dofs();
        let w = mode.weights(self.n);
        let sn = s * (self.n as f64 - s);
        let mut a = DMatrix::<f64>::zeros(dofs, dofs);
        let mut rhs = DVector::<f64>::zeros(dofs);
        for e in 0..m {
            let (lo, hi) = mesh.interval(e);
            let sc = 2.0 / (hi - lo);
            let base = e * (p + 1);
            for i in 1..p {
                let row = base + i;
                let nd = &self.nodes[row];
                let lam: f64 = w.iter().zip(&nd.inv_psi2).map(|(a, b)| a * b).sum();
                for j in 0..=p {
                    a[(row, base + j)] =
                        sc * sc * mesh.d2[(i, j)] + nd.pcoef * sc * mesh.d1[(i, j)];
                }
                a[(row, base + i)] += sn * nd.u2inv - lam;
            }
            if e + 1 < m {
                // value and slope continuity replace the two shared-node rows
                let (lo2, hi2) = mesh.interval(e + 1);
                let sc2 = 2.0 / (hi2 - lo2);
                let nb = (e + 1) * (p + 1);
                let r1 = base + p;
                let r2 = nb;
                a[(r1, base + p)] = 1.0;
                a[(r1, nb)] = -1.0;
                for j in 0..=p {
                    a[(r2, base + j)] = sc * mesh.d1[(p, j)];
                    a[(r2, nb + j)] -= sc2 * mesh.d1[(0, j)];
                }
            }
        }
        a[(0, 0)] = 1.0;
        rhs[0] = 1.0;
        let last = dofs - 1;
        let (lo, hi) = mesh.interval(m - 1);
        let sc = 2.0 / (hi - lo);
        let lb = (m - 1) * (p + 1);
        if mode.neumann() {
            for j in 0..=p {
                a[(last, lb + j)] = sc * mesh.d1[(p, j)];
            }
        } else {
            a[(last, last)] = 1.0;
        }
        debug_assert!(self.center.map_or(true, |c| c == last));
        a.lu()
            .solve(&rhs)
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::NearEigenvalue(0.0))
    }

    fn frobenius_pair(
        &self,
        s: f64,
        mode: &Mode,
    ) -> Result<(PolyLogSeries<f64>, PolyLogSeries<f64>)> {
        let bg = Background::new(&self.bs, self.ut.clone(), &mode.weights(self.n))?;
        let n = self.n as f64;
        Ok((
            frobenius(&bg, &s, &(n - s), self.order, FROB_LOG_CAP)?,
            frobenius(&bg, &s, &s, self.order, FROB_LOG_CAP)?,
        ))
    }

    /// S(s) on one mode for s in (−½, n + ½) away from the indicial points.
    pub fn solve(&self, s: f64, mode: &Mode) -> Result<ModeScatteringDatum> {
        mode.check(self.g)?;
        let n = self.n as f64;
        if !(s > -0.5 && s < n + 0.5) {
            return Err(Error::Precondition(format!(
                "s = {s} outside the strip (-1/2, n + 1/2)"
            )));
        }
        let q = 2.0 * s - n;
        if (q - q.round()).abs() < 1e-9 && q.round() != 0.0 {
            return Err(Error::Pole {
                location: format!("{s}"),
                residue: "use residue extraction or the extrapolating routines".into(),
            });
        }
        let (f, gs) = self.frobenius_pair(s, mode)?;
        let v = self.interior(s, mode)?;
        let rm = self.matching_radius(&f, &gs);
        let mesh = &self.mesh;
        let (v0, dv0, _) = mesh.eval_d2(&v, rm);
        let (alpha, beta, cond) = connect(&f, &gs, rm, v0, dv0)?;
        let r1 = 0.5 * rm;
        let (v1, dv1, _) = mesh.eval_d2(&v, r1);
        let (a1, b1, _) = connect(&f, &gs, r1, v1, dv1)?;
        let sv = beta / alpha;
        let sens = (b1 / a1 - sv).abs();
        if cond < 1e-10 {
            return Err(Error::NearEigenvalue(cond));
        }
        if sens > 1e-6 * sv.abs().max(1.0) {
            return Err(Error::FrobeniusOrder(sens));
        }
        let mut flag = None;
        let qd = (q - q.round()).abs();
        if qd < 0.05 && q.round() >= 1.0 {
            flag = Some(format!("near indicial point s = {}", (n + q.round()) / 2.0));
        } else if cond < 1e-6 {
            flag = Some("near sigma_pp".into());
        }
        Ok(ModeScatteringDatum {
            s,
            mode: mode.label(),
            s_value: sv,
            conditioning: cond,
            sensitivity: sens,
            pole_flag: flag,
            alpha,
            beta,
            f_series: f,
            g_series: gs,
        })
    }

    /// Largest radius where both truncated series are accurate to roundoff.
    fn matching_radius(&self, f: &PolyLogSeries<f64>, g: &PolyLogSeries<f64>) -> f64 {
        let top = self.g.extent();
        let r0 = self.r0();
        for frac in [0.3, 0.25, 0.2, 0.15] {
            let r = frac * top;
            let ok = |x: &PolyLogSeries<f64>| x.tail_estimate(r) <= 1e-14 * x.eval(r).abs();
            if ok(f) && ok(g) {
                return r;
            }
        }
        2.0 * r0.max(MESH_START * top)
    }

    pub fn s_value(&self, s: f64, mode: &Mode) -> Result<f64> {
        Ok(self.solve(s, mode)?.s_value)
    }
}

/// Solve αF + βG = v, αF' + βG' = v' at r.
fn connect(
    f: &PolyLogSeries<f64>,
    g: &PolyLogSeries<f64>,
    r: f64,
    v: f64,
    dv: f64,
) -> Result<(f64, f64, f64)> {
    let (fv, fd) = f.eval_d(r);
    let (gv, gd) = g.eval_d(r);
    let det = fv * gd - gv * fd;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::NearEigenvalue(0.0));
    }
    let alpha = (v * gd - gv * dv) / det;
    let beta = (fv * dv - fd * v) / det;
    let pf = (alpha * fv).abs();
    let pg = (beta * gv).abs();
    Ok((alpha, beta, pf / pf.max(pg).max(f64::MIN_POSITIVE)))
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidueReport {
    pub q: u32,
    pub mode: String,
    pub s0: f64,
    /// Res_{s = (n+q)/2} S(s)
    pub residue: f64,
    /// c_q
    pub c_q: f64,
    /// P_q eigenvalue −residue/c_q; absent when c_q = 0
    pub eigenvalue: Option<f64>,
    pub richardson_error: f64,
    pub fit_residual: f64,
}

/// Residue of S at (n+q)/2 from Laurent fits on a shrinking δ-ladder.
pub fn residue_extract(sc: &Scatterer, q: u32, mode: &Mode) -> Result<ResidueReport> {
    let n = sc.n;
    if q == 0 || q as usize > n {
        return Err(Error::Invalid(format!("q must lie in 1..={n}")));
    }
    let s0 = (n as f64 + q as f64) / 2.0;
    let mut est = Vec::new();
    let mut fits = Vec::new();
    for lev in 0..3 {
        let d = 0.04 / 2f64.powi(lev);
        let xs = [-2.0 * d, -d, d, 2.0 * d];
        let mut ys = [0.0; 4];
        for (y, x) in ys.iter_mut().zip(xs) {
            *y = x * sc.s_value(s0 + x, mode)?;
        }
        // x S = A + B x + C x², least squares on four samples
        let a = DMatrix::from_fn(4, 3, |i, j| xs[i].powi(j as i32));
        let b = DVector::from_column_slice(&ys);
        let (c, _) = crate::numerics::lstsq(&a, &b);
        let scale = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
        fits.push((&a * &c - &b).amax() / scale);
        est.push(c[0]);
    }
    // the misfit is odd in δ and shrinks for a simple pole; a higher-order
    // pole makes it grow as δ → 0
    let worst_fit = fits[2];
    if worst_fit > 1e-8 && fits[2] > fits[0] {
        return Err(Error::PoleModelRejected(worst_fit));
    }
    let (a, err) = richardson(&est, 4, 2);
    let cq = Scalar::to_f64(&residue_c(q, n as u32));
    Ok(ResidueReport {
        q,
        mode: mode.label(),
        s0,
        residue: a,
        c_q: cq,
        eigenvalue: if cq == 0.0 { None } else { Some(-a / cq) },
        richardson_error: err,
        fit_residual: worst_fit,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QReport {
    /// S(n)1
    pub s_at_n: f64,
    pub c_n: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub error: f64,
}

const LADDER: [f64; 4] = [0.04, 0.02, 0.01, 0.005];

/// Q_n from the holomorphic value S(n)1 = c_n Q_n.
pub fn q_curvature(sc: &Scatterer) -> Result<QReport> {
    let n = sc.n as f64;
    let mode = Mode::trivial(sc.g);
    let mut vals = Vec::new();
    for d in LADDER {
        vals.push(0.5 * (sc.s_value(n + d, &mode)? + sc.s_value(n - d, &mode)?));
    }
    let (v, err) = richardson(&vals, 2, 2);
    if err > 1e-6 * v.abs().max(1.0) {
        return Err(Error::HolomorphicExtension(err));
    }
    let cn = Scalar::to_f64(&residue_c(sc.n as u32, sc.n as u32));
    Ok(QReport {
        s_at_n: v,
        c_n: cn,
        q: v / cn,
        error: err,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeReport {
    pub value: f64,
    pub error: f64,
    pub tableau: Vec<f64>,
}

/// 𝒮 = d/ds S(s)1 at s = n by centered differences and Richardson.
pub fn s_derivative(sc: &Scatterer) -> Result<DerivativeReport> {
    let n = sc.n as f64;
    let mode = Mode::trivial(sc.g);
    let mut vals = Vec::new();
    for d in LADDER {
        vals.push((sc.s_value(n + d, &mode)? - sc.s_value(n - d, &mode)?) / (2.0 * d));
    }
    let diffs: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if diffs
        .windows(2)
        .any(|w| w[1] > w[0] && w[1] > 1e-11 * vals[0].abs().max(1.0))
    {
        return Err(Error::DerivativeUnstable(format!("tableau {vals:?}")));
    }
    let (v, err) = richardson(&vals, 2, 2);
    Ok(DerivativeReport {
        value: v,
        error: err,
        tableau: vals,
    })
}

/// Coefficient of r^{n−s₀+q} log r in F at s₀ = (n+q)/2. It equals
/// 2 Res_{s₀} S = −2c_q P_q, a route to P_q that avoids the Laurent fit.
pub fn log_coefficient(sc: &Scatterer, q: u32, mode: &Mode) -> Result<f64> {
    mode.check(sc.g)?;
    let n = sc.n as f64;
    let s0 = (n + q as f64) / 2.0;
    let order = (q as i32).max(sc.n as i32);
    let bg = Background::new(&sc.bs, sc.ut.clone(), &mode.weights(sc.n))?;
    let f = frobenius(&bg, &s0, &(n - s0), order, FROB_LOG_CAP)?;
    Ok(f.coeff(q as i32, 1))
}

/// Mode eigenvalue of the fractional operator P_{2γ} = S(n/2 + γ).
pub fn fractional_op(sc: &Scatterer, gamma: f64, mode: &Mode) -> Result<f64> {
    let n = sc.n as f64;
    if !(gamma > 0.0 && gamma < n / 2.0 + 0.5) {
        return Err(Error::Invalid(format!(
            "gamma must lie in (0, n/2 + 1/2), got {gamma}"
        )));
    }
    sc.s_value(n / 2.0 + gamma, mode)
}

/// Σ μ_i / ψ_i(0)², the eigenvalue of −Δ on the mode.
pub fn laplace_eigenvalue(g: &ModelGeometry, mode: &Mode) -> f64 {
    let psi = g.local(0.0).psi;
    mode.weights(g.n())
        .iter()
        .zip(&psi)
        .map(|(w, d)| w / (d[0] * d[0]))
        .sum()
}

/// Closed-form P_2 on a mode.
pub fn p2_closed<T: Scalar>(inv: &BoundaryInvariants<T>, lap: T) -> T {
    let n = inv.n as i64;
    lap + T::from_ratio(n - 2, 4 * (n - 1)) * (inv.r.clone() - inv.lo_norm_sq.clone())
}

/// Closed-form P_3 on a mode. `lo_hess` is L̊^{μν}∇_μ∇_ν on the mode and
/// `lo_rhat` is L̊^{μν} of the normal-form ambient Ricci.
pub fn p3_closed<T: Scalar>(inv: &BoundaryInvariants<T>, lo_hess: T, lo_rhat: T) -> T {
    let n = inv.n as i64;
    let bracket = lo_rhat - inv.lo_ric().scale_i64(2)
        + T::from_ratio(n - 1, n) * inv.h.clone() * inv.lo_norm_sq.clone();
    lo_hess + T::from_ratio(n - 3, 4 * (n - 2)) * bracket
}

/// L̊^{μν}∇_μ∇_ν on a torus mode: −Σ L̊_i (2πk_i)² / ψ_i(0)².
pub fn lo_hessian(g: &ModelGeometry, inv: &BoundaryInvariants<f64>, mode: &Mode) -> f64 {
    let psi = g.local(0.0).psi;
    -mode
        .weights(g.n())
        .iter()
        .zip(&psi)
        .zip(&inv.lo)
        .map(|((w, d), l)| l * w / (d[0] * d[0]))
        .sum::<f64>()
}

pub fn q2_closed<T: Scalar>(inv: &BoundaryInvariants<T>) -> T {
    (inv.r.clone() - inv.lo_norm_sq.clone()) * T::from_ratio(1, 2)
}

pub fn q3_closed<T: Scalar>(inv: &BoundaryInvariants<T>) -> T {
    inv.lo_rbar_ric() - inv.lo_ric().scale_i64(2)
        + T::from_ratio(2, 3) * inv.h.clone() * inv.lo_norm_sq.clone()
}

/// Second hat-gauge coefficient of F for a mode with −Δ eigenvalue `lap`.
pub fn psi2_closed<T: Scalar>(inv: &BoundaryInvariants<T>, s: &T, lap: T) -> Option<T> {
    let n = inv.n as i64;
    let nn = T::from_i64(n);
    let den = T::from_i64(n + 2) - s.scale_i64(2);
    let num = (nn - s.clone())
        * (inv.r.clone() - inv.lo_norm_sq.clone()).try_div(&T::from_i64(4 * (n - 1)))?
        + lap * T::from_ratio(1, 2);
    num.try_div(&den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Basis, GeometrySpec};
    use crate::scalar::rat;
    use crate::yamabe::sy_global_solve;

    fn spec(kind: Kind, n: usize, profiles: Vec<Vec<f64>>, symmetric: bool) -> ModelGeometry {
        ModelGeometry::new(GeometrySpec {
            kind,
            n,
            profiles,
            basis: Basis::Poly,
            symmetric,
            length: None,
            conformal: vec![],
        })
        .unwrap()
    }

    fn gamma(x: f64) -> f64 {
        statrs::function::gamma::gamma(x)
    }

    /// Connection value on hyperbolic space for degree-l harmonics.
    fn hyperbolic(n: f64, l: f64, s: f64) -> f64 {
        2f64.powf(n - 2.0 * s) * gamma(n / 2.0 - s) * gamma(l + s)
            / (gamma(s - n / 2.0) * gamma(l + n - s))
    }

    #[test]
    fn ball_matches_gamma_quotient() {
        for n in [2usize, 3] {
            let g = spec(Kind::WarpedBall, n, vec![vec![0.0, 1.0]], false);
            let sol = sy_global_solve(&g, 1e-12).unwrap();
            let sc = Scatterer::new(&g, &sol).unwrap();
            for l in [0u32, 1, 2] {
                for s in [n as f64 / 2.0 + 0.3, n as f64 + 0.25, n as f64 / 2.0 + 0.77] {
                    let d = sc.solve(s, &Mode::Ball { l }).unwrap();
                    let want = hyperbolic(n as f64, l as f64, s);
                    assert!(
                        (d.s_value - want).abs() < 1e-8 * want.abs().max(1.0),
                        "n={n} l={l} s={s}: {} vs {want}",
                        d.s_value
                    );
                }
            }
        }
    }

    #[test]
    fn functional_equation_on_slab() {
        let g = spec(
            Kind::TorusSlab,
            2,
            vec![vec![1.0, 0.6, -0.6], vec![1.1, -0.4, 0.4]],
            true,
        );
        let sol = sy_global_solve(&g, 1e-10).unwrap();
        let sc = Scatterer::new(&g, &sol).unwrap();
        for mode in ["0,0", "1,0", "1,1:odd"] {
            let m = Mode::parse(mode, &g).unwrap();
            let s = 1.3;
            let a = sc.s_value(s, &m).unwrap();
            let b = sc.s_value(2.0 - s, &m).unwrap();
            assert!((a * b - 1.0).abs() < 1e-8, "{mode}: {a} {b}");
        }
    }

    #[test]
    fn ball_residues_and_q() {
        let g = spec(Kind::WarpedBall, 2, vec![vec![0.0, 1.0]], false);
        let sol = sy_global_solve(&g, 1e-12).unwrap();
        let sc = Scatterer::new(&g, &sol).unwrap();
        for l in [1u32, 2] {
            let r = residue_extract(&sc, 2, &Mode::Ball { l }).unwrap();
            let want = (l * (l + 1)) as f64;
            assert!((r.eigenvalue.unwrap() - want).abs() < 1e-6 * want, "{r:?}");
            let r1 = residue_extract(&sc, 1, &Mode::Ball { l }).unwrap();
            assert!(r1.residue.abs() < 1e-6, "{r1:?}");
        }
        let q = q_curvature(&sc).unwrap();
        assert!((q.q - 1.0).abs() < 1e-8, "{q:?}");
        let d = s_derivative(&sc).unwrap();
        assert!((d.value - 0.5 * 2f64.ln()).abs() < 1e-7, "{d:?}");
    }

    #[test]
    fn exact_first_coefficients() {
        let g = spec(
            Kind::TorusSlab,
            3,
            vec![vec![1.0, 0.5, -0.5], vec![1.0, -0.25, 0.25], vec![2.0, 0.3]],
            false,
        );
        let inv = crate::model::boundary_invariants_exact(&g).unwrap();
        let n = 3;
        for s in [rat(7, 3), rat(-1, 5), rat(13, 4)] {
            let f =
                frobenius_exact(&g, &s, &[rat(0, 1), rat(0, 1), rat(0, 1)], 2, Gauge::Bar).unwrap();
            let want = (rat(n, 1) - s.clone()) / rat(2 * n, 1) * inv.h.clone();
            assert_eq!(f.coeff(1, 0), want);
            // hat gauge: second coefficient against the closed form
            let mu = [rat(3, 1), rat(0, 1), rat(5, 2)];
            let fh = frobenius_exact(&g, &s, &mu, 2, Gauge::Hat).unwrap();
            let psi0: Vec<Rat> = g
                .psi_series::<Rat>(1)
                .unwrap()
                .iter()
                .map(|p| p.coeff(0, 0))
                .collect();
            let lap = mu.iter().zip(&psi0).fold(rat(0, 1), |a, (m, p)| {
                a + m.clone() / (p.clone() * p.clone())
            });
            assert_eq!(fh.coeff(1, 0), rat(0, 1));
            assert_eq!(fh.coeff(2, 0), psi2_closed(&inv, &s, lap).unwrap());
        }
    }

    #[test]
    fn a_prime_two_dimensional() {
        let g = spec(
            Kind::TorusSlab,
            2,
            vec![vec![1.0, 0.5, -0.5], vec![1.0, -0.25, 0.25]],
            false,
        );
        let inv = crate::model::boundary_invariants_exact(&g).unwrap();
        let a = a_coefficients(&g, Gauge::Bar).unwrap();
        assert!(a.exact);
        let d = a.d1_exact.unwrap();
        assert_eq!(d[0], -inv.h.clone() / rat(4, 1));
        let h = inv.h.clone();
        let want = -rat(7, 96) * h.clone() * h - inv.rbar.clone() / rat(24, 1)
            + inv.r.clone() / rat(12, 1)
            - inv.lo_norm_sq.clone() / rat(12, 1);
        assert_eq!(d[1], want);
    }

    fn sym_slab(n: usize) -> ModelGeometry {
        let prof: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let a = if i % 2 == 0 { 0.6 } else { -0.4 };
                vec![1.0 + 0.1 * i as f64, a, -a]
            })
            .collect();
        spec(Kind::TorusSlab, n, prof, true)
    }

    #[test]
    fn slab_residues_match_closed_forms() {
        for n in [2usize, 3] {
            let g = sym_slab(n);
            let sol = sy_global_solve(&g, 1e-10).unwrap();
            let sc = Scatterer::new(&g, &sol).unwrap();
            let inv = crate::model::boundary_invariants(&g).unwrap();
            let gg = crate::normalform::geodesic_gauge(&sol, &g).unwrap();
            let hat = gg.invariants();
            let lo_rhat: f64 = inv.lo.iter().zip(&hat.rbar_ric).map(|(a, b)| a * b).sum();
            for k in [[1i64, 0, 0], [0, 1, 0], [1, 1, 1]] {
                let m = Mode::Torus {
                    k: k[..n].to_vec(),
                    parity: Parity::Even,
                };
                let p2 = residue_extract(&sc, 2, &m).unwrap().eigenvalue.unwrap();
                let want = p2_closed(&inv, laplace_eigenvalue(&g, &m));
                assert!((p2 - want).abs() < 1e-6 * want.abs(), "{p2} vs {want}");
                let r1 = residue_extract(&sc, 1, &m).unwrap();
                assert!(r1.residue.abs() < 1e-6 && r1.eigenvalue.is_none());
                if n == 3 {
                    let r3 = residue_extract(&sc, 3, &m).unwrap();
                    let want = p3_closed(&inv, lo_hessian(&g, &inv, &m), lo_rhat);
                    let got = r3.eigenvalue.unwrap();
                    assert!(
                        (got - want).abs() < 1e-5 * want.abs().max(1.0),
                        "{got} vs {want}"
                    );
                    let lc = log_coefficient(&sc, 3, &m).unwrap();
                    assert!((lc - 2.0 * r3.residue).abs() < 1e-6 * lc.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn q_from_scattering_is_local() {
        for n in [2usize, 3] {
            let g = sym_slab(n);
            let sol = sy_global_solve(&g, 1e-10).unwrap();
            let sc = Scatterer::new(&g, &sol).unwrap();
            let q = q_curvature(&sc).unwrap();
            let a = a_coefficients(&g, Gauge::Bar).unwrap();
            assert!(
                (q.s_at_n + a.value[n - 1]).abs() < 1e-8,
                "{q:?} {:?}",
                a.value
            );
            let inv = crate::model::boundary_invariants(&g).unwrap();
            let closed = if n == 2 {
                q2_closed(&inv)
            } else {
                0.5 * q3_closed(&inv)
            };
            assert!((q.q - closed).abs() < 1e-8, "{} vs {closed}", q.q);
        }
    }

    #[test]
    fn three_ball_s_derivative() {
        let g = spec(Kind::WarpedBall, 3, vec![vec![0.0, 1.0]], false);
        let sol = sy_global_solve(&g, 1e-12).unwrap();
        let sc = Scatterer::new(&g, &sol).unwrap();
        let d = s_derivative(&sc).unwrap();
        assert!((d.value + 2.0 / 3.0).abs() < 1e-8, "{d:?}");
        assert!(q_curvature(&sc).unwrap().q.abs() < 1e-9);
    }

    #[test]
    fn indicial_points_are_refused() {
        let g = spec(Kind::WarpedBall, 2, vec![vec![0.0, 1.0]], false);
        let sol = sy_global_solve(&g, 1e-12).unwrap();
        let sc = Scatterer::new(&g, &sol).unwrap();
        assert!(matches!(
            sc.solve(2.0, &Mode::Ball { l: 1 }),
            Err(Error::Pole { .. })
        ));
        assert!(matches!(
            sc.solve(2.6, &Mode::Ball { l: 1 }),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            sc.solve(
                1.5,
                &Mode::Torus {
                    k: vec![0, 0],
                    parity: Parity::Even
                }
            ),
            Err(Error::ModeMismatch(_))
        ));
        let p = fractional_op(&sc, 0.3, &Mode::Ball { l: 1 }).unwrap();
        assert!((p - hyperbolic(2.0, 1.0, 1.3)).abs() < 1e-8);
    }
}
