//! One line per acceptance criterion. Exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::{agree, series, unit_series};
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use num_traits::{Signed, Zero};
use syscat::constants::residue_c;
use syscat::model::{
    boundary_invariants, boundary_invariants_exact, fermi_check, Basis, GeometrySpec, Kind,
    ModelGeometry, Profile,
};
use syscat::normalform::geodesic_gauge;
use syscat::scalar::{rat, Rat};
use syscat::scattering::{
    frobenius_exact, laplace_eigenvalue, lo_hessian, p2_closed, p3_closed, psi2_closed, q2_closed,
    q_curvature, residue_extract, Gauge, Mode, Parity, Scatterer,
};
use syscat::verify::{
    check_thm_b, check_thm_c, check_thm_d, check_thm_e, covariance_suite, IdentityReport, Pipeline,
    VerifyConfig,
};
use syscat::yamabe::sy_global_solve;

type Outcome = Result<String, String>;

fn geom(kind: Kind, n: usize, profiles: Vec<Vec<f64>>, symmetric: bool) -> ModelGeometry {
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

fn ball(n: usize) -> ModelGeometry {
    geom(Kind::WarpedBall, n, vec![vec![0.0, 1.0]], false)
}

fn sym_slab(n: usize) -> ModelGeometry {
    let prof = (0..n)
        .map(|i| {
            let a = if i % 2 == 0 { 0.6 } else { -0.4 };
            vec![1.0 + 0.1 * i as f64, a, -a]
        })
        .collect();
    geom(Kind::TorusSlab, n, prof, true)
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reports_pass(reps: &[IdentityReport]) -> Outcome {
    let worst = reps
        .iter()
        .map(|r| r.residual / r.budget)
        .fold(0.0f64, f64::max);
    let failed: Vec<_> = reps
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.check.clone())
        .collect();
    ensure(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} reports, worst residual/budget {worst:.2e}", reps.len())
        } else {
            format!("{} reports, failed {failed:?}", reps.len())
        },
    )
}

fn factorial(k: u32) -> i64 {
    (1..=k as i64).product()
}

fn c1_constants() -> Outcome {
    for n in 1..=6u32 {
        for p in 1..=5u32 {
            let sign = if p % 2 == 0 { 1 } else { -1 };
            let want = rat(sign, 1) / rat(4i64.pow(p) * factorial(p) * factorial(p - 1), 1);
            if residue_c(2 * p, n) != want {
                return Err(format!("c_{} at n={n}", 2 * p));
            }
        }
        if !residue_c(1, n).is_zero() {
            return Err(format!("c_1 at n={n}"));
        }
        for p in 1..=4u32 {
            if !residue_c(2 * p + 1, n).is_positive() {
                return Err(format!("c_{} at n={n} not positive", 2 * p + 1));
            }
        }
    }
    Ok("c_2p closed form for p≤5, n≤6; c_1 = 0; c_3..c_9 > 0".into())
}

fn c2_hyperbolic() -> Outcome {
    let g = ball(3);
    let sol = sy_global_solve(&g, 1e-12).map_err(|e| e.to_string())?;
    let dev = (0..=50)
        .map(|i| {
            let r = g.extent() * i as f64 / 50.0;
            (sol.eval(r).0 - (1.0 - r / 2.0)).abs()
        })
        .fold(0.0f64, f64::max);
    let g2 = ball(2);
    let sol2 = sy_global_solve(&g2, 1e-12).map_err(|e| e.to_string())?;
    let sc = Scatterer::new(&g2, &sol2).map_err(|e| e.to_string())?;
    let q = q_curvature(&sc).map_err(|e| e.to_string())?.q;
    let inv = boundary_invariants(&g2).map_err(|e| e.to_string())?;
    let dq = (q - q2_closed(&inv)).abs();
    let half_r = (q - 0.5 * inv.r).abs();
    ensure(
        sol.residual_norm <= 1e-12 && dev <= 1e-12 && sol.lcal == 0.0 && dq <= 1e-8 && half_r <= 1e-8,
        format!(
            "residual {:.1e}, |ũ−(1−r/2)| {dev:.1e}, L = {}, |Q₂ − closed| {dq:.1e}, |Q₂ − R/2| {half_r:.1e}",
            sol.residual_norm, sol.lcal
        ),
    )
}

fn c3_frobenius() -> Outcome {
    let spots = [rat(7, 3), rat(-1, 5), rat(13, 4), rat(5, 7), rat(-9, 2)];
    let mut count = 0;
    for n in [2usize, 3] {
        let prof: Vec<Vec<f64>> =
            [vec![1.0, 0.5, -0.5], vec![1.0, -0.25, 0.25], vec![2.0, 0.3]][..n].to_vec();
        let g = geom(Kind::TorusSlab, n, prof, false);
        let inv = boundary_invariants_exact(&g).map_err(|e| e.to_string())?;
        let zero = vec![rat(0, 1); n];
        for s in &spots {
            let f = frobenius_exact(&g, s, &zero, 2, Gauge::Bar).map_err(|e| e.to_string())?;
            let f1 = (rat(n as i64, 1) - s.clone()) / rat(2 * n as i64, 1) * inv.h.clone();
            if f.coeff(1, 0) != f1 {
                return Err(format!("f₁ at n={n} s={s}"));
            }
            let fh = frobenius_exact(&g, s, &zero, 2, Gauge::Hat).map_err(|e| e.to_string())?;
            let want = psi2_closed(&inv, s, Rat::zero()).ok_or("ψ₂ undefined")?;
            if fh.coeff(2, 0) != want {
                return Err(format!("f₂ at n={n} s={s}: {} vs {want}", fh.coeff(2, 0)));
            }
            count += 1;
        }
    }
    Ok(format!("{count} exact matches of f₁ and trivial-mode f₂"))
}

fn c4_residues() -> Outcome {
    let mut worst2 = 0.0f64;
    let mut worst3 = 0.0f64;
    for n in [2usize, 3] {
        let g = sym_slab(n);
        let sol = sy_global_solve(&g, 1e-10).map_err(|e| e.to_string())?;
        let sc = Scatterer::new(&g, &sol).map_err(|e| e.to_string())?;
        let inv = boundary_invariants(&g).map_err(|e| e.to_string())?;
        let gg = geodesic_gauge(&sol, &g).map_err(|e| e.to_string())?;
        let lo_rhat: f64 = inv
            .lo
            .iter()
            .zip(&gg.invariants().rbar_ric)
            .map(|(a, b)| a * b)
            .sum();
        for k in [[1i64, 0, 0], [0, 1, 0], [1, 1, 1]] {
            let m = Mode::Torus {
                k: k[..n].to_vec(),
                parity: Parity::Even,
            };
            let p2 = residue_extract(&sc, 2, &m)
                .map_err(|e| e.to_string())?
                .eigenvalue
                .ok_or("no P₂ eigenvalue")?;
            let want = p2_closed(&inv, laplace_eigenvalue(&g, &m));
            worst2 = worst2.max((p2 - want).abs() / want.abs());
            if n == 3 {
                let p3 = residue_extract(&sc, 3, &m)
                    .map_err(|e| e.to_string())?
                    .eigenvalue
                    .ok_or("no P₃ eigenvalue")?;
                let want = p3_closed(&inv, lo_hessian(&g, &inv, &m), lo_rhat);
                worst3 = worst3.max((p3 - want).abs() / want.abs().max(1.0));
            }
        }
    }
    ensure(
        worst2 <= 1e-6 && worst3 <= 1e-5,
        format!("P₂ rel err {worst2:.1e}, P₃ rel err {worst3:.1e} (symmetric slabs)"),
    )
}

fn c5_functional_equation() -> Outcome {
    let mut worst = 0.0f64;
    for (n, modes) in [
        (2usize, ["0,0", "1,0", "1,1:odd"]),
        (3, ["0,0,0", "1,0,0", "1,1,0:odd"]),
    ] {
        let g = sym_slab(n);
        let sol = sy_global_solve(&g, 1e-10).map_err(|e| e.to_string())?;
        let sc = Scatterer::new(&g, &sol).map_err(|e| e.to_string())?;
        for mode in modes {
            let m = Mode::parse(mode, &g).map_err(|e| e.to_string())?;
            for j in 0..5 {
                let s = n as f64 / 2.0 + 0.05 + 0.09 * j as f64;
                let a = sc.s_value(s, &m).map_err(|e| e.to_string())?;
                let b = sc.s_value(n as f64 - s, &m).map_err(|e| e.to_string())?;
                worst = worst.max((a * b - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-8, format!("max |S(s)S(n−s) − 1| = {worst:.1e}"))
}

fn pipelines() -> Vec<Pipeline> {
    vec![
        Pipeline::new(ball(2), 1e-12).unwrap(),
        Pipeline::new(sym_slab(2), 1e-10).unwrap(),
        Pipeline::new(sym_slab(3), 1e-10).unwrap(),
    ]
}

fn c6_thm_b(ps: &[Pipeline], cfg: &VerifyConfig) -> Outcome {
    let reps: Vec<_> = ps.iter().map(|p| check_thm_b(p, cfg)).collect();
    reports_pass(&reps)
}

fn c7_thm_c(ps: &[Pipeline], cfg: &VerifyConfig) -> Outcome {
    let mut reps = Vec::new();
    for p in &ps[1..] {
        reps.extend(check_thm_c(p, cfg).map_err(|e| e.to_string())?);
    }
    reports_pass(&reps)
}

fn c8_thm_d(ps: &[Pipeline], cfg: &VerifyConfig) -> Outcome {
    let mut reps = Vec::new();
    for p in &ps[1..] {
        reps.push(check_thm_d(p, &Profile::poly(&[1.0]), "const", cfg).map_err(|e| e.to_string())?);
        reps.push(
            check_thm_d(p, &Profile::poly(&[1.0, -0.3, 0.3]), "radial", cfg)
                .map_err(|e| e.to_string())?,
        );
    }
    reports_pass(&reps)
}

fn c9_thm_e(slab3: &Pipeline, cfg: &VerifyConfig) -> Outcome {
    let b4 = Pipeline::new(ball(3), 1e-12).map_err(|e| e.to_string())?;
    let (_, rb) = check_thm_e(&b4, cfg).map_err(|e| e.to_string())?;
    let (_, rs) = check_thm_e(slab3, cfg).map_err(|e| e.to_string())?;
    reports_pass(&[rb, rs])
}

fn c10_covariance(ps: &[Pipeline], cfg: &VerifyConfig) -> Outcome {
    let mut reps = Vec::new();
    for (p, mode) in ps[1..].iter().zip(["1,0", "1,0,0"]) {
        let m = Mode::parse(mode, &p.g).map_err(|e| e.to_string())?;
        reps.extend(covariance_suite(p, 0.2, &[(2, m)], cfg).map_err(|e| e.to_string())?);
    }
    reports_pass(&reps)
}

fn c11_boundary_expansions(ps: &[Pipeline]) -> Outcome {
    let mut fermi = 0.0f64;
    for n in [2usize, 3] {
        for g in [sym_slab(n), ball(n)] {
            for rep in fermi_check(&g, 3).map_err(|e| e.to_string())? {
                fermi = fermi.max(rep.max_residual);
            }
        }
    }
    let mut jets = 0.0f64;
    let mut ids = 0.0f64;
    for p in ps {
        for id in p.gauge.normal_form_check() {
            let rel = id.residual / id.rhs.abs().max(1.0);
            if id.name.starts_with("omega") {
                jets = jets.max(rel);
            } else if id.source != "numeric" {
                ids = ids.max(rel);
            }
        }
    }
    ensure(
        fermi <= 1e-10 && jets <= 1e-8 && ids <= 1e-8,
        format!("Fermi {fermi:.1e}, ω jets {jets:.1e}, gauge identities {ids:.1e}"),
    )
}

fn property<S: proptest::strategy::Strategy>(
    name: &str,
    strategy: S,
    law: impl Fn(S::Value) -> bool,
) -> std::result::Result<(), String> {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(1000)
    });
    runner
        .run(&strategy, |v| {
            if law(v) {
                Ok(())
            } else {
                Err(TestCaseError::fail(name.to_string()))
            }
        })
        .map_err(|e| format!("{name}: {e}"))
}

fn c12_properties() -> Outcome {
    property(
        "associativity",
        (series(1, 0), series(1, 0), series(1, 0)),
        |(a, b, c)| agree(&a.mul(&b).mul(&c), &a.mul(&b.mul(&c))),
    )?;
    property(
        "distributivity",
        (series(1, 0), series(1, 0), series(1, 0)),
        |(a, b, c)| {
            agree(
                &a.mul(&b.add(&c).unwrap()),
                &a.mul(&b).add(&a.mul(&c)).unwrap(),
            )
        },
    )?;
    property("commutativity", (series(2, 0), series(2, 0)), |(a, b)| {
        agree(&a.mul(&b), &b.mul(&a))
    })?;
    property("exp∘log", unit_series(), |a| {
        agree(&a.log().unwrap().exp().unwrap(), &a)
    })?;
    property("log∘exp", series(1, 1), |w| {
        agree(&w.exp().unwrap().log().unwrap(), &w)
    })?;
    property("Leibniz", (series(2, 0), series(2, 0)), |(a, b)| {
        let l = a.mul(&b).derivative();
        let r = a.derivative().mul(&b).add(&a.mul(&b.derivative())).unwrap();
        agree(&l, &r)
    })?;
    Ok("6 laws × 1000 random cases, zero failures".into())
}

fn main() {
    let cfg = VerifyConfig::default();
    let mut failures = 0;
    let mut line = |k: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(m) => println!("criterion {k:>2} PASS {name}: {m} [{secs:.1}s]"),
            Err(m) => {
                failures += 1;
                println!("criterion {k:>2} FAIL {name}: {m} [{secs:.1}s]");
            }
        }
    };
    line(1, "residue constants", &c1_constants);
    line(2, "hyperbolic baseline", &c2_hyperbolic);
    line(3, "Frobenius vs recursion", &c3_frobenius);
    line(4, "residue vs operator", &c4_residues);
    line(5, "functional equation", &c5_functional_equation);
    let ps = pipelines();
    line(6, "log coefficient", &|| c6_thm_b(&ps, &cfg));
    line(7, "renormalized volume", &|| c7_thm_c(&ps, &cfg));
    line(8, "conformal primitive", &|| c8_thm_d(&ps, &cfg));
    line(9, "Gauss-Bonnet", &|| c9_thm_e(&ps[2], &cfg));
    line(10, "covariance", &|| c10_covariance(&ps, &cfg));
    line(11, "boundary expansions", &|| c11_boundary_expansions(&ps));
    line(12, "series properties", &c12_properties);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
