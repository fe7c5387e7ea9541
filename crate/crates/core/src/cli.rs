//! Command-line surface: argument parsing, orchestration and artifact
//! output. Exit codes: 0 success, 1 check or computation failure, 2 usage
//! or malformed configuration.

use crate::constants::coeff_table;
use crate::error::Error;
use crate::model::{Kind, ModelGeometry, Profile};
use crate::normalform::geodesic_gauge;
use crate::scalar::{rat, Rat};
use crate::scattering::{
    fractional_op, q2_closed, q3_closed, q_curvature, residue_extract, s_derivative, Mode,
    Scatterer,
};
use crate::verify::{
    check_cor_f, check_thm_b, check_thm_c, check_thm_d, check_thm_e, covariance_suite,
    summary_table, IdentityReport, Pipeline, VerifyConfig,
};
use crate::yamabe::{sy_global_solve, volume_expansion};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Overrides `--out-dir` when set.
pub const OUT_DIR_ENV: &str = "SYSCAT_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "syscat",
    version,
    about = "Singular Yamabe scattering on model geometries"
)]
pub struct Cli {
    /// Directory for written artifacts (overridden by SYSCAT_OUT_DIR).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GeomArgs {
    /// Geometry spec (JSON).
    #[arg(long)]
    pub geom: PathBuf,
    /// Tolerance of the singular Yamabe boundary value problem.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    /// Comma-separated subset of B,C,D,E,F,COV.
    #[arg(long, default_value = "B,C")]
    pub checks: String,
    #[arg(long, default_value_t = 1.0)]
    pub budget_scale: f64,
    /// Step in α for the conformal-primitive check.
    #[arg(long, default_value_t = 0.05)]
    pub alpha_step: f64,
    /// Radial ω coefficients (polynomial in the base distance) for D and F.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub omega: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Residue constants c_q and spot values of c_{q,s}.
    Constants {
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 10)]
        qmax: u32,
        /// Rational spot points, e.g. 1/3,5/2.
        #[arg(long, value_delimiter = ',')]
        s: Vec<String>,
    },
    /// Solve the singular Yamabe problem; writes a ledger JSON and a CSV grid.
    Yamabe {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// ω jets and geodesic-gauge identity residuals.
    Gauge {
        #[command(flatten)]
        geom: GeomArgs,
    },
    /// Mode-wise S(s) on an s-grid, as CSV.
    Scatter {
        #[command(flatten)]
        geom: GeomArgs,
        /// a:b:step
        #[arg(long)]
        s_grid: String,
        /// Modes separated by ';', e.g. "0,0;1,0" or "l=0;l=2".
        #[arg(long)]
        modes: String,
        #[arg(long, default_value = "scatter.csv")]
        out: PathBuf,
    },
    /// P_q eigenvalues from Laurent residues at s = (n+q)/2.
    Residues {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        q: u32,
        #[arg(long)]
        modes: Option<String>,
    },
    /// Q from S(n)1, 𝒮, and the local closed form.
    Qcurv {
        #[command(flatten)]
        geom: GeomArgs,
    },
    /// Fractional operator P_{2γ} = S(n/2 + γ) mode-wise.
    Frac {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        modes: Option<String>,
    },
    /// Global identity checks; writes reports.json and prints a table.
    Verify {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        checks: CheckArgs,
    },
    /// Full pipeline with a manifest of hashed artifacts.
    Run {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        checks: CheckArgs,
        #[arg(long)]
        s_grid: Option<String>,
        #[arg(long)]
        modes: Option<String>,
        /// Seed recorded in the config; the pipeline itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_) | Error::ModeMismatch(_) | Error::Io(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failure(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Tolerance tiers echoed into every run.
#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub exact: f64,
    pub bvp: f64,
    pub scattering: f64,
    pub fitting: f64,
}

impl Tolerances {
    fn new(bvp: f64) -> CliResult<Self> {
        let t = Tolerances {
            exact: 0.0,
            bvp,
            scattering: 1e-8f64.max(bvp),
            fitting: 1e-4f64.max(bvp),
        };
        if !(bvp > 0.0 && t.exact <= t.bvp && t.bvp <= t.scattering && t.scattering <= t.fitting) {
            return Err(CliError::Usage(format!(
                "tolerance tiers not monotone: {t:?}"
            )));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub geometry: String,
    pub tolerances: Tolerances,
    pub s_grid: Option<String>,
    pub modes: Vec<String>,
    #[serde(skip)]
    pub out_dir: String,
    pub seed: u64,
    pub checks: Vec<String>,
    pub budget_scale: f64,
    pub alpha_step: f64,
}

/// Files collected in memory and written by one writer at the end.
#[derive(Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), bytes.into());
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, v: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(v)
            .map_err(|e| CliError::Failure(format!("serialize {name}: {e}")))?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    pub fn manifest(&self) -> serde_json::Value {
        let files: Vec<serde_json::Value> = self
            .files
            .iter()
            .map(|(name, b)| {
                serde_json::json!({
                    "path": name,
                    "bytes": b.len(),
                    "sha256": hex::encode(Sha256::digest(b)),
                })
            })
            .collect();
        serde_json::json!({ "files": files })
    }

    pub fn write(mut self, dir: &Path, with_manifest: bool) -> CliResult<Vec<PathBuf>> {
        if with_manifest {
            let m = self.manifest();
            self.add_json("manifest.json", &m)?;
        }
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("output dir {}: {e}", dir.display())))?;
        let mut out = Vec::new();
        for (name, bytes) in &self.files {
            let p = dir.join(name);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", parent.display())))?;
            }
            std::fs::write(&p, bytes)
                .map_err(|e| CliError::Usage(format!("write {}: {e}", p.display())))?;
            out.push(p);
        }
        Ok(out)
    }
}

pub fn out_dir(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    }
}

pub fn load_geometry(path: &Path) -> CliResult<ModelGeometry> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("geometry {}: {e}", path.display())))?;
    ModelGeometry::from_json(&text)
        .map_err(|e| CliError::Usage(format!("geometry {}: {e}", path.display())))
}

/// Parse `a:b:step` into the grid points a, a+step, … ≤ b.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("s-grid must be a:b:step, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let (a, b, h) = (v[0], v[1], v[2]);
    if !(h > 0.0) || b < a || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    let m = ((b - a) / h + 1e-9).floor() as usize;
    if m > 100_000 {
        return Err(CliError::Usage("s-grid too large".into()));
    }
    Ok((0..=m).map(|i| a + h * i as f64).collect())
}

pub fn parse_modes(s: Option<&str>, g: &ModelGeometry) -> CliResult<Vec<Mode>> {
    match s {
        None => Ok(vec![Mode::trivial(g)]),
        Some(s) => s
            .split(';')
            .filter(|t| !t.trim().is_empty())
            .map(|t| Mode::parse(t, g).map_err(CliError::from))
            .collect(),
    }
}

fn parse_checks(s: &str) -> CliResult<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for c in s.split(',').map(|c| c.trim().to_uppercase()) {
        if c.is_empty() {
            continue;
        }
        if !["B", "C", "D", "E", "F", "COV"].contains(&c.as_str()) {
            return Err(CliError::Usage(format!("unknown check '{c}'")));
        }
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no checks selected".into()));
    }
    Ok(out)
}

fn parse_rat(s: &str) -> CliResult<Rat> {
    let bad = || CliError::Usage(format!("bad rational '{s}'"));
    match s.split_once('/') {
        Some((a, b)) => {
            let a = a.trim().parse::<i64>().map_err(|_| bad())?;
            let b = b.trim().parse::<i64>().map_err(|_| bad())?;
            if b == 0 {
                return Err(bad());
            }
            Ok(rat(a, b))
        }
        None => Ok(rat(s.trim().parse::<i64>().map_err(|_| bad())?, 1)),
    }
}

fn print_json<T: Serialize>(v: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Failure(e.to_string()))?;
    println!("{s}");
    Ok(())
}

/// Default radial ω with the given boundary value, even about the ball
/// center or the slab midplane.
fn default_radial(g: &ModelGeometry, w0: f64, amp: f64) -> Profile {
    let l = g.base_extent();
    Profile::poly(&[w0, -2.0 * amp * l, amp])
}

fn check_checks_fit(checks: &[String], g: &ModelGeometry) -> CliResult<()> {
    for c in checks {
        let ok = match c.as_str() {
            "B" | "C" | "D" | "COV" => (2..=3).contains(&g.n()),
            "E" => g.n() == 3,
            "F" => g.n() == 3 && g.kind() == Kind::WarpedBall,
            _ => false,
        };
        if !ok {
            return Err(CliError::Usage(format!(
                "check {c} does not apply to a {:?} geometry with n = {}",
                g.kind(),
                g.n()
            )));
        }
    }
    Ok(())
}

/// Run the selected checks on one pipeline, independent checks in parallel.
pub fn run_checks(
    p: &Pipeline,
    checks: &[String],
    cfg: &VerifyConfig,
    omega: Option<&[f64]>,
) -> CliResult<Vec<IdentityReport>> {
    let g = &p.g;
    let radial_d = match omega {
        Some(c) => Profile::poly(c),
        None => default_radial(g, 1.0, 0.15),
    };
    let radial_f = match omega {
        Some(c) => Profile::poly(c),
        None => default_radial(g, 0.3, 0.2),
    };
    let groups: Vec<crate::Result<Vec<IdentityReport>>> = checks
        .par_iter()
        .map(|c| -> crate::Result<Vec<IdentityReport>> {
            match c.as_str() {
                "B" => Ok(vec![check_thm_b(p, cfg)]),
                "C" => check_thm_c(p, cfg),
                "D" => Ok(vec![
                    check_thm_d(p, &Profile::poly(&[1.0]), "constant", cfg)?,
                    check_thm_d(p, &radial_d, "radial", cfg)?,
                ]),
                "E" => Ok(vec![check_thm_e(p, cfg)?.1]),
                "F" => Ok(vec![
                    check_cor_f(p, &Profile::poly(&[0.3]), "constant", cfg)?,
                    check_cor_f(p, &radial_f, "radial", cfg)?,
                ]),
                "COV" => {
                    let mode = match g.kind() {
                        Kind::TorusSlab => {
                            let mut k = vec![0i64; g.n()];
                            k[0] = 1;
                            Mode::Torus {
                                k,
                                parity: crate::scattering::Parity::Even,
                            }
                        }
                        Kind::WarpedBall => Mode::Ball { l: 1 },
                    };
                    covariance_suite(p, 0.2, &[(2, mode)], cfg)
                }
                _ => unreachable!("checks are validated"),
            }
        })
        .collect();
    let mut out = Vec::new();
    for grp in groups {
        out.extend(grp?);
    }
    Ok(out)
}

fn scatter_csv(sc: &Scatterer, grid: &[f64], modes: &[Mode]) -> String {
    let pts: Vec<(&Mode, f64)> = modes
        .iter()
        .flat_map(|m| grid.iter().map(move |&s| (m, s)))
        .collect();
    let rows: Vec<String> = pts
        .par_iter()
        .map(|(m, s)| match sc.solve(*s, m) {
            Ok(d) => format!(
                "{},{:.6},{:.15e},{:.6e}\n",
                m.label(),
                s,
                d.s_value,
                d.conditioning
            ),
            Err(_) => format!("{},{:.6},nan,nan\n", m.label(), s),
        })
        .collect();
    let mut out = String::from("mode,s,S,conditioning\n");
    for r in rows {
        out.push_str(&r);
    }
    out
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let dir = out_dir(cli.out_dir.as_deref());
    match cli.command {
        Command::Constants { n, qmax, s } => {
            if n == 0 || qmax == 0 {
                return Err(CliError::Usage("n and qmax must be positive".into()));
            }
            let spots = s
                .iter()
                .map(|x| parse_rat(x))
                .collect::<CliResult<Vec<_>>>()?;
            print_json(&coeff_table(n, qmax, &spots))
        }
        Command::Yamabe { geom, out, samples } => {
            let g = load_geometry(&geom.geom)?;
            Tolerances::new(geom.tol)?;
            let sol = sy_global_solve(&g, geom.tol)?;
            let ledger = volume_expansion(&sol, &g)?;
            let doc = serde_json::json!({
                "tolerance": geom.tol,
                "solution": sol.summary(),
                "ledger": ledger,
            });
            print_json(&doc)?;
            if let Some(out) = out {
                let mut a = Artifacts::default();
                let name = out.to_string_lossy().to_string();
                let csv = out.with_extension("csv").to_string_lossy().to_string();
                a.add_json(&name, &doc)?;
                a.add(&csv, sol.grid_csv(&g, samples));
                a.write(&dir, false)?;
            }
            Ok(())
        }
        Command::Gauge { geom } => {
            let g = load_geometry(&geom.geom)?;
            let sol = sy_global_solve(&g, geom.tol)?;
            let gg = geodesic_gauge(&sol, &g)?;
            let checks = gg.normal_form_check();
            let worst = checks
                .iter()
                .filter(|c| c.source != "numeric")
                .fold(0.0f64, |m, c| m.max(c.residual));
            print_json(&serde_json::json!({
                "tolerance": geom.tol,
                "gauge": gg.summary(),
                "max_formal_residual": worst,
            }))
        }
        Command::Scatter {
            geom,
            s_grid,
            modes,
            out,
        } => {
            let g = load_geometry(&geom.geom)?;
            let grid = parse_grid(&s_grid)?;
            let modes = parse_modes(Some(&modes), &g)?;
            let sol = sy_global_solve(&g, geom.tol)?;
            let sc = Scatterer::new(&g, &sol)?;
            let csv = scatter_csv(&sc, &grid, &modes);
            let mut a = Artifacts::default();
            a.add(&out.to_string_lossy(), csv);
            for p in a.write(&dir, false)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Residues { geom, q, modes } => {
            let g = load_geometry(&geom.geom)?;
            if q == 0 {
                return Err(CliError::Usage("q must be positive".into()));
            }
            let modes = parse_modes(modes.as_deref(), &g)?;
            let sol = sy_global_solve(&g, geom.tol)?;
            let sc = Scatterer::new(&g, &sol)?;
            let reps = modes
                .par_iter()
                .map(|m| residue_extract(&sc, q, m))
                .collect::<crate::Result<Vec<_>>>()?;
            print_json(&reps)
        }
        Command::Qcurv { geom } => {
            let g = load_geometry(&geom.geom)?;
            let sol = sy_global_solve(&g, geom.tol)?;
            let sc = Scatterer::new(&g, &sol)?;
            let q = q_curvature(&sc)?;
            let sd = s_derivative(&sc)?;
            let inv = crate::model::boundary_invariants(&g)?;
            let closed = match g.n() {
                2 => Some(q2_closed(&inv)),
                3 => Some(0.5 * q3_closed(&inv)),
                _ => None,
            };
            print_json(&serde_json::json!({
                "tolerance": geom.tol,
                "Q": q,
                "S_prime": sd,
                "Q_closed_form": closed,
            }))
        }
        Command::Frac { geom, gamma, modes } => {
            let g = load_geometry(&geom.geom)?;
            let modes = parse_modes(modes.as_deref(), &g)?;
            let sol = sy_global_solve(&g, geom.tol)?;
            let sc = Scatterer::new(&g, &sol)?;
            let vals = modes
                .iter()
                .map(|m| {
                    fractional_op(&sc, gamma, m).map(
                        |v| serde_json::json!({ "mode": m.label(), "gamma": gamma, "value": v }),
                    )
                })
                .collect::<crate::Result<Vec<_>>>()?;
            print_json(&vals)
        }
        Command::Verify { geom, checks } => {
            let g = load_geometry(&geom.geom)?;
            let sel = parse_checks(&checks.checks)?;
            check_checks_fit(&sel, &g)?;
            Tolerances::new(geom.tol)?;
            let cfg = VerifyConfig {
                bvp_tol: geom.tol,
                budget_scale: checks.budget_scale,
                alpha_step: checks.alpha_step,
            };
            let p = Pipeline::new(g, geom.tol)?;
            let reports = run_checks(&p, &sel, &cfg, checks.omega.as_deref())?;
            print!("{}", summary_table(&reports));
            let mut a = Artifacts::default();
            a.add_json("reports.json", &reports)?;
            a.write(&dir, false)?;
            verdict(&reports)
        }
        Command::Run {
            geom,
            checks,
            s_grid,
            modes,
            seed,
        } => {
            let g = load_geometry(&geom.geom)?;
            let sel = parse_checks(&checks.checks)?;
            check_checks_fit(&sel, &g)?;
            let tiers = Tolerances::new(geom.tol)?;
            let grid = s_grid.as_deref().map(parse_grid).transpose()?;
            let mode_list = parse_modes(modes.as_deref(), &g)?;
            let config = RunConfig {
                geometry: geom.geom.to_string_lossy().to_string(),
                tolerances: tiers,
                s_grid: s_grid.clone(),
                modes: mode_list.iter().map(Mode::label).collect(),
                out_dir: dir.to_string_lossy().to_string(),
                seed,
                checks: sel.clone(),
                budget_scale: checks.budget_scale,
                alpha_step: checks.alpha_step,
            };
            let cfg = VerifyConfig {
                bvp_tol: geom.tol,
                budget_scale: checks.budget_scale,
                alpha_step: checks.alpha_step,
            };
            let p = Pipeline::new(g, geom.tol)?;
            let mut a = Artifacts::default();
            a.add_json("config.json", &config)?;
            a.add_json(
                "yamabe.json",
                &serde_json::json!({ "solution": p.sol.summary(), "ledger": p.ledger }),
            )?;
            a.add("yamabe_grid.csv", p.sol.grid_csv(&p.g, 200));
            a.add_json("gauge.json", &p.gauge.summary())?;
            a.add_json(
                "qcurv.json",
                &serde_json::json!({ "Q": p.q, "S_prime": p.s_deriv }),
            )?;
            if let Some(grid) = grid {
                let sc = Scatterer::new(&p.g, &p.sol)?;
                a.add("scatter.csv", scatter_csv(&sc, &grid, &mode_list));
            }
            let reports = run_checks(&p, &sel, &cfg, checks.omega.as_deref())?;
            let table = summary_table(&reports);
            a.add_json("reports.json", &reports)?;
            a.add("summary.txt", table.clone());
            a.write(&dir, true)?;
            print!("{table}");
            verdict(&reports)
        }
    }
}

fn verdict(reports: &[IdentityReport]) -> CliResult<()> {
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.check.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "checks failed: {} (see reports.json)",
            failed.join(", ")
        )))
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}
