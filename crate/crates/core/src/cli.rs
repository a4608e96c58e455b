//! Command-line front end: TOML config in, JSON summary and CSV fields out.
//!
//! One process runs one command. `solve` and `classical` produce a solution
//! field and its estimate report; `oracle` integrates the radial profile;
//! `verify` runs the spectral property suites; `diagnose` re-evaluates the
//! functional diagnostics on a saved field; `convergence` repeats a solve
//! over a list of spacings and reports observed orders. The summary JSON is
//! written even when a run fails, with the error recorded, and is
//! byte-identical across runs of the same config and seed.

use crate::assembly::{AssemblyError, Closure, DiscreteProblem, SampleTable, ScalarSpec};
use crate::geometry::{make_ball, make_ellipsoid, ConvexBody, GeometryError};
use crate::grid::{Grid, GridError};
use crate::harness::{
    barrier_diag, estimate_report, gradient_aux_diag, identity_residual, ltu_diag,
    run_lemma_suites, DiagnosticSpec, GradientRequest, HarnessError,
};
use crate::oracle::{compare, radial_solve, OracleError, RadialBc, RadialProblem, RadialSolution};
use crate::solver::{
    classical_solve, solve_auto, EpsPathConfig, HomotopyConfig, NewtonConfig, SolveSpec,
    SolverError,
};
use crate::specops::{phase_classify, PhaseClass, PhaseSpec, SpectralError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "slneumann", version, about = "Neumann solver for arctan-eigenvalue equations")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Solve the boundary-value problem with the configured closure.
    Solve(CommonArgs),
    /// Recover the classical slope constant along the penalty path.
    Classical(CommonArgs),
    /// Integrate the radial profile and write it as CSV.
    Oracle(CommonArgs),
    /// Run the spectral property suites on level-set samples.
    Verify(CommonArgs),
    /// Evaluate estimate and functional diagnostics on a saved field.
    Diagnose(CommonArgs),
    /// Repeat the solve over grid.h_list and report observed orders.
    Convergence(CommonArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides output.dir from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for samplers and perturbed starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reserved concurrency cap; execution is deterministic and sequential.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

// ---------------------------------------------------------------- config --

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemCfg,
    #[serde(default)]
    pub domain: DomainCfg,
    #[serde(default)]
    pub grid: GridCfg,
    #[serde(default)]
    pub solver: SolverCfg,
    #[serde(default)]
    pub output: OutputCfg,
    #[serde(default)]
    pub verify: VerifyCfg,
    pub diagnose: Option<DiagnoseCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemCfg {
    pub n: usize,
    /// Number, or an expression: "pi/2", "3pi/4", "critical", "critical+0.2".
    pub theta: ThetaCfg,
    pub f: ScalarCfg,
    /// Boundary data; defaults to 0.
    pub phi: Option<ScalarCfg>,
    /// "robin" (u_nu + u = phi), { epsilon = e }, { classical = lambda };
    /// the bare string "classical" selects the penalty-path recovery and is
    /// only meaningful to the classical command. Defaults to "robin".
    pub bc: Option<BcCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaCfg {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarCfg {
    /// Constant.
    Const(f64),
    /// a + b |x|^2.
    Quadratic { a: f64, b: f64 },
    /// Lattice samples x,y[,z],value; path relative to the config file.
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BcCfg {
    Name(String),
    Epsilon { epsilon: f64 },
    Classical { classical: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    #[serde(default = "d_kind")]
    pub kind: String,
    pub radius: Option<f64>,
    pub semi_axes: Option<Vec<f64>>,
}

impl Default for DomainCfg {
    fn default() -> Self {
        DomainCfg { kind: d_kind(), radius: None, semi_axes: None }
    }
}

fn d_kind() -> String {
    "ball".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub h: Option<f64>,
    /// Convergence study spacings, finest last.
    pub h_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_backtrack")]
    pub backtrack: f64,
    #[serde(default = "d_min_step")]
    pub min_step: f64,
    #[serde(default = "d_dt0")]
    pub dt0: f64,
    #[serde(default = "d_dt_min")]
    pub dt_min: f64,
    /// Penalty path for the classical command; defaults to 2^0 .. 2^-10.
    pub eps_list: Option<Vec<f64>>,
    #[serde(default = "d_diverge")]
    pub diverge_limit: usize,
    /// Relative amplitude of seeded noise on the initial guess.
    pub perturb: Option<f64>,
}

impl Default for SolverCfg {
    fn default() -> Self {
        SolverCfg {
            tol: d_tol(),
            max_iter: d_max_iter(),
            backtrack: d_backtrack(),
            min_step: d_min_step(),
            dt0: d_dt0(),
            dt_min: d_dt_min(),
            eps_list: None,
            diverge_limit: d_diverge(),
            perturb: None,
        }
    }
}

fn d_tol() -> f64 {
    NewtonConfig::default().tol
}
fn d_max_iter() -> usize {
    NewtonConfig::default().max_iter
}
fn d_backtrack() -> f64 {
    NewtonConfig::default().backtrack
}
fn d_min_step() -> f64 {
    NewtonConfig::default().min_step
}
fn d_dt0() -> f64 {
    HomotopyConfig::default().dt0
}
fn d_dt_min() -> f64 {
    HomotopyConfig::default().dt_min
}
fn d_diverge() -> usize {
    EpsPathConfig::default().diverge_limit
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    pub dir: Option<PathBuf>,
    #[serde(default = "d_true")]
    pub field: bool,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg { dir: None, field: true }
    }
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCfg {
    #[serde(default = "d_count")]
    pub count: usize,
}

impl Default for VerifyCfg {
    fn default() -> Self {
        VerifyCfg { count: d_count() }
    }
}

fn d_count() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseCfg {
    /// Saved field CSV from a previous solve, relative to the config file.
    pub field: PathBuf,
    /// Collar width override.
    pub mu: Option<f64>,
}

// ---------------------------------------------------------------- errors --

/// Anything that stops a run: `exit` distinguishes bad configuration (2)
/// from failures of a well-posed run (1).
#[derive(Debug)]
pub struct RunError {
    pub kind: &'static str,
    pub message: String,
    pub exit: i32,
}

impl RunError {
    fn config(message: impl Into<String>) -> RunError {
        RunError { kind: "config", message: message.into(), exit: 2 }
    }
    fn run(kind: &'static str, message: impl Into<String>) -> RunError {
        RunError { kind, message: message.into(), exit: 1 }
    }
}

impl From<SolverError> for RunError {
    fn from(e: SolverError) -> Self {
        RunError::run("solver", e.to_string())
    }
}
impl From<OracleError> for RunError {
    fn from(e: OracleError) -> Self {
        RunError::run("oracle", e.to_string())
    }
}
impl From<HarnessError> for RunError {
    fn from(e: HarnessError) -> Self {
        RunError::run("harness", e.to_string())
    }
}
impl From<GeometryError> for RunError {
    fn from(e: GeometryError) -> Self {
        RunError::config(e.to_string())
    }
}
impl From<GridError> for RunError {
    fn from(e: GridError) -> Self {
        RunError::config(e.to_string())
    }
}
impl From<AssemblyError> for RunError {
    fn from(e: AssemblyError) -> Self {
        RunError::config(e.to_string())
    }
}
impl From<SpectralError> for RunError {
    fn from(e: SpectralError) -> Self {
        RunError::config(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorRecord {
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: u32,
    version: &'static str,
    command: &'static str,
    seed: u64,
    threads: usize,
    config: Option<&'a RunConfig>,
    result: Option<Value>,
    error: Option<ErrorRecord>,
}

// --------------------------------------------------------------- parsing --

/// "pi", "pi/2", "3pi/4", "1.5pi", a plain number, or "critical" with an
/// optional +/- offset in the same grammar; critical means (n-2) pi/2.
fn parse_theta(cfg: &ThetaCfg, n: usize) -> Result<f64, RunError> {
    let expr = match cfg {
        ThetaCfg::Num(v) => return Ok(*v),
        ThetaCfg::Expr(s) => s.replace(' ', ""),
    };
    let bad = || RunError::config(format!("cannot parse theta expression {expr:?}"));
    if let Some(rest) = expr.strip_prefix("critical") {
        let base = (n as f64 - 2.0) * FRAC_PI_2;
        if rest.is_empty() {
            return Ok(base);
        }
        let (sign, term) = match rest.split_at(1) {
            ("+", t) => (1.0, t),
            ("-", t) => (-1.0, t),
            _ => return Err(bad()),
        };
        return Ok(base + sign * parse_pi_term(term).ok_or_else(bad)?);
    }
    parse_pi_term(&expr).ok_or_else(bad)
}

fn parse_pi_term(s: &str) -> Option<f64> {
    match s.find("pi") {
        Some(k) => {
            let coef_str = s[..k].trim_end_matches('*');
            let coef = if coef_str.is_empty() { 1.0 } else { coef_str.parse::<f64>().ok()? };
            let denom = match &s[k + 2..] {
                "" => 1.0,
                d => d.strip_prefix('/')?.parse::<f64>().ok()?,
            };
            Some(coef * PI / denom)
        }
        None => s.parse::<f64>().ok(),
    }
}

impl ScalarCfg {
    fn resolve(&self, base: &Path) -> Result<ScalarSpec, RunError> {
        match self {
            ScalarCfg::Const(c) => Ok(ScalarSpec::Const(*c)),
            ScalarCfg::Quadratic { a, b } => Ok(ScalarSpec::Quadratic { a: *a, b: *b }),
            ScalarCfg::Csv { csv } => {
                let path = if csv.is_relative() { base.join(csv) } else { csv.clone() };
                Ok(ScalarSpec::Table(Arc::new(load_table(&path)?)))
            }
        }
    }

    fn is_radial(&self) -> bool {
        matches!(self, ScalarCfg::Const(_) | ScalarCfg::Quadratic { .. })
    }
}

/// Lattice samples from CSV columns x,y[,z],value. The spacing is inferred
/// as the smallest positive coordinate gap and every coordinate must sit on
/// that lattice.
fn load_table(path: &Path) -> Result<SampleTable, RunError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| RunError::config(format!("{}: {e}", path.display())))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let dim = match cols.as_slice() {
        ["x", "y", "value"] => 2,
        ["x", "y", "z", "value"] => 3,
        _ => {
            return Err(RunError::config(format!(
                "{}: expected header x,y[,z],value",
                path.display()
            )))
        }
    };
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
        let mut row = [0.0f64; 4];
        for (k, field) in rec.iter().enumerate().take(dim + 1) {
            row[if k < dim { k } else { 3 }] = field
                .parse::<f64>()
                .map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(RunError::config(format!("{}: no samples", path.display())));
    }
    let mut h = f64::INFINITY;
    for a in 0..dim {
        let mut coords: Vec<f64> = rows.iter().map(|r| r[a]).collect();
        coords.sort_by(f64::total_cmp);
        for w in coords.windows(2) {
            let gap = w[1] - w[0];
            if gap > 1e-12 {
                h = h.min(gap);
            }
        }
    }
    if !h.is_finite() {
        return Err(RunError::config(format!("{}: degenerate lattice", path.display())));
    }
    let mut values = std::collections::HashMap::with_capacity(rows.len());
    for row in &rows {
        let mut key = [0i64; 3];
        for a in 0..dim {
            let s = row[a] / h;
            let k = s.round();
            if (s - k).abs() > 1e-6 {
                return Err(RunError::config(format!(
                    "{}: coordinate {} is off the lattice with spacing {h}",
                    path.display(),
                    row[a]
                )));
            }
            key[a] = k as i64;
        }
        values.insert(key, row[3]);
    }
    Ok(SampleTable { h, values, dim })
}

fn build_body(cfg: &DomainCfg, n: usize) -> Result<ConvexBody, RunError> {
    match cfg.kind.as_str() {
        "ball" => Ok(make_ball(n, cfg.radius.unwrap_or(1.0))?),
        "ellipsoid" => {
            let axes = cfg
                .semi_axes
                .as_ref()
                .ok_or_else(|| RunError::config("ellipsoid domain needs semi_axes"))?;
            if axes.len() != n {
                return Err(RunError::config(format!(
                    "semi_axes has {} entries for n = {n}",
                    axes.len()
                )));
            }
            Ok(make_ellipsoid(axes)?)
        }
        k => Err(RunError::config(format!("unknown domain kind {k:?}"))),
    }
}

// ------------------------------------------------------- resolved problem --

struct Resolved {
    n: usize,
    theta: f64,
    body: ConvexBody,
    f_spec: ScalarSpec,
    phi_spec: ScalarSpec,
    f_radial: bool,
    phi_radial: bool,
}

fn resolve(cfg: &RunConfig, base: &Path) -> Result<Resolved, RunError> {
    let n = cfg.problem.n;
    if !(n == 2 || n == 3) {
        return Err(RunError::config(format!("n = {n}; this solver handles 2 and 3")));
    }
    let theta = parse_theta(&cfg.problem.theta, n)?;
    let f_cfg = &cfg.problem.f;
    let phi_cfg = cfg.problem.phi.clone().unwrap_or(ScalarCfg::Const(0.0));
    Ok(Resolved {
        n,
        theta,
        body: build_body(&cfg.domain, n)?,
        f_spec: f_cfg.resolve(base)?,
        phi_spec: phi_cfg.resolve(base)?,
        f_radial: f_cfg.is_radial(),
        phi_radial: phi_cfg.is_radial(),
    })
}

/// Phase admissibility is a config-level failure: the run never starts.
fn classified(n: usize, theta: f64) -> Result<PhaseSpec, RunError> {
    let ph = phase_classify(n, theta)?;
    if ph.class == PhaseClass::Invalid {
        return Err(RunError::config(format!("theta = {theta} is not admissible for n = {n}")));
    }
    Ok(ph)
}

fn newton_cfg(s: &SolverCfg) -> NewtonConfig {
    NewtonConfig {
        tol: s.tol,
        max_iter: s.max_iter,
        backtrack: s.backtrack,
        min_step: s.min_step,
    }
}

fn homotopy_cfg(s: &SolverCfg) -> HomotopyConfig {
    HomotopyConfig { dt0: s.dt0, dt_min: s.dt_min }
}

fn eps_cfg(s: &SolverCfg) -> EpsPathConfig {
    EpsPathConfig {
        eps_list: s.eps_list.clone().unwrap_or(EpsPathConfig::default().eps_list),
        diverge_limit: s.diverge_limit,
    }
}

fn grid_h(cfg: &RunConfig) -> Result<f64, RunError> {
    cfg.grid.h.ok_or_else(|| RunError::config("grid.h is required for this command"))
}

#[derive(Debug)]
enum BcResolved {
    Fixed(Closure),
    /// Bare "classical": the slope constant is an unknown of the run.
    Path,
}

fn resolve_bc(cfg: &RunConfig) -> Result<BcResolved, RunError> {
    match cfg.problem.bc.clone().unwrap_or(BcCfg::Name("robin".into())) {
        BcCfg::Name(s) if s == "robin" => Ok(BcResolved::Fixed(Closure::Robin)),
        BcCfg::Name(s) if s == "classical" => Ok(BcResolved::Path),
        BcCfg::Name(s) => Err(RunError::config(format!("unknown bc {s:?}"))),
        BcCfg::Epsilon { epsilon } => {
            if !(epsilon > 0.0) {
                return Err(RunError::config("epsilon must be positive"));
            }
            Ok(BcResolved::Fixed(Closure::Epsilon(epsilon)))
        }
        BcCfg::Classical { classical } => Ok(BcResolved::Fixed(Closure::Classical(classical))),
    }
}

// ------------------------------------------------------------ CSV output --

fn field_csv(path: &Path, grid: &Grid, u: &[f64]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunError::run("io", format!("{}: {e}", path.display())))?;
    let dim = grid.body.dim();
    let header: &[&str] =
        if dim == 3 { &["x", "y", "z", "tag", "u"] } else { &["x", "y", "tag", "u"] };
    w.write_record(header)
        .map_err(|e| RunError::run("io", e.to_string()))?;
    for (k, (x, v)) in grid.pos.iter().zip(u).enumerate() {
        let tag = if k < grid.n_interior { "interior" } else { "ghost" };
        let mut rec: Vec<String> = x[..dim].iter().map(f64::to_string).collect();
        rec.push(tag.into());
        rec.push(v.to_string());
        w.write_record(&rec).map_err(|e| RunError::run("io", e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::run("io", e.to_string()))
}

fn read_field_csv(path: &Path, grid: &Grid) -> Result<Vec<f64>, RunError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
    let dim = grid.body.dim();
    let mut u = Vec::with_capacity(grid.num_nodes());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
        if rec.len() != dim + 2 {
            return Err(RunError::config(format!(
                "{}: row {row} has {} fields, expected {}",
                path.display(),
                rec.len(),
                dim + 2
            )));
        }
        if row >= grid.num_nodes() {
            return Err(RunError::config(format!(
                "{}: more rows than grid nodes",
                path.display()
            )));
        }
        let parse = |k: usize| -> Result<f64, RunError> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| RunError::config(format!("{}: row {row}: {e}", path.display())))
        };
        for a in 0..dim {
            let c = parse(a)?;
            let want = grid.pos[row][a];
            if (c - want).abs() > 1e-9 * (1.0 + want.abs()) {
                return Err(RunError::config(format!(
                    "{}: row {row} is at {c}, grid node at {want}; field belongs to another grid",
                    path.display()
                )));
            }
        }
        u.push(parse(dim + 1)?);
    }
    if u.len() != grid.num_nodes() {
        return Err(RunError::config(format!(
            "{}: {} rows for {} grid nodes",
            path.display(),
            u.len(),
            grid.num_nodes()
        )));
    }
    Ok(u)
}

fn profile_csv(path: &Path, rs: &RadialSolution) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunError::run("io", format!("{}: {e}", path.display())))?;
    w.write_record(["r", "psi", "u"])
        .map_err(|e| RunError::run("io", e.to_string()))?;
    for ((r, p), v) in rs.r_grid.iter().zip(&rs.psi).zip(&rs.u) {
        w.write_record([r.to_string(), p.to_string(), v.to_string()])
            .map_err(|e| RunError::run("io", e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::run("io", e.to_string()))
}

// ---------------------------------------------------------------- orchestration --

pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    let (name, args): (&'static str, &CommonArgs) = match &cli.cmd {
        Cmd::Solve(a) => ("solve", a),
        Cmd::Classical(a) => ("classical", a),
        Cmd::Oracle(a) => ("oracle", a),
        Cmd::Verify(a) => ("verify", a),
        Cmd::Diagnose(a) => ("diagnose", a),
        Cmd::Convergence(a) => ("convergence", a),
    };
    let config = load_config(&args.config);
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.as_ref().ok().and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let outcome = config.and_then(|cfg| {
        if args.threads == 0 {
            return Err(RunError::config("threads must be at least 1"));
        }
        let result = match name {
            "solve" => exec_solve(&cfg, &base, args.seed, &out_dir),
            "classical" => exec_classical(&cfg, &base, args.seed, &out_dir),
            "oracle" => exec_oracle(&cfg, &base, &out_dir),
            "verify" => exec_verify(&cfg, args.seed),
            "diagnose" => exec_diagnose(&cfg, &base),
            "convergence" => exec_convergence(&cfg, &base, args.seed),
            _ => unreachable!(),
        };
        result.map(|v| (cfg, v))
    });

    let (config_echo, result, error, code) = match outcome {
        Ok((cfg, v)) => (Some(cfg), Some(v), None, 0),
        Err(e) => (None, None, Some(ErrorRecord { kind: e.kind, message: e.message }), e.exit),
    };
    // a config echo is only useful when the run used it; reload on failure so
    // the summary still shows what parsed, if anything did
    let reparsed;
    let echo_ref = match &config_echo {
        Some(c) => Some(c),
        None => {
            reparsed = load_config(&args.config).ok();
            reparsed.as_ref()
        }
    };
    let summary = Summary {
        schema: 1,
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        seed: args.seed,
        threads: args.threads,
        config: echo_ref,
        result,
        error,
    };
    if std::fs::create_dir_all(&out_dir).is_ok() {
        let path = out_dir.join("summary.json");
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        if let Err(e) = std::fs::write(&path, body) {
            eprintln!("cannot write {}: {e}", path.display());
        }
    }
    if let Some(err) = &summary.error {
        eprintln!("{}: {}", err.kind, err.message);
    }
    code
}

fn load_config(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| RunError::config(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------- commands --

fn radial_problem(r: &Resolved, bc: RadialBc) -> Result<Option<RadialProblem>, RunError> {
    let radius = match r.body {
        ConvexBody::Ball { radius, .. } => radius,
        _ => return Ok(None),
    };
    if !(r.f_radial && r.phi_radial) {
        return Ok(None);
    }
    Ok(Some(RadialProblem {
        n: r.n,
        theta: r.theta,
        radius,
        f_r: r.f_spec.clone(),
        bc,
    }))
}

/// Radial comparison is advisory inside solve/classical: its failure is
/// reported in the payload, never escalated.
fn oracle_side_check(
    r: &Resolved,
    bc: RadialBc,
    grid: &Grid,
    u: &[f64],
    lambda: Option<f64>,
) -> Result<Value, RunError> {
    match radial_problem(r, bc)? {
        None => Ok(Value::Null),
        Some(rp) => match radial_solve(&rp).and_then(|rs| compare(&rs, grid, u, lambda)) {
            Ok(rep) => Ok(json!(rep)),
            Err(e) => Ok(json!({ "error": e.to_string() })),
        },
    }
}

fn exec_solve(
    cfg: &RunConfig,
    base: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<Value, RunError> {
    let r = resolve(cfg, base)?;
    let phase = classified(r.n, r.theta)?;
    let closure = match resolve_bc(cfg)? {
        BcResolved::Fixed(c) => c,
        BcResolved::Path => {
            return Err(RunError::config(
                "bare bc = \"classical\" recovers the slope constant; use the classical command \
                 or fix it with bc = { classical = <lambda> }",
            ))
        }
    };
    let spec = SolveSpec {
        body: &r.body,
        h: grid_h(cfg)?,
        theta: phase,
        closure,
        f_spec: &r.f_spec,
        phi_spec: &r.phi_spec,
        perturb: cfg.solver.perturb.map(|rel| (seed, rel)),
    };
    let res = solve_auto(&spec, &newton_cfg(&cfg.solver), &homotopy_cfg(&cfg.solver))?;
    let est = estimate_report(&res.problem, &res.u)?;
    let oracle = match closure {
        Closure::Robin => {
            let phi_b = r.phi_spec.eval([ball_radius(&r.body), 0.0, 0.0])?;
            oracle_side_check(&r, RadialBc::Robin(phi_b), &res.problem.grid, &res.u, None)?
        }
        _ => Value::Null,
    };
    let field = if cfg.output.field {
        let path = out_dir.join("field.csv");
        std::fs::create_dir_all(out_dir)
            .map_err(|e| RunError::run("io", e.to_string()))?;
        field_csv(&path, &res.problem.grid, &res.u)?;
        json!("field.csv")
    } else {
        Value::Null
    };
    Ok(json!({
        "n_unknowns": res.problem.num_unknowns(),
        "t_path": res.t_path,
        "total_iterations": res.total_iterations,
        "newton": res.report,
        "estimate": est,
        "oracle": oracle,
        "field_csv": field,
    }))
}

fn ball_radius(body: &ConvexBody) -> f64 {
    match body {
        ConvexBody::Ball { radius, .. } => *radius,
        _ => 0.0,
    }
}

fn exec_classical(
    cfg: &RunConfig,
    base: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<Value, RunError> {
    let r = resolve(cfg, base)?;
    let phase = classified(r.n, r.theta)?;
    if !matches!(resolve_bc(cfg)?, BcResolved::Path) {
        return Err(RunError::config("the classical command needs bc = \"classical\""));
    }
    let spec = SolveSpec {
        body: &r.body,
        h: grid_h(cfg)?,
        theta: phase,
        closure: Closure::Robin,
        f_spec: &r.f_spec,
        phi_spec: &r.phi_spec,
        perturb: cfg.solver.perturb.map(|rel| (seed, rel)),
    };
    let res = classical_solve(
        &spec,
        &newton_cfg(&cfg.solver),
        &homotopy_cfg(&cfg.solver),
        &eps_cfg(&cfg.solver),
    )?;
    let est = estimate_report(&res.problem, &res.u)?;
    let phi_b = r.phi_spec.eval([ball_radius(&r.body), 0.0, 0.0])?;
    let oracle = oracle_side_check(
        &r,
        RadialBc::Classical(phi_b),
        &res.problem.grid,
        &res.u,
        Some(res.lambda),
    )?;
    // the gradient bound along the path is expected to saturate: report the
    // spread of max|Du| over the final four penalties
    let tail: Vec<f64> = res.path.iter().rev().take(4).map(|s| s.max_grad).collect();
    let grad_variation = if tail.len() >= 2 {
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &g| (l.min(g), h.max(g)));
        json!(hi / lo - 1.0)
    } else {
        Value::Null
    };
    let field = if cfg.output.field {
        let path = out_dir.join("field.csv");
        std::fs::create_dir_all(out_dir)
            .map_err(|e| RunError::run("io", e.to_string()))?;
        field_csv(&path, &res.problem.grid, &res.u)?;
        json!("field.csv")
    } else {
        Value::Null
    };
    Ok(json!({
        "lambda": res.lambda,
        "spread": res.spread,
        "path": res.path,
        "grad_tail_variation": grad_variation,
        "t_path": res.t_path,
        "total_iterations": res.total_iterations,
        "newton": res.report,
        "estimate": est,
        "oracle": oracle,
        "field_csv": field,
    }))
}

fn exec_oracle(cfg: &RunConfig, base: &Path, out_dir: &Path) -> Result<Value, RunError> {
    let r = resolve(cfg, base)?;
    let radius = match r.body {
        ConvexBody::Ball { radius, .. } => radius,
        _ => return Err(RunError::config("the oracle command needs a ball domain")),
    };
    if !(r.f_radial && r.phi_radial) {
        return Err(RunError::config("the oracle command needs closed-form radial f and phi"));
    }
    let phi_b = r.phi_spec.eval([radius, 0.0, 0.0])?;
    let bc = match resolve_bc(cfg)? {
        BcResolved::Fixed(Closure::Robin) => RadialBc::Robin(phi_b),
        BcResolved::Path => RadialBc::Classical(phi_b),
        _ => {
            return Err(RunError::config(
                "the radial profile supports bc = \"robin\" or bc = \"classical\"",
            ))
        }
    };
    let rp = RadialProblem { n: r.n, theta: r.theta, radius, f_r: r.f_spec.clone(), bc };
    let rs = radial_solve(&rp)?;
    let defect = rs.midpoint_defect(&rp)?;
    std::fs::create_dir_all(out_dir).map_err(|e| RunError::run("io", e.to_string()))?;
    profile_csv(&out_dir.join("profile.csv"), &rs)?;
    Ok(json!({
        "lambda": rs.lambda,
        "branch_ok": rs.branch_ok,
        "steps": rs.r_grid.len() - 1,
        "midpoint_defect": defect,
        "profile_csv": "profile.csv",
    }))
}

fn exec_verify(cfg: &RunConfig, seed: u64) -> Result<Value, RunError> {
    let n = cfg.problem.n;
    if !(n == 2 || n == 3) {
        return Err(RunError::config(format!("n = {n}; this solver handles 2 and 3")));
    }
    let theta = parse_theta(&cfg.problem.theta, n)?;
    classified(n, theta)?;
    let f = match cfg.problem.f {
        ScalarCfg::Const(c) => c,
        _ => return Err(RunError::config("verify needs a constant f")),
    };
    let suite = run_lemma_suites(n, theta, f, cfg.verify.count, seed)?;
    Ok(json!({
        "count": cfg.verify.count,
        "suite": suite,
    }))
}

fn exec_diagnose(cfg: &RunConfig, base: &Path) -> Result<Value, RunError> {
    let dcfg = cfg
        .diagnose
        .as_ref()
        .ok_or_else(|| RunError::config("diagnose needs a [diagnose] block"))?;
    let r = resolve(cfg, base)?;
    let phase = classified(r.n, r.theta)?;
    let closure = match resolve_bc(cfg)? {
        BcResolved::Fixed(c) => c,
        BcResolved::Path => {
            return Err(RunError::config(
                "diagnose re-evaluates a fixed closure; bare bc = \"classical\" has none",
            ))
        }
    };
    let grid = Grid::build(&r.body, grid_h(cfg)?)?;
    let p = DiscreteProblem::new(grid, phase, closure, r.f_spec.clone(), r.phi_spec.clone())?;
    let field_path =
        if dcfg.field.is_relative() { base.join(&dcfg.field) } else { dcfg.field.clone() };
    let u = read_field_csv(&field_path, &p.grid)?;
    let mut spec = DiagnosticSpec::for_problem(&p, &u);
    if let Some(mu) = dcfg.mu {
        spec.mu = mu;
    }
    let est = estimate_report(&p, &u)?;
    let barrier = barrier_diag(&p, &u, &spec)?;
    let ltu = ltu_diag(&p, &u, &spec)?;
    let req = if matches!(closure, Closure::Epsilon(_)) {
        GradientRequest::WithPath
    } else {
        GradientRequest::CollarOnly
    };
    let gradient = gradient_aux_diag(&p, &u, &spec, req)?;
    let identity = identity_residual(&p, &u)?;
    Ok(json!({
        "estimate": est,
        "barrier": barrier,
        "ltu": ltu,
        "gradient": gradient,
        "identity": identity,
    }))
}

fn exec_convergence(cfg: &RunConfig, base: &Path, seed: u64) -> Result<Value, RunError> {
    let r = resolve(cfg, base)?;
    let phase = classified(r.n, r.theta)?;
    let hs = cfg
        .grid
        .h_list
        .clone()
        .ok_or_else(|| RunError::config("convergence needs grid.h_list"))?;
    if hs.len() < 2 {
        return Err(RunError::config("grid.h_list needs at least two spacings"));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(RunError::config("grid.h_list must strictly decrease"));
    }
    let bc = resolve_bc(cfg)?;
    let mut runs = Vec::new();
    let mut errs: Vec<Option<f64>> = Vec::new();
    let mut lam_errs: Vec<Option<f64>> = Vec::new();
    let mut ests: Vec<crate::harness::EstimateReport> = Vec::new();
    for &h in &hs {
        let spec = SolveSpec {
            body: &r.body,
            h,
            theta: phase,
            closure: match &bc {
                BcResolved::Fixed(c) => *c,
                BcResolved::Path => Closure::Robin,
            },
            f_spec: &r.f_spec,
            phi_spec: &r.phi_spec,
            perturb: cfg.solver.perturb.map(|rel| (seed, rel)),
        };
        let phi_b = r.phi_spec.eval([ball_radius(&r.body), 0.0, 0.0])?;
        let (prob, u, lambda, iterations) = match &bc {
            BcResolved::Path => {
                let res = classical_solve(
                    &spec,
                    &newton_cfg(&cfg.solver),
                    &homotopy_cfg(&cfg.solver),
                    &eps_cfg(&cfg.solver),
                )?;
                (res.problem, res.u, Some(res.lambda), res.total_iterations)
            }
            BcResolved::Fixed(_) => {
                let res = solve_auto(&spec, &newton_cfg(&cfg.solver), &homotopy_cfg(&cfg.solver))?;
                (res.problem, res.u, None, res.total_iterations)
            }
        };
        let est = estimate_report(&prob, &u)?;
        let radial_bc = match (&bc, lambda) {
            (BcResolved::Path, _) => Some(RadialBc::Classical(phi_b)),
            (BcResolved::Fixed(Closure::Robin), _) => Some(RadialBc::Robin(phi_b)),
            _ => None,
        };
        let mut err = None;
        let mut lam_err = None;
        let mut cmp_val = Value::Null;
        if let Some(rbc) = radial_bc {
            if let Some(rp) = radial_problem(&r, rbc)? {
                let rs = radial_solve(&rp)?;
                let rep = compare(&rs, &prob.grid, &u, lambda)?;
                err = Some(rep.max_err);
                lam_err = rep.lambda_err;
                cmp_val = json!(rep);
            }
        }
        errs.push(err);
        lam_errs.push(lam_err);
        ests.push(est.clone());
        runs.push(json!({
            "h": h,
            "iterations": iterations,
            "lambda": lambda,
            "estimate": est,
            "oracle": cmp_val,
        }));
    }
    let order = |seq: &[Option<f64>]| -> Vec<Value> {
        seq.windows(2)
            .zip(hs.windows(2))
            .map(|(e, hw)| match (e[0], e[1]) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => {
                    json!((a / b).ln() / (hw[0] / hw[1]).ln())
                }
                _ => Value::Null,
            })
            .collect()
    };
    let last = &ests[ests.len() - 1];
    let prev = &ests[ests.len() - 2];
    let drift = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    Ok(json!({
        "h_list": hs,
        "runs": runs,
        "field_order": order(&errs),
        "lambda_order": order(&lam_errs),
        "drift": {
            "c0": drift(last.c0, prev.c0),
            "c1": drift(last.c1, prev.c1),
            "dnn": drift(last.dnn, prev.dnn),
            "d2": drift(last.d2, prev.d2),
        },
    }))
}
