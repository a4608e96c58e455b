//! Damped Newton iteration with a per-node phase guard, plus the two outer
//! drivers: domain/data homotopy from the unit ball, and the penalized
//! boundary path that recovers the additive constant of the prescribed-slope
//! problem as the penalty vanishes.

use crate::assembly::{
    residual, residual_and_jacobian, AssemblyError, Closure, DiscreteProblem, ScalarSpec,
};
use crate::geometry::{homotopy_domain, ConvexBody, GeometryError};
use crate::grid::{Field, Grid, GridError};
use crate::linsolve::{LinSolveError, SparseSystem};
use crate::specops::PhaseSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),
    #[error("line search stalled at iteration {iter}, residual {residual:.3e}")]
    LineSearchStalled { iter: usize, residual: f64 },
    #[error("no convergence in {max} iterations, residual {residual:.3e}")]
    MaxIterExceeded { max: usize, residual: f64 },
    #[error("phase guard violated: |value - target| reached {excess:.3}")]
    PhaseGuardViolated { excess: f64 },
    #[error("homotopy step underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("penalized path diverged: increments grew {0} times in a row")]
    PathDiverged(usize),
    #[error("initial guess requires a ball domain")]
    NotBall,
    #[error("bad solver configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<LinSolveError> for SolverError {
    fn from(e: LinSolveError) -> Self {
        SolverError::LinearSolveFailed(e.to_string())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    /// Max-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Step shrink factor during backtracking.
    pub backtrack: f64,
    /// Smallest admissible line-search step.
    pub min_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-10,
            max_iter: 50,
            backtrack: 0.5,
            min_step: 1.0 / 1024.0,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub quadratic_tail: bool,
    /// Max-norm residual after each accepted step, starting with the guess.
    pub norms: Vec<f64>,
}

fn norm_inf(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Contraction of the final step clearly beats linear: ratio at most
/// max(4 rho^2, rho/20) where rho is the previous step's ratio. Norms at the
/// roundoff floor are excluded; they contract erratically.
fn tail_is_quadratic(norms: &[f64], tol: f64) -> bool {
    let floor = 1e-13f64.max(0.01 * tol);
    let mut k = norms.len();
    while k > 0 && norms[k - 1] < floor {
        k -= 1;
    }
    if k <= 2 {
        return true;
    }
    let (a, b, c) = (norms[k - 3], norms[k - 2], norms[k - 1]);
    if a <= 0.0 || b <= 0.0 {
        return true;
    }
    let r1 = b / a;
    let r2 = c / b;
    r2 <= (4.0 * r1 * r1).max(0.05 * r1)
}

enum Reject {
    Norm,
    Guard(f64),
}

/// Reduce the affine ghost rows by solving the ghost block with the interior
/// field frozen, then taking the largest fraction of that correction that
/// does not worsen the overall residual or trip the phase guard. A full
/// projection zeroes the boundary rows, and Newton directions keep them at
/// zero for every damped step, so the line search fights interior rows only.
fn project_ghosts(
    p: &DiscreteProblem,
    u: &mut Field,
    r: &[f64],
    trips: &[crate::linsolve::Trip],
) -> Result<bool, SolverError> {
    let ni = p.grid.n_interior;
    let ng = p.grid.ghosts.len();
    if ng == 0 {
        return Ok(false);
    }
    let mut block: Vec<crate::linsolve::Trip> = Vec::new();
    for t in trips {
        if t.row >= ni && t.col >= ni {
            block.push(crate::linsolve::Trip::new(t.row - ni, t.col - ni, t.val));
        }
    }
    let rhs: Vec<f64> = r[ni..].iter().map(|v| -v).collect();
    let mut sys = SparseSystem::new(ng);
    let dg = match sys.solve(&block, &rhs) {
        Ok(dg) => dg,
        Err(_) => return Ok(false),
    };
    let base = norm_inf(r);
    let mut alpha = 1.0;
    for _ in 0..4 {
        let mut trial = u.clone();
        for (g, d) in trial[ni..].iter_mut().zip(&dg) {
            *g += alpha * d;
        }
        match residual(p, &trial) {
            Ok((rt, st)) if st.max_interior < FRAC_PI_2 && norm_inf(&rt) <= base => {
                *u = trial;
                return Ok(true);
            }
            Ok(_) | Err(AssemblyError::NonFiniteField) | Err(AssemblyError::Spectral(_)) => {
                alpha *= 0.5;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(false)
}

pub fn newton_solve(
    p: &DiscreteProblem,
    u: &mut Field,
    sys: &mut SparseSystem,
    cfg: &NewtonConfig,
) -> Result<NewtonReport, SolverError> {
    let (mut r, mut trips, mut stats) = residual_and_jacobian(p, u)?;
    if stats.max_bc > cfg.tol && project_ghosts(p, u, &r, &trips)? {
        let redo = residual_and_jacobian(p, u)?;
        r = redo.0;
        trips = redo.1;
        stats = redo.2;
    }
    if stats.max_interior >= FRAC_PI_2 {
        return Err(SolverError::PhaseGuardViolated {
            excess: stats.max_interior,
        });
    }
    let mut norms = vec![norm_inf(&r)];
    if norms[0] <= cfg.tol {
        return Ok(NewtonReport {
            iterations: 0,
            final_residual: norms[0],
            quadratic_tail: true,
            norms,
        });
    }
    for it in 0..cfg.max_iter {
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = sys.solve(&trips, &rhs)?;
        let cur = *norms.last().unwrap();
        let mut s = 1.0;
        let mut accepted = false;
        let mut last_reject = Reject::Norm;
        while s >= cfg.min_step {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
            match residual(p, &trial) {
                Ok((rt, st)) => {
                    if st.max_interior >= FRAC_PI_2 {
                        last_reject = Reject::Guard(st.max_interior);
                    } else {
                        let nt = norm_inf(&rt);
                        if nt <= (1.0 - 1e-4 * s) * cur {
                            *u = trial;
                            norms.push(nt);
                            accepted = true;
                            break;
                        }
                        last_reject = Reject::Norm;
                    }
                }
                // trial left the admissible set entirely; shrink
                Err(AssemblyError::NonFiniteField) | Err(AssemblyError::Spectral(_)) => {
                    last_reject = Reject::Norm;
                }
                Err(e) => return Err(e.into()),
            }
            s *= cfg.backtrack;
        }
        if !accepted {
            return Err(match last_reject {
                Reject::Guard(excess) => SolverError::PhaseGuardViolated { excess },
                Reject::Norm => SolverError::LineSearchStalled {
                    iter: it,
                    residual: cur,
                },
            });
        }
        if *norms.last().unwrap() <= cfg.tol {
            return Ok(NewtonReport {
                iterations: it + 1,
                final_residual: *norms.last().unwrap(),
                quadratic_tail: tail_is_quadratic(&norms, cfg.tol),
                norms,
            });
        }
        let next = residual_and_jacobian(p, u)?;
        r = next.0;
        trips = next.1;
    }
    Err(SolverError::MaxIterExceeded {
        max: cfg.max_iter,
        residual: *norms.last().unwrap(),
    })
}

/// Radial quadratic ansatz, exact for constant data on a ball up to a 5%
/// per-axis curvature spread. The spread keeps the guess away from the
/// umbilic state where all mixed-derivative sensitivities vanish and the
/// first Jacobian turns blind to ghost excursions.
pub fn initial_guess_ball(p: &DiscreteProblem) -> Result<Field, SolverError> {
    let radius = match p.grid.body {
        ConvexBody::Ball { radius, .. } => radius,
        _ => return Err(SolverError::NotBall),
    };
    let c = (p.theta.theta / p.theta.n as f64).tan();
    let shift = p.closure.shift();
    let phi0 = if p.rhs_foot.is_empty() {
        0.0
    } else {
        p.rhs_foot.iter().sum::<f64>() / p.rhs_foot.len() as f64 - shift
    };
    let half_r2 = 0.5 * c * radius * radius;
    let k = match p.closure {
        Closure::Robin => phi0 - c * radius - half_r2,
        Closure::Epsilon(e) => {
            if e <= 0.0 {
                return Err(SolverError::BadConfig("penalty must be positive".into()));
            }
            (phi0 - c * radius) / e - half_r2
        }
        Closure::Classical(_) => 0.0,
    };
    let spread = if p.theta.n == 2 {
        [0.05, -0.05, 0.0]
    } else {
        [0.05, 0.0, -0.05]
    };
    Ok(p.grid.sample(|x| {
        let q = (0..3).map(|a| (1.0 + spread[a]) * x[a] * x[a]).sum::<f64>();
        0.5 * c * q + k
    }))
}

/// One problem instance plus how to start it.
pub struct SolveSpec<'a> {
    pub body: &'a ConvexBody,
    pub h: f64,
    pub theta: PhaseSpec,
    pub closure: Closure,
    pub f_spec: &'a ScalarSpec,
    pub phi_spec: &'a ScalarSpec,
    /// Optional (seed, relative amplitude) noise on the initial guess; the
    /// actual amplitude is `rel * h^2` so the perturbed Hessian stays tame.
    pub perturb: Option<(u64, f64)>,
}

pub struct SolveResult {
    pub problem: DiscreteProblem,
    pub u: Field,
    /// Report of the final Newton stage.
    pub report: NewtonReport,
    /// Accepted homotopy times; empty for a direct solve.
    pub t_path: Vec<f64>,
    pub total_iterations: usize,
}

fn apply_perturbation(u: &mut Field, h: f64, perturb: Option<(u64, f64)>) {
    if let Some((seed, rel)) = perturb {
        let amp = rel * h * h;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in u.iter_mut() {
            *v += amp * rng.random_range(-1.0..1.0);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HomotopyConfig {
    pub dt0: f64,
    pub dt_min: f64,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig {
            dt0: 0.1,
            dt_min: 1.0 / 256.0,
        }
    }
}

/// March the domain and data from the unit ball (where the radial ansatz is
/// exact) to the target problem, transferring the field between grids and
/// halving the step on failures.
pub fn homotopy_solve(
    spec: &SolveSpec,
    ncfg: &NewtonConfig,
    hcfg: &HomotopyConfig,
) -> Result<SolveResult, SolverError> {
    let stage = |t: f64| -> Result<DiscreteProblem, SolverError> {
        let dom = homotopy_domain(spec.body, t);
        let grid = Grid::build(&dom, spec.h)?;
        Ok(DiscreteProblem::new(
            grid,
            spec.theta,
            spec.closure,
            spec.f_spec.affine(t, 1.0 - t),
            spec.phi_spec.affine(t, 0.0),
        )?)
    };
    let mut prob = stage(0.0)?;
    let mut u = initial_guess_ball(&prob)?;
    apply_perturbation(&mut u, spec.h, spec.perturb);
    let mut sys = SparseSystem::new(prob.num_unknowns());
    let mut report = newton_solve(&prob, &mut u, &mut sys, ncfg)?;
    let mut total = report.iterations;
    let mut t_path = vec![0.0];
    let mut t = 0.0;
    let mut dt = hcfg.dt0;
    while t < 1.0 - 1e-12 {
        let t_next = (t + dt).min(1.0);
        let next = stage(t_next)?;
        let mut u_next = next.grid.transfer_from(&prob.grid, &u);
        let mut sys_next = SparseSystem::new(next.num_unknowns());
        match newton_solve(&next, &mut u_next, &mut sys_next, ncfg) {
            Ok(rep) => {
                total += rep.iterations;
                report = rep;
                prob = next;
                u = u_next;
                sys = sys_next;
                t = t_next;
                t_path.push(t);
                dt = (dt * 2.0).min(hcfg.dt0);
            }
            Err(
                SolverError::LineSearchStalled { .. }
                | SolverError::MaxIterExceeded { .. }
                | SolverError::PhaseGuardViolated { .. },
            ) => {
                dt *= 0.5;
                if dt < hcfg.dt_min * (1.0 - 1e-12) {
                    return Err(SolverError::StepUnderflow { t });
                }
            }
            Err(e) => return Err(e),
        }
    }
    let _ = sys;
    Ok(SolveResult {
        problem: prob,
        u,
        report,
        t_path,
        total_iterations: total,
    })
}

/// Ball domains skip the homotopy: the radial ansatz already satisfies the
/// closure exactly for constant data, and nearly so otherwise.
pub fn solve_auto(
    spec: &SolveSpec,
    ncfg: &NewtonConfig,
    hcfg: &HomotopyConfig,
) -> Result<SolveResult, SolverError> {
    if matches!(spec.body, ConvexBody::Ball { .. }) {
        let grid = Grid::build(spec.body, spec.h)?;
        let prob = DiscreteProblem::new(
            grid,
            spec.theta,
            spec.closure,
            spec.f_spec.clone(),
            spec.phi_spec.clone(),
        )?;
        let mut u = initial_guess_ball(&prob)?;
        apply_perturbation(&mut u, spec.h, spec.perturb);
        let mut sys = SparseSystem::new(prob.num_unknowns());
        match newton_solve(&prob, &mut u, &mut sys, ncfg) {
            Ok(report) => {
                return Ok(SolveResult {
                    total_iterations: report.iterations,
                    problem: prob,
                    u,
                    report,
                    t_path: Vec::new(),
                })
            }
            // fall back to the homotopy when the direct start fails
            Err(
                SolverError::LineSearchStalled { .. }
                | SolverError::MaxIterExceeded { .. }
                | SolverError::PhaseGuardViolated { .. },
            ) => {}
            Err(e) => return Err(e),
        }
    }
    homotopy_solve(spec, ncfg, hcfg)
}

#[derive(Clone, Debug)]
pub struct EpsPathConfig {
    /// Strictly decreasing positive penalties.
    pub eps_list: Vec<f64>,
    /// Consecutive increment growths that abort the path.
    pub diverge_limit: usize,
}

impl Default for EpsPathConfig {
    fn default() -> Self {
        EpsPathConfig {
            eps_list: (0..=10).map(|k| 0.5f64.powi(k)).collect(),
            diverge_limit: 3,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EpsStep {
    pub eps: f64,
    /// `-eps * mean(u)` over interior nodes.
    pub lambda_eps: f64,
    pub iterations: usize,
    /// Max euclidean gradient norm over interior nodes.
    pub max_grad: f64,
}

pub struct ClassicalResult {
    /// Problem at the last penalty value.
    pub problem: DiscreteProblem,
    /// Mean-centered limit field.
    pub u: Field,
    /// Raw field at the smallest penalty.
    pub u_raw: Field,
    /// Slope constant extrapolated to zero penalty through the last points.
    pub lambda: f64,
    pub path: Vec<EpsStep>,
    /// `eps * max |u - mean(u)|` at the smallest penalty: how far the
    /// penalized field is from a constant after scaling.
    pub spread: f64,
    pub report: NewtonReport,
    pub t_path: Vec<f64>,
    pub total_iterations: usize,
}

fn mean_interior(grid: &Grid, u: &[f64]) -> f64 {
    u[..grid.n_interior].iter().sum::<f64>() / grid.n_interior as f64
}

fn max_gradient(grid: &Grid, u: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..grid.n_interior {
        let g = grid.gradient_at(u, i);
        m = m.max((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt());
    }
    m
}

/// Polynomial extrapolation of `(x_i, y_i)` to x = 0.
fn neville_at_zero(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len();
    let mut val: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for j in 1..m {
        for i in 0..m - j {
            let (xi, xj) = (pts[i].0, pts[i + j].0);
            val[i] = (-xj * val[i] + xi * val[i + 1]) / (xi - xj);
        }
    }
    val[0]
}

/// Solve the penalized closure along a decreasing penalty list, warm-starting
/// each stage from the previous field shifted by the predicted constant, and
/// extrapolate the slope constant to zero penalty.
pub fn classical_solve(
    spec: &SolveSpec,
    ncfg: &NewtonConfig,
    hcfg: &HomotopyConfig,
    ecfg: &EpsPathConfig,
) -> Result<ClassicalResult, SolverError> {
    if ecfg.eps_list.is_empty() {
        return Err(SolverError::BadConfig("empty penalty list".into()));
    }
    if ecfg.eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(SolverError::BadConfig("penalties must be positive".into()));
    }
    if ecfg.eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SolverError::BadConfig(
            "penalty list must strictly decrease".into(),
        ));
    }
    let eps0 = ecfg.eps_list[0];
    let first = solve_auto(
        &SolveSpec {
            closure: Closure::Epsilon(eps0),
            ..*spec
        },
        ncfg,
        hcfg,
    )?;
    let mut prob = first.problem;
    // the computed variable is v = u + shift/eps with the boundary data
    // raised by the same shift, which keeps v (and the residual floor) O(1)
    // where the raw penalized field grows like 1/eps
    let mut v = first.u;
    let mut shift = 0.0f64;
    let t_path = first.t_path;
    let mut total = first.total_iterations;
    let mut report = first.report;
    let mut sys = SparseSystem::new(prob.num_unknowns());
    let mut path: Vec<EpsStep> = Vec::with_capacity(ecfg.eps_list.len());
    let mut grow = 0usize;
    let mut last_diff = f64::INFINITY;
    for (k, &eps) in ecfg.eps_list.iter().enumerate() {
        if k > 0 {
            let prev = &path[k - 1];
            // v_init = v_prev + (lambda_prev - shift_prev)/eps_prev, i.e. the
            // standard warm start expressed in the shifted variable
            let bump = (prev.lambda_eps - shift) / prev.eps;
            for w in v.iter_mut() {
                *w += bump;
            }
            prob.set_closure(Closure::Epsilon(eps));
            prob.shift_rhs(prev.lambda_eps - shift);
            shift = prev.lambda_eps;
            report = newton_solve(&prob, &mut v, &mut sys, ncfg)?;
            total += report.iterations;
        }
        let lam = -eps * mean_interior(&prob.grid, &v) + shift;
        path.push(EpsStep {
            eps,
            lambda_eps: lam,
            iterations: report.iterations,
            max_grad: max_gradient(&prob.grid, &v),
        });
        if k > 0 {
            let d = (lam - path[k - 1].lambda_eps).abs();
            if d > last_diff * (1.0 + 1e-12) {
                grow += 1;
                if grow >= ecfg.diverge_limit {
                    return Err(SolverError::PathDiverged(grow));
                }
            } else {
                grow = 0;
            }
            last_diff = d;
        }
    }
    let tail = &path[path.len().saturating_sub(3)..];
    let pts: Vec<(f64, f64)> = tail.iter().map(|s| (s.eps, s.lambda_eps)).collect();
    let lambda = neville_at_zero(&pts);
    let last = path.last().unwrap();
    let mean = mean_interior(&prob.grid, &v);
    let spread = last.eps
        * v[..prob.grid.n_interior]
            .iter()
            .fold(0.0f64, |m, &w| m.max((w - mean).abs()));
    let u_raw: Field = v.iter().map(|w| w - shift / last.eps).collect();
    // report the problem with its original boundary data, consistent with u_raw
    prob.shift_rhs(-shift);
    let mut u = v;
    for w in u.iter_mut() {
        *w -= mean;
    }
    Ok(ClassicalResult {
        problem: prob,
        u,
        u_raw,
        lambda,
        path,
        spread,
        report,
        t_path,
        total_iterations: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_ball, make_ellipsoid};
    use crate::specops::phase_classify;
    use std::f64::consts::PI;

    fn ball_spec<'a>(
        body: &'a ConvexBody,
        h: f64,
        closure: Closure,
        f_spec: &'a ScalarSpec,
        phi_spec: &'a ScalarSpec,
    ) -> SolveSpec<'a> {
        SolveSpec {
            body,
            h,
            theta: phase_classify(body.dim(), if body.dim() == 2 { PI / 2.0 } else { 3.0 * PI / 4.0 })
                .unwrap(),
            closure,
            f_spec,
            phi_spec,
            perturb: None,
        }
    }

    #[test]
    fn disk_quadratic_solution_recovered() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(1.5);
        let spec = ball_spec(&body, 1.0 / 16.0, Closure::Robin, &f, &phi);
        let res = solve_auto(&spec, &NewtonConfig::default(), &HomotopyConfig::default()).unwrap();
        assert!(res.report.final_residual <= 1e-10);
        assert!(res.report.quadratic_tail, "norms {:?}", res.report.norms);
        assert!(res.t_path.is_empty(), "ball solves directly");
        let mut worst = 0.0f64;
        for i in 0..res.problem.grid.n_interior {
            let x = res.problem.grid.pos[i];
            let exact = 0.5 * (x[0] * x[0] + x[1] * x[1]);
            worst = worst.max((res.u[i] - exact).abs());
        }
        assert!(worst < 3e-3, "field error {worst}");
    }

    #[test]
    fn converged_field_restarts_with_zero_iterations() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(1.5);
        let spec = ball_spec(&body, 1.0 / 16.0, Closure::Robin, &f, &phi);
        let res = solve_auto(&spec, &NewtonConfig::default(), &HomotopyConfig::default()).unwrap();
        let mut u = res.u.clone();
        let mut sys = SparseSystem::new(res.problem.num_unknowns());
        let rep = newton_solve(&res.problem, &mut u, &mut sys, &NewtonConfig::default()).unwrap();
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn penalized_ball_guess_is_nearly_exact() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(0.0);
        let spec = ball_spec(&body, 1.0 / 16.0, Closure::Epsilon(1.0), &f, &phi);
        let res = solve_auto(&spec, &NewtonConfig::default(), &HomotopyConfig::default()).unwrap();
        assert!(res.report.iterations <= 6, "iters {}", res.report.iterations);
    }

    #[test]
    fn classical_disk_slope_constant() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(0.0);
        let spec = ball_spec(&body, 1.0 / 16.0, Closure::Classical(0.0), &f, &phi);
        let res = classical_solve(
            &spec,
            &NewtonConfig::default(),
            &HomotopyConfig::default(),
            &EpsPathConfig::default(),
        )
        .unwrap();
        // radial solution is r^2/2 with unit slope at the boundary
        assert!((res.lambda - 1.0).abs() < 5e-3, "lambda {}", res.lambda);
        assert!(res.spread < 1e-3, "spread {}", res.spread);
        let g = &res.problem.grid;
        let exact_mean = g.pos[..g.n_interior]
            .iter()
            .map(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .sum::<f64>()
            / g.n_interior as f64;
        let mut worst = 0.0f64;
        for i in 0..g.n_interior {
            let x = g.pos[i];
            let exact = 0.5 * (x[0] * x[0] + x[1] * x[1]) - exact_mean;
            worst = worst.max((res.u[i] - exact).abs());
        }
        assert!(worst < 5e-3, "centered field error {worst}");
        // increments along the path settle geometrically
        assert!(res.path.len() == 11);
    }

    #[test]
    fn ellipse_homotopy_completes() {
        let body = make_ellipsoid(&[1.1, 0.9]).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(1.0);
        let spec = ball_spec(&body, 1.0 / 12.0, Closure::Robin, &f, &phi);
        let res = solve_auto(&spec, &NewtonConfig::default(), &HomotopyConfig::default()).unwrap();
        assert!((res.t_path.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(res.report.final_residual <= 1e-10);
    }

    #[test]
    fn non_ball_guess_rejected() {
        let body = make_ellipsoid(&[1.1, 0.9]).unwrap();
        let grid = Grid::build(&body, 1.0 / 12.0).unwrap();
        let prob = DiscreteProblem::new(
            grid,
            phase_classify(2, PI / 2.0).unwrap(),
            Closure::Robin,
            ScalarSpec::Const(1.0),
            ScalarSpec::Const(1.0),
        )
        .unwrap();
        assert!(matches!(
            initial_guess_ball(&prob),
            Err(SolverError::NotBall)
        ));
    }

    #[test]
    fn iteration_cap_reported() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(1.5);
        let grid = Grid::build(&body, 1.0 / 16.0).unwrap();
        let prob = DiscreteProblem::new(
            grid,
            phase_classify(2, PI / 2.0).unwrap(),
            Closure::Robin,
            f,
            phi,
        )
        .unwrap();
        // admissible but far from the solution; forbid iterating
        let mut u = prob.grid.sample(|x| 0.05 * (x[0] * x[0] + x[1] * x[1]));
        let mut sys = SparseSystem::new(prob.num_unknowns());
        let cfg = NewtonConfig {
            max_iter: 1,
            ..NewtonConfig::default()
        };
        assert!(matches!(
            newton_solve(&prob, &mut u, &mut sys, &cfg),
            Err(SolverError::MaxIterExceeded { .. })
        ));
    }

    #[test]
    fn perturbed_starts_agree() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(1.5);
        let mut spec = ball_spec(&body, 1.0 / 16.0, Closure::Robin, &f, &phi);
        spec.perturb = Some((11, 0.05));
        let a = solve_auto(&spec, &NewtonConfig::default(), &HomotopyConfig::default()).unwrap();
        spec.perturb = Some((77, 0.05));
        let b = solve_auto(&spec, &NewtonConfig::default(), &HomotopyConfig::default()).unwrap();
        let mut worst = 0.0f64;
        for (x, y) in a.u.iter().zip(&b.u) {
            worst = worst.max((x - y).abs());
        }
        assert!(worst < 1e-8, "solutions differ by {worst}");
    }

    #[test]
    fn penalty_list_validation() {
        let body = make_ball(2, 1.0).unwrap();
        let f = ScalarSpec::Const(1.0);
        let phi = ScalarSpec::Const(0.0);
        let spec = ball_spec(&body, 1.0 / 16.0, Closure::Classical(0.0), &f, &phi);
        let bad = EpsPathConfig {
            eps_list: vec![0.5, 0.5],
            diverge_limit: 3,
        };
        assert!(matches!(
            classical_solve(
                &spec,
                &NewtonConfig::default(),
                &HomotopyConfig::default(),
                &bad
            ),
            Err(SolverError::BadConfig(_))
        ));
    }
}
