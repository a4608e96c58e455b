//! Radial reference solutions on balls. With u = u(r) the Hessian eigenvalues
//! collapse to u'' and u'/r (multiplicity n-1), so the operator equation turns
//! into a first-order ODE for psi = u':
//!
//!   psi' = f(r) * tan(Theta - (n-1) * arctan(psi / (r f(r))))
//!
//! integrated from psi(0) = 0. These profiles are the independent yardstick
//! the grid solver is measured against.

use crate::assembly::{AssemblyError, ScalarSpec};
use crate::geometry::ConvexBody;
use crate::grid::Grid;
use crate::specops::{phase_classify, PhaseClass, SpectralError};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Step count giving integration errors far below every comparison tolerance.
pub const DEFAULT_STEPS: usize = 10_000;
/// Margin keeping the tan argument strictly inside the principal branch.
pub const BRANCH_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("tan argument left the principal branch near r = {r:.6}")]
    BranchExit { r: f64 },
    #[error("radial weight must stay positive, got {value:.3e} at r = {r:.6}")]
    NonpositiveF { r: f64, value: f64 },
    #[error("phase {theta} is not admissible in dimension {n}")]
    InvalidPhase { n: usize, theta: f64 },
    #[error("grid domain is not the ball this profile was solved on")]
    DomainMismatch,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Boundary closure on the sphere r = R; the payload is phi(R).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialBc {
    /// u_nu + u = phi fixes the additive constant: u(R) = phi - psi(R).
    Robin(f64),
    /// u_nu = lambda + phi determines the slope constant: lambda = psi(R) - phi.
    Classical(f64),
}

#[derive(Debug, Clone)]
pub struct RadialProblem {
    pub n: usize,
    pub theta: f64,
    pub radius: f64,
    /// Radial profile, evaluated along the first axis; must be positive on [0, R].
    pub f_r: ScalarSpec,
    pub bc: RadialBc,
}

impl RadialProblem {
    fn f_at(&self, r: f64) -> Result<f64, OracleError> {
        let v = self.f_r.eval([r, 0.0, 0.0])?;
        if !(v > 0.0) {
            return Err(OracleError::NonpositiveF { r, value: v });
        }
        Ok(v)
    }

    /// Right side of the psi equation. At r = 0 the quotient psi/r is replaced
    /// by its smooth-branch limit, which makes the argument exactly Theta/n.
    fn slope(&self, r: f64, psi: f64) -> Result<f64, OracleError> {
        let fr = self.f_at(r)?;
        let q = if r == 0.0 {
            self.theta / self.n as f64
        } else {
            (psi / (r * fr)).atan()
        };
        let arg = self.theta - (self.n as f64 - 1.0) * q;
        if arg.abs() >= FRAC_PI_2 - BRANCH_MARGIN {
            return Err(OracleError::BranchExit { r });
        }
        Ok(fr * arg.tan())
    }
}

#[derive(Debug, Clone)]
pub struct RadialSolution {
    pub r_grid: Vec<f64>,
    pub psi: Vec<f64>,
    pub u: Vec<f64>,
    /// Slope constant in classical mode, None under the robin closure.
    pub lambda: Option<f64>,
    /// True whenever the integration finished; the branch guard errors otherwise.
    pub branch_ok: bool,
}

pub fn radial_solve(p: &RadialProblem) -> Result<RadialSolution, OracleError> {
    radial_solve_with_steps(p, DEFAULT_STEPS)
}

/// Classical one-step fourth-order integration of (psi, u) with `steps`
/// uniform steps; u rides along via u' = psi so both share the same accuracy.
pub fn radial_solve_with_steps(
    p: &RadialProblem,
    steps: usize,
) -> Result<RadialSolution, OracleError> {
    let spec = phase_classify(p.n, p.theta)?;
    if spec.class == PhaseClass::Invalid {
        return Err(OracleError::InvalidPhase { n: p.n, theta: p.theta });
    }
    let h = p.radius / steps as f64;
    let mut r_grid = Vec::with_capacity(steps + 1);
    let mut psi = Vec::with_capacity(steps + 1);
    let mut u_raw = Vec::with_capacity(steps + 1);
    let (mut y, mut v) = (0.0, 0.0);
    r_grid.push(0.0);
    psi.push(0.0);
    u_raw.push(0.0);
    // Stage derivatives of the quotient psi/r degrade one-step accuracy near
    // the regular singular point at r = 0; sub-stepping the opening intervals
    // keeps the midpoint defect at the interpolation level everywhere.
    let fine = 64.min(steps / 8).max(1);
    for i in 0..steps {
        let sub = if i < fine { 16 } else { 1 };
        let hs = h / sub as f64;
        for j in 0..sub {
            let r = i as f64 * h + j as f64 * hs;
            let k1 = p.slope(r, y)?;
            let s2 = y + 0.5 * hs * k1;
            let k2 = p.slope(r + 0.5 * hs, s2)?;
            let s3 = y + 0.5 * hs * k2;
            let k3 = p.slope(r + 0.5 * hs, s3)?;
            let s4 = y + hs * k3;
            let k4 = p.slope(r + hs, s4)?;
            v += hs * (y + 2.0 * s2 + 2.0 * s3 + s4) / 6.0;
            y += hs * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
        r_grid.push((i + 1) as f64 * h);
        psi.push(y);
        u_raw.push(v);
    }
    let (u, lambda) = match p.bc {
        RadialBc::Robin(phi) => {
            let shift = (phi - y) - v;
            (u_raw.iter().map(|w| w + shift).collect(), None)
        }
        RadialBc::Classical(phi) => (u_raw, Some(y - phi)),
    };
    Ok(RadialSolution { r_grid, psi, u, lambda, branch_ok: true })
}

impl RadialSolution {
    fn step(&self) -> f64 {
        self.r_grid[1] - self.r_grid[0]
    }

    pub fn radius(&self) -> f64 {
        *self.r_grid.last().unwrap()
    }

    /// Cubic Hermite sample of u; the stored psi values are its exact nodal
    /// derivatives, so the interpolant carries the integrator's full order.
    pub fn sample_u(&self, r: f64) -> f64 {
        let h = self.step();
        let r = r.clamp(0.0, self.radius());
        let i = ((r / h) as usize).min(self.r_grid.len() - 2);
        let t = (r - self.r_grid[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        self.u[i] * (2.0 * t3 - 3.0 * t2 + 1.0)
            + h * self.psi[i] * (t3 - 2.0 * t2 + t)
            + self.u[i + 1] * (-2.0 * t3 + 3.0 * t2)
            + h * self.psi[i + 1] * (t3 - t2)
    }

    /// Largest defect of the psi equation at interval midpoints, measured on
    /// the Hermite interpolant through the stored nodes and their slopes.
    pub fn midpoint_defect(&self, p: &RadialProblem) -> Result<f64, OracleError> {
        let h = self.step();
        let mut worst = 0.0f64;
        let mut d_prev = p.slope(self.r_grid[0], self.psi[0])?;
        for i in 0..self.r_grid.len() - 1 {
            let d_next = p.slope(self.r_grid[i + 1], self.psi[i + 1])?;
            let ym = 0.5 * (self.psi[i] + self.psi[i + 1]) + h * (d_prev - d_next) / 8.0;
            let dm = 1.5 * (self.psi[i + 1] - self.psi[i]) / h - 0.25 * (d_prev + d_next);
            let rm = self.r_grid[i] + 0.5 * h;
            worst = worst.max((dm - p.slope(rm, ym)?).abs());
            d_prev = d_next;
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CompareReport {
    pub max_err: f64,
    pub l2_err: f64,
    pub lambda_err: Option<f64>,
}

/// Errors of a grid field against the radial profile, sampled at node radii.
/// Classical-mode comparisons mean-center both fields first; the grid lambda,
/// when supplied alongside an oracle lambda, is compared directly.
pub fn compare(
    rs: &RadialSolution,
    grid: &Grid,
    u: &[f64],
    lambda_grid: Option<f64>,
) -> Result<CompareReport, OracleError> {
    let wanted = rs.radius();
    match grid.body {
        ConvexBody::Ball { radius, .. } if (radius - wanted).abs() <= 1e-9 * wanted.max(1.0) => {}
        _ => return Err(OracleError::DomainMismatch),
    }
    let ni = grid.n_interior;
    let mut diffs: Vec<f64> = (0..ni)
        .map(|i| {
            let x = grid.pos[i];
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            u[i] - rs.sample_u(r)
        })
        .collect();
    if rs.lambda.is_some() {
        let mean = diffs.iter().sum::<f64>() / ni as f64;
        for d in &mut diffs {
            *d -= mean;
        }
    }
    let max_err = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let cell = grid.h.powi(grid.body.dim() as i32);
    let l2_err = (cell * diffs.iter().map(|d| d * d).sum::<f64>()).sqrt();
    let lambda_err = match (lambda_grid, rs.lambda) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(CompareReport { max_err, l2_err, lambda_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_ball, make_ellipsoid};
    use crate::specops::{theta_value, Spectrum};
    use std::f64::consts::PI;

    fn quadratic_weight_problem() -> RadialProblem {
        RadialProblem {
            n: 2,
            theta: FRAC_PI_2,
            radius: 1.0,
            f_r: ScalarSpec::Quadratic { a: 1.0, b: 0.5 },
            bc: RadialBc::Classical(0.0),
        }
    }

    #[test]
    fn linear_profile_is_exact() {
        let p = RadialProblem {
            n: 3,
            theta: 3.0 * PI / 4.0,
            radius: 1.0,
            f_r: ScalarSpec::Const(1.0),
            bc: RadialBc::Classical(0.0),
        };
        let rs = radial_solve(&p).unwrap();
        for (r, psi) in rs.r_grid.iter().zip(&rs.psi) {
            assert!((psi - r).abs() <= 1e-12, "psi({r}) = {psi}");
        }
        assert!((rs.lambda.unwrap() - 1.0).abs() <= 1e-12);
        assert!(rs.branch_ok);
    }

    #[test]
    fn closed_form_slope_recovered() {
        // Theta = pi/2 in the plane turns the equation into det D^2 u = f^2,
        // i.e. psi psi' = r f^2, which integrates to
        // psi^2 = (2/3)((1 + r^2/2)^3 - 1) for f = 1 + r^2/2.
        let rs = radial_solve(&quadratic_weight_problem()).unwrap();
        let lambda_exact = (19.0f64 / 12.0).sqrt();
        assert!(
            (rs.lambda.unwrap() - lambda_exact).abs() <= 1e-12,
            "lambda = {:?}",
            rs.lambda
        );
        for (r, psi) in rs.r_grid.iter().zip(&rs.psi) {
            let exact = ((2.0 / 3.0) * ((1.0 + r * r / 2.0).powi(3) - 1.0)).sqrt();
            assert!((psi - exact).abs() <= 1e-12, "psi({r}) = {psi} vs {exact}");
        }
    }

    #[test]
    fn robin_mode_reconstructs_quadratic() {
        let p = RadialProblem {
            n: 2,
            theta: FRAC_PI_2,
            radius: 1.0,
            f_r: ScalarSpec::Const(1.0),
            bc: RadialBc::Robin(1.5),
        };
        let rs = radial_solve(&p).unwrap();
        assert!(rs.lambda.is_none());
        for (r, u) in rs.r_grid.iter().zip(&rs.u) {
            assert!((u - r * r / 2.0).abs() <= 1e-12, "u({r}) = {u}");
        }
        assert!((rs.sample_u(1.0) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn midpoint_defect_stays_small() {
        let problems = [
            quadratic_weight_problem(),
            RadialProblem {
                n: 3,
                theta: 3.0 * PI / 4.0,
                radius: 1.0,
                f_r: ScalarSpec::Const(1.0),
                bc: RadialBc::Classical(0.0),
            },
            RadialProblem {
                n: 2,
                theta: FRAC_PI_2,
                radius: 1.0,
                f_r: ScalarSpec::Const(1.0),
                bc: RadialBc::Robin(1.5),
            },
            RadialProblem {
                n: 3,
                theta: 3.0 * PI / 4.0 + 0.2,
                radius: 1.0,
                f_r: ScalarSpec::Quadratic { a: 2.0, b: -0.5 },
                bc: RadialBc::Robin(0.0),
            },
        ];
        for p in &problems {
            let rs = radial_solve(p).unwrap();
            let defect = rs.midpoint_defect(p).unwrap();
            assert!(defect <= 1e-10, "defect {defect:.3e} for {p:?}");
        }
    }

    #[test]
    fn halving_steps_gains_fourth_order() {
        let p = quadratic_weight_problem();
        let exact = (19.0f64 / 12.0).sqrt();
        let err = |steps| {
            let rs = radial_solve_with_steps(&p, steps).unwrap();
            (rs.lambda.unwrap() - exact).abs()
        };
        let (e1, e2) = (err(100), err(200));
        let ratio = e1 / e2;
        assert!(
            (12.0..=22.0).contains(&ratio),
            "errors {e1:.3e} -> {e2:.3e}, ratio {ratio:.2}"
        );
    }

    #[test]
    fn profile_reproduces_operator_phase() {
        let p = quadratic_weight_problem();
        let rs = radial_solve(&p).unwrap();
        for i in (100..rs.r_grid.len()).step_by(97) {
            let r = rs.r_grid[i];
            let psi = rs.psi[i];
            let lam = [p.slope(r, psi).unwrap(), psi / r, 0.0];
            let sp = Spectrum::diagonal(p.n, lam);
            let f = p.f_at(r).unwrap();
            let theta = theta_value(&sp, f).unwrap();
            assert!((theta - p.theta).abs() <= 1e-10, "theta({r}) = {theta}");
        }
    }

    #[test]
    fn branch_guard_trips_near_top_phase() {
        // The tan wall repels smooth trajectories (its blow-up outruns any
        // drift of psi/(r f)), so the guard fires where no slack exists at
        // all: a phase within the margin of the n pi/2 ceiling starts the
        // argument inside the forbidden band.
        let p = RadialProblem {
            n: 2,
            theta: PI - 1e-8,
            radius: 1.0,
            f_r: ScalarSpec::Const(1.0),
            bc: RadialBc::Classical(0.0),
        };
        match radial_solve(&p) {
            Err(OracleError::BranchExit { r }) => assert!(r < 1.0, "exit at {r}"),
            other => panic!("expected branch exit, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_weight_rejected() {
        let p = RadialProblem {
            n: 2,
            theta: FRAC_PI_2,
            radius: 1.0,
            f_r: ScalarSpec::Quadratic { a: 1.0, b: -2.0 },
            bc: RadialBc::Classical(0.0),
        };
        assert!(matches!(radial_solve(&p), Err(OracleError::NonpositiveF { .. })));
    }

    #[test]
    fn self_comparison_is_zero() {
        let p = quadratic_weight_problem();
        let rs = radial_solve(&p).unwrap();
        let grid = Grid::build(&make_ball(2, 1.0).unwrap(), 1.0 / 8.0).unwrap();
        let u = grid.sample(|x| rs.sample_u((x[0] * x[0] + x[1] * x[1]).sqrt()));
        let rep = compare(&rs, &grid, &u, rs.lambda).unwrap();
        assert_eq!(rep.max_err, 0.0);
        assert_eq!(rep.l2_err, 0.0);
        assert_eq!(rep.lambda_err, Some(0.0));
    }

    #[test]
    fn mismatched_domain_rejected() {
        let p = quadratic_weight_problem();
        let rs = radial_solve(&p).unwrap();
        let grid = Grid::build(&make_ellipsoid(&[1.1, 0.9]).unwrap(), 1.0 / 12.0).unwrap();
        let u = vec![0.0; grid.pos.len()];
        assert!(matches!(
            compare(&rs, &grid, &u, None),
            Err(OracleError::DomainMismatch)
        ));
    }
}
