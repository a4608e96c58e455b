//! Discrete nonlinear system: interior rows enforce the prescribed-phase
//! equation on centered second differences, ghost rows enforce the boundary
//! closure at foot points through a one-sided normal derivative.

use crate::grid::{stencil_offsets, Grid, GridError};
use crate::la::V3;
use crate::linsolve::Trip;
use crate::specops::{self, PhaseClass, PhaseSpec, SpectralError};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("field contains non-finite values")]
    NonFiniteField,
    #[error("coefficient must be positive, got {value} at ({x:?})")]
    NonpositiveCoefficient { x: V3, value: f64 },
    #[error("phase descriptor invalid: {0}")]
    InvalidPhase(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Closed-form (or sampled) scalar coefficient field.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarSpec {
    Const(f64),
    /// a + b |x|^2
    Quadratic { a: f64, b: f64 },
    /// lattice samples with their own spacing, multilinear in between
    Table(Arc<SampleTable>),
}

#[derive(Debug)]
pub struct SampleTable {
    pub h: f64,
    pub values: HashMap<[i64; 3], f64>,
    pub dim: usize,
}

impl PartialEq for SampleTable {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self, other)
    }
}

impl ScalarSpec {
    pub fn eval(&self, x: V3) -> Result<f64, AssemblyError> {
        match self {
            ScalarSpec::Const(c) => Ok(*c),
            ScalarSpec::Quadratic { a, b } => {
                Ok(a + b * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
            }
            ScalarSpec::Table(t) => {
                let mut acc = 0.0;
                let mut anchor = [0i64; 3];
                let mut tt = [0.0; 3];
                for a in 0..t.dim {
                    let s = x[a] / t.h;
                    anchor[a] = s.floor() as i64;
                    tt[a] = s - anchor[a] as f64;
                }
                for bits in 0..(1usize << t.dim) {
                    let mut c = anchor;
                    let mut w = 1.0;
                    for a in 0..t.dim {
                        if bits & (1 << a) != 0 {
                            c[a] += 1;
                            w *= tt[a];
                        } else {
                            w *= 1.0 - tt[a];
                        }
                    }
                    if w.abs() < 1e-13 {
                        continue;
                    }
                    match t.values.get(&c) {
                        Some(v) => acc += w * v,
                        None => {
                            return Err(AssemblyError::Grid(
                                GridError::OutsideInterpolationDomain(x[0], x[1], x[2]),
                            ))
                        }
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Pointwise affine transform `scale * self + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> ScalarSpec {
        match self {
            ScalarSpec::Const(c) => ScalarSpec::Const(scale * c + shift),
            ScalarSpec::Quadratic { a, b } => ScalarSpec::Quadratic {
                a: scale * a + shift,
                b: scale * b,
            },
            ScalarSpec::Table(t) => ScalarSpec::Table(Arc::new(SampleTable {
                h: t.h,
                dim: t.dim,
                values: t
                    .values
                    .iter()
                    .map(|(k, v)| (*k, scale * v + shift))
                    .collect(),
            })),
        }
    }
}

/// Boundary closure: the normal derivative plus `coeff` times the trace of u
/// equals the boundary data (plus a fixed shift in the prescribed-slope
/// variant).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Closure {
    /// u_nu + u = phi
    Robin,
    /// u_nu + eps u = phi
    Epsilon(f64),
    /// u_nu = lambda + phi with a fixed constant lambda
    Classical(f64),
}

impl Closure {
    pub fn coeff(&self) -> f64 {
        match self {
            Closure::Robin => 1.0,
            Closure::Epsilon(e) => *e,
            Closure::Classical(_) => 0.0,
        }
    }
    pub fn shift(&self) -> f64 {
        match self {
            Closure::Classical(l) => *l,
            _ => 0.0,
        }
    }
}

pub struct DiscreteProblem {
    pub grid: Grid,
    pub theta: PhaseSpec,
    pub closure: Closure,
    pub f_spec: ScalarSpec,
    pub phi_spec: ScalarSpec,
    pub f_interior: Vec<f64>,
    pub f_foot: Vec<f64>,
    /// Right-hand side of each ghost row: phi(foot) + closure shift.
    pub rhs_foot: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalStats {
    pub max_interior: f64,
    pub max_bc: f64,
}

impl DiscreteProblem {
    pub fn new(
        grid: Grid,
        theta: PhaseSpec,
        closure: Closure,
        f_spec: ScalarSpec,
        phi_spec: ScalarSpec,
    ) -> Result<Self, AssemblyError> {
        if theta.class == PhaseClass::Invalid {
            return Err(AssemblyError::InvalidPhase(format!(
                "theta = {} is outside the admissible range for n = {}",
                theta.theta, theta.n
            )));
        }
        let mut f_interior = Vec::with_capacity(grid.n_interior);
        for i in 0..grid.n_interior {
            let v = f_spec.eval(grid.pos[i])?;
            if !(v > 0.0) {
                return Err(AssemblyError::NonpositiveCoefficient {
                    x: grid.pos[i],
                    value: v,
                });
            }
            f_interior.push(v);
        }
        let mut f_foot = Vec::with_capacity(grid.ghosts.len());
        let mut rhs_foot = Vec::with_capacity(grid.ghosts.len());
        let shift = closure.shift();
        for gh in &grid.ghosts {
            let v = f_spec.eval(gh.foot)?;
            if !(v > 0.0) {
                return Err(AssemblyError::NonpositiveCoefficient {
                    x: gh.foot,
                    value: v,
                });
            }
            f_foot.push(v);
            rhs_foot.push(phi_spec.eval(gh.foot)? + shift);
        }
        Ok(DiscreteProblem {
            grid,
            theta,
            closure,
            f_spec,
            phi_spec,
            f_interior,
            f_foot,
            rhs_foot,
        })
    }

    pub fn num_unknowns(&self) -> usize {
        self.grid.num_nodes()
    }

    /// Add a constant to the boundary data of every ghost row.
    pub fn shift_rhs(&mut self, d: f64) {
        if d != 0.0 {
            for v in &mut self.rhs_foot {
                *v += d;
            }
        }
    }

    /// Swap the boundary closure in place, keeping the grid and coefficient
    /// samples; only the trace coefficient and the fixed shift change.
    pub fn set_closure(&mut self, closure: Closure) {
        let dshift = closure.shift() - self.closure.shift();
        if dshift != 0.0 {
            for v in &mut self.rhs_foot {
                *v += dshift;
            }
        }
        self.closure = closure;
    }

    /// Boundary-data value of the closure at an arbitrary point, i.e. the
    /// right-hand side of u_nu + coeff*u = rhs.
    pub fn closure_rhs(&self, x: V3) -> Result<f64, AssemblyError> {
        Ok(self.phi_spec.eval(x)? + self.closure.shift())
    }

    /// Normal-derivative weights of a ghost row: (w_foot, w_p1, w_p2)/(2h).
    fn bc_weights(&self) -> (f64, f64, f64) {
        let ih2 = 1.0 / (2.0 * self.grid.h);
        (3.0 * ih2, -4.0 * ih2, ih2)
    }
}

fn extrapolation_weights(tau: f64) -> (f64, f64, f64) {
    (
        0.5 * (tau + 1.0) * (tau + 2.0),
        -tau * (tau + 2.0),
        0.5 * tau * (tau + 1.0),
    )
}

pub fn residual(p: &DiscreteProblem, u: &[f64]) -> Result<(Vec<f64>, EvalStats), AssemblyError> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(AssemblyError::NonFiniteField);
    }
    let g = &p.grid;
    let mut r = vec![0.0; g.num_nodes()];
    let mut stats = EvalStats::default();
    for i in 0..g.n_interior {
        let sp = specops::eig_sym(g.n, &g.hessian_at(u, i).a)?;
        r[i] = specops::theta_value(&sp, p.f_interior[i])? - p.theta.theta;
        stats.max_interior = stats.max_interior.max(r[i].abs());
    }
    let (w0, w1, w2) = p.bc_weights();
    let c = p.closure.coeff();
    for (gi, gh) in g.ghosts.iter().enumerate() {
        let ub = gh.st_foot.eval(u);
        let up1 = gh.st_p1.eval(u);
        let up2 = gh.st_p2.eval(u);
        let row = if gh.bc_carrier {
            w0 * ub + w1 * up1 + w2 * up2 + c * ub - p.rhs_foot[gi]
        } else {
            let (e0, e1, e2) = extrapolation_weights(gh.tau);
            u[gh.node] - (e0 * ub + e1 * up1 + e2 * up2)
        };
        r[gh.node] = row;
        stats.max_bc = stats.max_bc.max(row.abs());
    }
    Ok((r, stats))
}

/// Residual together with the Jacobian triplets (fixed emission order, so the
/// sparsity pattern is identical across calls on one grid).
pub fn residual_and_jacobian(
    p: &DiscreteProblem,
    u: &[f64],
) -> Result<(Vec<f64>, Vec<Trip>, EvalStats), AssemblyError> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(AssemblyError::NonFiniteField);
    }
    let g = &p.grid;
    let n = g.n;
    let mut r = vec![0.0; g.num_nodes()];
    let mut stats = EvalStats::default();
    let s_len = stencil_offsets(n).len();
    let h2 = g.h * g.h;
    let mut trips: Vec<Trip> = Vec::with_capacity(g.n_interior * s_len + g.ghosts.len() * 16);

    for i in 0..g.n_interior {
        let sp = specops::eig_sym(n, &g.hessian_at(u, i).a)?;
        let ev = specops::operator_eval(&sp, p.f_interior[i])?;
        r[i] = ev.value - p.theta.theta;
        stats.max_interior = stats.max_interior.max(r[i].abs());
        let gm = &ev.grad_ambient;
        let s = g.stencil_of(i);
        let mut diag_sum = 0.0;
        for a in 0..n {
            let gaa = gm.a[a][a] / h2;
            diag_sum -= 2.0 * gaa;
            trips.push(Trip::new(i, s[1 + 2 * a], gaa));
            trips.push(Trip::new(i, s[2 + 2 * a], gaa));
        }
        trips.push(Trip::new(i, s[0], diag_sum));
        let mut base = 1 + 2 * n;
        for a in 0..n {
            for b in a + 1..n {
                let gab = gm.a[a][b] / (2.0 * h2);
                trips.push(Trip::new(i, s[base], gab));
                trips.push(Trip::new(i, s[base + 1], gab));
                trips.push(Trip::new(i, s[base + 2], -gab));
                trips.push(Trip::new(i, s[base + 3], -gab));
                base += 4;
            }
        }
    }

    let (w0, w1, w2) = p.bc_weights();
    let c = p.closure.coeff();
    for (gi, gh) in g.ghosts.iter().enumerate() {
        let ub = gh.st_foot.eval(u);
        let up1 = gh.st_p1.eval(u);
        let up2 = gh.st_p2.eval(u);
        let row = gh.node;
        if gh.bc_carrier {
            r[row] = w0 * ub + w1 * up1 + w2 * up2 + c * ub - p.rhs_foot[gi];
            for (st, wt) in [(&gh.st_foot, w0 + c), (&gh.st_p1, w1), (&gh.st_p2, w2)] {
                for (&id, &w) in st.ids.iter().zip(&st.w) {
                    trips.push(Trip::new(row, id, wt * w));
                }
            }
        } else {
            let (e0, e1, e2) = extrapolation_weights(gh.tau);
            r[row] = u[row] - (e0 * ub + e1 * up1 + e2 * up2);
            trips.push(Trip::new(row, row, 1.0));
            for (st, wt) in [(&gh.st_foot, -e0), (&gh.st_p1, -e1), (&gh.st_p2, -e2)] {
                for (&id, &w) in st.ids.iter().zip(&st.w) {
                    trips.push(Trip::new(row, id, wt * w));
                }
            }
        }
        stats.max_bc = stats.max_bc.max(r[row].abs());
    }
    Ok((r, trips, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_ball;
    use crate::grid::Grid;
    use crate::specops::phase_classify;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn disk_problem(h: f64, closure: Closure, phi: f64) -> DiscreteProblem {
        let b = make_ball(2, 1.0).unwrap();
        let g = Grid::build(&b, h).unwrap();
        DiscreteProblem::new(
            g,
            phase_classify(2, PI / 2.0).unwrap(),
            closure,
            ScalarSpec::Const(1.0),
            ScalarSpec::Const(phi),
        )
        .unwrap()
    }

    #[test]
    fn manufactured_quadratic_residual() {
        let p = disk_problem(1.0 / 32.0, Closure::Robin, 1.5);
        let u = p.grid.sample(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let (_, stats) = residual(&p, &u).unwrap();
        // interior rows vanish exactly (stencils exact on quadratics)
        assert!(stats.max_interior < 1e-12, "interior {}", stats.max_interior);
        // ghost rows carry the O(h) interpolation truncation of the
        // one-sided normal difference; measured 9.2e-3 at h = 1/32
        assert!(stats.max_bc < 2e-2, "bc {}", stats.max_bc);
    }

    #[test]
    fn zero_field_residual_is_minus_theta() {
        let p = disk_problem(1.0 / 16.0, Closure::Robin, 0.0);
        let u = vec![0.0; p.num_unknowns()];
        let (r, _) = residual(&p, &u).unwrap();
        for i in 0..p.grid.n_interior {
            assert!((r[i] + PI / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn classical_closure_on_radial_ansatz() {
        let p = disk_problem(1.0 / 32.0, Closure::Classical(1.0), 0.0);
        let u = p.grid.sample(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let (_, stats) = residual(&p, &u).unwrap();
        assert!(stats.max_bc < 2e-2, "bc {}", stats.max_bc);
    }

    #[test]
    fn quadratic_interior_rows_use_exact_eigenvalues() {
        let p = disk_problem(1.0 / 16.0, Closure::Robin, 0.0);
        let u = p
            .grid
            .sample(|x| 0.5 * x[0] * x[0] + 1.5 * x[0] * x[1] + 0.25 * x[1] * x[1]);
        let (r, _) = residual(&p, &u).unwrap();
        let m = [[1.0, 1.5, 0.0], [1.5, 0.5, 0.0], [0.0; 3]];
        let sp = specops::eig_sym(2, &m).unwrap();
        let expect = specops::theta_value(&sp, 1.0).unwrap() - PI / 2.0;
        for i in 0..p.grid.n_interior {
            assert!((r[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_directional_differences() {
        for (dim, h) in [(2usize, 1.0 / 16.0), (3usize, 1.0 / 8.0)] {
            let b = make_ball(dim, 1.0).unwrap();
            let g = Grid::build(&b, h).unwrap();
            let theta = if dim == 2 {
                phase_classify(2, PI / 2.0).unwrap()
            } else {
                phase_classify(3, 3.0 * PI / 4.0).unwrap()
            };
            for closure in [Closure::Robin, Closure::Epsilon(0.25), Closure::Classical(1.0)] {
                let p = DiscreteProblem::new(
                    Grid::build(&b, h).unwrap(),
                    theta,
                    closure,
                    ScalarSpec::Quadratic { a: 1.0, b: 0.25 },
                    ScalarSpec::Const(0.5),
                )
                .unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let base = g.sample(|x| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
                let u: Vec<f64> = base
                    .iter()
                    .map(|v| v + 0.05 * rng.random_range(-1.0..1.0))
                    .collect();
                let v: Vec<f64> = (0..u.len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let (_, trips, _) = residual_and_jacobian(&p, &u).unwrap();
                let mut jv = vec![0.0; u.len()];
                for t in &trips {
                    jv[t.row] += t.val * v[t.col];
                }
                let umax = u.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                let t = 1e-6 * (1.0 + umax);
                let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + t * b).collect();
                let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - t * b).collect();
                let (rp, _) = residual(&p, &up).unwrap();
                let (rm, _) = residual(&p, &um).unwrap();
                let mut worst = 0.0f64;
                let mut scale = 1.0f64;
                for i in 0..u.len() {
                    let fd = (rp[i] - rm[i]) / (2.0 * t);
                    worst = worst.max((jv[i] - fd).abs());
                    scale = scale.max(fd.abs());
                }
                assert!(
                    worst <= 1e-6 * scale,
                    "dim {dim} closure {closure:?}: {worst} vs scale {scale}"
                );
            }
        }
    }

    #[test]
    fn jacobian_pattern_stays_in_declared_stencils() {
        let p = disk_problem(1.0 / 16.0, Closure::Robin, 1.5);
        let u = p.grid.sample(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.1 * x[0]);
        let (_, trips, _) = residual_and_jacobian(&p, &u).unwrap();
        use std::collections::HashSet;
        let mut allowed: Vec<HashSet<usize>> = vec![HashSet::new(); p.num_unknowns()];
        for i in 0..p.grid.n_interior {
            allowed[i] = p.grid.stencil_of(i).iter().cloned().collect();
        }
        for gh in &p.grid.ghosts {
            let set = &mut allowed[gh.node];
            set.insert(gh.node);
            for st in [&gh.st_foot, &gh.st_p1, &gh.st_p2] {
                set.extend(st.ids.iter().cloned());
            }
        }
        for t in &trips {
            assert!(allowed[t.row].contains(&t.col), "row {} col {}", t.row, t.col);
        }
    }

    #[test]
    fn ghost_row_classical_foot_coefficient() {
        // classical closure rows are affine with foot coefficient 3/(2h) on
        // the boundary trace
        let p = disk_problem(1.0 / 32.0, Closure::Classical(1.0), 0.0);
        let gh = p
            .grid
            .ghosts
            .iter()
            .find(|gh| gh.d.abs() < 1e-12)
            .expect("boundary-aligned ghost");
        // foot is a lattice point: its stencil is that single node
        assert_eq!(gh.st_foot.ids.len(), 1);
        let u = p.grid.sample(|_| 0.0);
        let (_, trips, _) = residual_and_jacobian(&p, &u).unwrap();
        let coeff: f64 = trips
            .iter()
            .filter(|t| t.row == gh.node && t.col == gh.st_foot.ids[0])
            .map(|t| t.val)
            .sum();
        let expect = 3.0 / (2.0 * p.grid.h);
        assert!((coeff - expect).abs() < 1e-9, "coeff {coeff} vs {expect}");
    }

    #[test]
    fn nonpositive_f_rejected() {
        let b = make_ball(2, 1.0).unwrap();
        let g = Grid::build(&b, 1.0 / 16.0).unwrap();
        let err = DiscreteProblem::new(
            g,
            phase_classify(2, PI / 2.0).unwrap(),
            Closure::Robin,
            ScalarSpec::Quadratic { a: 0.1, b: -1.0 },
            ScalarSpec::Const(0.0),
        );
        assert!(matches!(
            err,
            Err(AssemblyError::NonpositiveCoefficient { .. })
        ));
    }
}
