//! Norm reports and maximum-principle functionals evaluated on solved fields,
//! plus randomized property suites over the operator's level sets. Everything
//! here is read-only diagnostics: the functionals report where their extrema
//! sit, they never alter a solution.

use crate::assembly::{residual, AssemblyError, Closure, DiscreteProblem};
use crate::geometry::{barrier_h, default_collar, GeometryError};
use crate::grid::GridError;
use crate::la::{axpy, dot, norm, scale, sub, V3};
use crate::specops::{
    eig_sym, lemma_spectrum_props, mean_zero_quadratic, phase_classify, wy_value, PhaseClass,
    SpectralError, Spectrum,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

/// Largest interior phase residual accepted as "a solution": one hundred
/// times the solver's default convergence tolerance.
pub const SOLUTION_GATE: f64 = 1e-8;
/// Log sweep for the barrier and directional penalty weights.
pub const WEIGHT_SWEEP: [f64; 5] = [1.0, 1e1, 1e2, 1e3, 1e4];
/// Extrema within this many spacings of the boundary count as boundary-band.
pub const BAND_FACTOR: f64 = 1.5;
const MIN_COLLAR_LAYERS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("field is not a converged solution: phase residual {residual:.3e}")]
    NotASolution { residual: f64 },
    #[error("collar holds only {layers:.1} node layers, need at least 3")]
    CollarTooThin { layers: f64 },
    #[error("the path functional is only defined along the penalized closure")]
    WrongBCMode,
    #[error("log argument {value:.3e} at node {node} is not positive")]
    NonPositiveLogArgument { node: usize, value: f64 },
    #[error("level-set sampler accepted {accepted} of {attempts} draws; phase looks infeasible")]
    AdmissibilityExhausted { accepted: usize, attempts: usize },
    #[error("property {name} failed with margin {margin:.3e}")]
    PropertyFailed { name: &'static str, margin: f64 },
    #[error("bad diagnostic parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Discrete norms of a solved field, mirroring the estimates the solution is
/// supposed to satisfy uniformly.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimateReport {
    /// max |u| over interior nodes and boundary foot values.
    pub c0: f64,
    /// max |Du| over interior nodes.
    pub c1: f64,
    /// max |Du| over the default collar.
    pub c1_boundary: f64,
    /// max |u_nn| over boundary feet, one-sided second difference along the
    /// inward normal with probes at depths 0, h, 2h, 3h.
    pub dnn: f64,
    /// max spectral radius of the discrete Hessian.
    pub d2: f64,
    /// min trace of the discrete Hessian; positive for admissible solutions.
    pub min_laplacian: f64,
    /// max |F - Theta| over interior nodes.
    pub phase_residual: f64,
}

pub fn estimate_report(p: &DiscreteProblem, u: &[f64]) -> Result<EstimateReport, HarnessError> {
    let (_, stats) = residual(p, u)?;
    if stats.max_interior > SOLUTION_GATE {
        return Err(HarnessError::NotASolution { residual: stats.max_interior });
    }
    let g = &p.grid;
    let ni = g.n_interior;
    let n = g.body.dim();
    let mu = default_collar(&g.body);
    let mut c0 = 0.0f64;
    let mut c1 = 0.0f64;
    let mut c1_boundary = 0.0f64;
    let mut d2 = 0.0f64;
    let mut min_laplacian = f64::INFINITY;
    for i in 0..ni {
        c0 = c0.max(u[i].abs());
        let du = norm(g.gradient_at(u, i));
        c1 = c1.max(du);
        if g.d_interior[i] <= mu {
            c1_boundary = c1_boundary.max(du);
        }
        let hess = g.hessian_at(u, i);
        let sp = eig_sym(n, &hess.a)?;
        d2 = d2.max(sp.lambda[0].abs().max(sp.lambda[n - 1].abs()));
        min_laplacian = min_laplacian.min(hess.trace());
    }
    let mut dnn = 0.0f64;
    for gh in &g.ghosts {
        c0 = c0.max(gh.st_foot.eval(u).abs());
        let inward = scale(gh.nu, -1.0);
        let probe = |k: f64| g.interpolate_quadratic(u, axpy(gh.foot, k * g.h, inward), inward);
        let v =
            (2.0 * probe(0.0)? - 5.0 * probe(1.0)? + 4.0 * probe(2.0)? - probe(3.0)?) / (g.h * g.h);
        dnn = dnn.max(v.abs());
    }
    Ok(EstimateReport {
        c0,
        c1,
        c1_boundary,
        dnn,
        d2,
        min_laplacian,
        phase_residual: stats.max_interior,
    })
}

/// Constants for the maximum-principle functionals. The weights are the
/// tunable "sufficiently large" constants of the underlying estimates; the
/// sweeps below search the log grid `WEIGHT_SWEEP` for the smallest workable
/// value.
#[derive(Debug, Clone)]
pub struct DiagnosticSpec {
    /// Barrier penalty weight multiplying h = -d + d^2.
    pub barrier_weight: f64,
    /// Quadratic penalty weight in the directional functional.
    pub ltu_weight: f64,
    /// Linear collar slope in the gradient functional.
    pub collar_slope: f64,
    /// Quadratic weight in the path functional.
    pub quad_weight: f64,
    /// Collar width.
    pub mu: f64,
    /// Upper bound max |u| + 1 used inside the log.
    pub m0: f64,
    /// Unit directions for the directional functional.
    pub directions: Vec<V3>,
}

impl DiagnosticSpec {
    pub fn for_problem(p: &DiscreteProblem, u: &[f64]) -> DiagnosticSpec {
        let dim = p.grid.body.dim();
        let sup = u[..p.grid.n_interior]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        DiagnosticSpec {
            barrier_weight: 10.0,
            ltu_weight: 10.0,
            collar_slope: 10.0,
            quad_weight: 0.1,
            mu: default_collar(&p.grid.body),
            m0: sup + 1.0,
            directions: direction_set(dim),
        }
    }
}

/// 64 equispaced circle directions in the plane, 128 Fibonacci-lattice
/// directions on the sphere.
pub fn direction_set(dim: usize) -> Vec<V3> {
    if dim == 2 {
        (0..64)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 64.0;
                [t.cos(), t.sin(), 0.0]
            })
            .collect()
    } else {
        let golden = PI * (3.0 - 5.0f64.sqrt());
        (0..128)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / 128.0;
                let r = (1.0 - z * z).sqrt();
                let t = golden * k as f64;
                [r * t.cos(), r * t.sin(), z]
            })
            .collect()
    }
}

/// Extremum of a functional together with where it was attained.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Extremum {
    pub value: f64,
    pub node: usize,
    pub at: V3,
    pub on_band: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepPoint {
    pub weight: f64,
    pub on_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    /// Minimum of the upper barrier s - s^2/2 - B0 h over the collar.
    pub upper_min: Extremum,
    /// Maximum of the lower barrier s + s^2/2 + B0 h over the collar.
    pub lower_max: Extremum,
    pub sweep: Vec<SweepPoint>,
    /// Smallest swept weight placing both extrema on the boundary band.
    pub first_passing: Option<f64>,
}

fn collar_nodes(p: &DiscreteProblem, mu: f64) -> Result<Vec<usize>, HarnessError> {
    let layers = mu / p.grid.h;
    if layers < MIN_COLLAR_LAYERS {
        return Err(HarnessError::CollarTooThin { layers });
    }
    Ok((0..p.grid.n_interior)
        .filter(|&i| p.grid.d_interior[i] <= mu)
        .collect())
}

/// Normal slack s = <Du, Dh> - phi_eff at a collar node, where phi_eff folds
/// the closure's zeroth-order term into the data: u_nu = phi_eff on the
/// boundary exactly when the discrete boundary condition holds.
fn normal_slack(
    p: &DiscreteProblem,
    u: &[f64],
    mu: f64,
    i: usize,
) -> Result<(f64, f64), HarnessError> {
    let x = p.grid.pos[i];
    let bh = barrier_h(&p.grid.body, x, mu)?;
    let du = p.grid.gradient_at(u, i);
    let phi_eff = p.closure_rhs(x)? - p.closure.coeff() * u[i];
    Ok((dot(du, bh.grad) - phi_eff, bh.h))
}

/// Single-node values (upper, lower) of the two barrier functionals.
pub fn barrier_values(
    p: &DiscreteProblem,
    u: &[f64],
    spec: &DiagnosticSpec,
    node: usize,
) -> Result<(f64, f64), HarnessError> {
    let (s, h) = normal_slack(p, u, spec.mu, node)?;
    let b = spec.barrier_weight;
    Ok((s - 0.5 * s * s - b * h, s + 0.5 * s * s + b * h))
}

pub fn barrier_diag(
    p: &DiscreteProblem,
    u: &[f64],
    spec: &DiagnosticSpec,
) -> Result<BarrierReport, HarnessError> {
    let nodes = collar_nodes(p, spec.mu)?;
    let band = BAND_FACTOR * p.grid.h;
    let mut base = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let (s, h) = normal_slack(p, u, spec.mu, i)?;
        base.push((i, s - 0.5 * s * s, s + 0.5 * s * s, h));
    }
    let extrema = |b: f64| {
        let mut up = (f64::INFINITY, 0usize);
        let mut lo = (f64::NEG_INFINITY, 0usize);
        for &(i, bu, bl, h) in &base {
            let pu = bu - b * h;
            if pu < up.0 {
                up = (pu, i);
            }
            let pl = bl + b * h;
            if pl > lo.0 {
                lo = (pl, i);
            }
        }
        (up, lo)
    };
    let on_band = |i: usize| p.grid.d_interior[i] <= band;
    let (up, lo) = extrema(spec.barrier_weight);
    let mut sweep = Vec::new();
    let mut first_passing = None;
    for w in WEIGHT_SWEEP {
        let (u2, l2) = extrema(w);
        let ok = on_band(u2.1) && on_band(l2.1);
        sweep.push(SweepPoint { weight: w, on_band: ok });
        if ok && first_passing.is_none() {
            first_passing = Some(w);
        }
    }
    Ok(BarrierReport {
        upper_min: Extremum { value: up.0, node: up.1, at: p.grid.pos[up.1], on_band: on_band(up.1) },
        lower_max: Extremum { value: lo.0, node: lo.1, at: p.grid.pos[lo.1], on_band: on_band(lo.1) },
        sweep,
        first_passing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LtuReport {
    /// Overall maximum of V with the data gradient taken along the solution.
    pub max: Extremum,
    pub max_direction: V3,
    /// Overall maximum with the data gradient taken in x only.
    pub partial_max: Extremum,
    pub partial_direction: V3,
    /// Sweep verdicts: every direction's maximum on the boundary band.
    pub sweep: Vec<SweepPoint>,
    pub first_passing: Option<f64>,
}

struct LtuNode {
    hess: crate::la::SymMat,
    half_du2: f64,
    half_x2: f64,
    /// Collar-only: outward normal and the two data-gradient combinations
    /// q = Dphi - Du - (Dnu) Du entering v; None kills v outside the collar.
    normal: Option<(V3, V3, V3)>,
}

/// Central difference of the closure data along each axis; the zeroth-order
/// closure term is handled by the caller.
fn data_gradient(p: &DiscreteProblem, x: V3, step: f64) -> Result<V3, HarnessError> {
    let mut grad = [0.0; 3];
    for (a, ga) in grad.iter_mut().enumerate().take(p.grid.body.dim()) {
        let mut xp = x;
        let mut xm = x;
        xp[a] += step;
        xm[a] -= step;
        *ga = (p.closure_rhs(xp)? - p.closure_rhs(xm)?) / (2.0 * step);
    }
    Ok(grad)
}

pub fn ltu_diag(
    p: &DiscreteProblem,
    u: &[f64],
    spec: &DiagnosticSpec,
) -> Result<LtuReport, HarnessError> {
    collar_nodes(p, spec.mu)?;
    let g = &p.grid;
    let ni = g.n_interior;
    let band = BAND_FACTOR * g.h;
    let c = p.closure.coeff();
    let mut nodes = Vec::with_capacity(ni);
    for i in 0..ni {
        let x = g.pos[i];
        let du = g.gradient_at(u, i);
        let normal = if g.d_interior[i] <= spec.mu {
            let dd = g.body.signed_distance(x)?;
            let nu = scale(dd.grad_d, -1.0);
            let bend = scale(dd.hess_d.mul_vec(du), -1.0);
            let dphi = data_gradient(p, x, 0.5 * g.h)?;
            let q_partial = sub(sub(dphi, du), bend);
            let q_total = sub(q_partial, scale(du, c));
            Some((nu, q_total, q_partial))
        } else {
            None
        };
        nodes.push(LtuNode {
            hess: g.hessian_at(u, i),
            half_du2: 0.5 * dot(du, du),
            half_x2: 0.5 * dot(x, x),
            normal,
        });
    }
    let value = |nd: &LtuNode, xi: V3, weight: f64, total: bool| {
        let v = match &nd.normal {
            Some((nu, qt, qp)) => {
                let xin = dot(xi, *nu);
                let xi_t = sub(xi, scale(*nu, xin));
                2.0 * xin * dot(xi_t, if total { *qt } else { *qp })
            }
            None => 0.0,
        };
        nd.hess.quad(xi) - v + nd.half_du2 + weight * nd.half_x2
    };
    let scan = |weight: f64, total: bool| {
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        let mut all_band = true;
        for (k, xi) in spec.directions.iter().enumerate() {
            let mut dir_best = (f64::NEG_INFINITY, 0usize);
            for (i, nd) in nodes.iter().enumerate() {
                let v = value(nd, *xi, weight, total);
                if v > dir_best.0 {
                    dir_best = (v, i);
                }
            }
            all_band &= g.d_interior[dir_best.1] <= band;
            if dir_best.0 > best.0 {
                best = (dir_best.0, dir_best.1, k);
            }
        }
        (best, all_band)
    };
    let (best_t, _) = scan(spec.ltu_weight, true);
    let (best_p, _) = scan(spec.ltu_weight, false);
    let mut sweep = Vec::new();
    let mut first_passing = None;
    for w in WEIGHT_SWEEP {
        let (_, ok) = scan(w, true);
        sweep.push(SweepPoint { weight: w, on_band: ok });
        if ok && first_passing.is_none() {
            first_passing = Some(w);
        }
    }
    let ex = |b: (f64, usize, usize)| Extremum {
        value: b.0,
        node: b.1,
        at: g.pos[b.1],
        on_band: g.d_interior[b.1] <= band,
    };
    Ok(LtuReport {
        max: ex(best_t),
        max_direction: spec.directions[best_t.2],
        partial_max: ex(best_p),
        partial_direction: spec.directions[best_p.2],
        sweep,
        first_passing,
    })
}

/// Which gradient functionals to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientRequest {
    /// Collar functional only.
    CollarOnly,
    /// Collar functional plus the path functional (penalized closure only).
    WithPath,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientAuxReport {
    /// Max of log|Dw|^2 - log(m0 - u) + a0 d over the collar, w = u + phi_eff d.
    pub collar_max: Extremum,
    /// Max of log|Dw|^2 + (b/2)|x|^2 over the interior, w = (1 + eps h)u - phi h.
    pub path_max: Option<Extremum>,
}

pub fn gradient_aux_diag(
    p: &DiscreteProblem,
    u: &[f64],
    spec: &DiagnosticSpec,
    req: GradientRequest,
) -> Result<GradientAuxReport, HarnessError> {
    let g = &p.grid;
    let ni = g.n_interior;
    let band = BAND_FACTOR * g.h;
    let c = p.closure.coeff();
    let nodes = collar_nodes(p, spec.mu)?;
    let depth = |k: usize| {
        if k < ni {
            g.d_interior[k]
        } else {
            g.ghosts[k - ni].d
        }
    };
    let mut w = vec![0.0; u.len()];
    for (k, wk) in w.iter_mut().enumerate() {
        let phi_eff = p.closure_rhs(g.pos[k])? - c * u[k];
        *wk = u[k] + phi_eff * depth(k);
    }
    let mut collar_max = (f64::NEG_INFINITY, 0usize);
    for &i in &nodes {
        let room = spec.m0 - u[i];
        if room <= 0.0 {
            return Err(HarnessError::NonPositiveLogArgument { node: i, value: room });
        }
        let dw = g.gradient_at(&w, i);
        let dw2 = dot(dw, dw);
        // An exact zero of Dw is a log singularity pointing down; it cannot
        // carry the maximum, so symmetry points are simply skipped.
        if dw2 == 0.0 {
            continue;
        }
        let val = dw2.ln() - room.ln() + spec.collar_slope * g.d_interior[i];
        if val > collar_max.0 {
            collar_max = (val, i);
        }
    }
    if !collar_max.0.is_finite() {
        return Err(HarnessError::NonPositiveLogArgument { node: 0, value: 0.0 });
    }
    let path_max = if req == GradientRequest::WithPath {
        let eps = match p.closure {
            Closure::Epsilon(e) => e,
            _ => return Err(HarnessError::WrongBCMode),
        };
        let mut wp = vec![0.0; u.len()];
        for (k, wk) in wp.iter_mut().enumerate() {
            let d = depth(k);
            let hb = -d + d * d;
            *wk = (1.0 + eps * hb) * u[k] - p.closure_rhs(g.pos[k])? * hb;
        }
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..ni {
            let dw = g.gradient_at(&wp, i);
            let dw2 = dot(dw, dw);
            if dw2 == 0.0 {
                continue;
            }
            let val = dw2.ln() + 0.5 * spec.quad_weight * dot(g.pos[i], g.pos[i]);
            if val > best.0 {
                best = (val, i);
            }
        }
        if !best.0.is_finite() {
            return Err(HarnessError::NonPositiveLogArgument { node: 0, value: 0.0 });
        }
        Some(Extremum {
            value: best.0,
            node: best.1,
            at: g.pos[best.1],
            on_band: g.d_interior[best.1] <= band,
        })
    } else {
        None
    };
    Ok(GradientAuxReport {
        collar_max: Extremum {
            value: collar_max.0,
            node: collar_max.1,
            at: g.pos[collar_max.1],
            on_band: g.d_interior[collar_max.1] <= band,
        },
        path_max,
    })
}

/// Spectra on the level set sum arctan(lambda_i / f) = theta, built from
/// uniform angle draws with the last angle solved for and rejected when it
/// leaves the principal branch. Deterministic in the seed.
pub fn sample_level_set(
    n: usize,
    theta: f64,
    f: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Spectrum>, HarnessError> {
    if !(f > 0.0) {
        return Err(HarnessError::BadParameter(format!("weight f = {f} must be positive")));
    }
    if n != 2 && n != 3 {
        return Err(HarnessError::BadParameter(format!("dimension {n} unsupported")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = 10 * count + 10_000;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < limit {
        attempts += 1;
        let mut angles = [0.0f64; 3];
        let mut sum = 0.0;
        for a in angles.iter_mut().take(n - 1) {
            *a = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
            sum += *a;
        }
        let last = theta - sum;
        if last <= -FRAC_PI_2 || last >= FRAC_PI_2 {
            continue;
        }
        angles[n - 1] = last;
        let mut lambda = [0.0f64; 3];
        for j in 0..n {
            lambda[j] = f * angles[j].tan();
        }
        out.push(Spectrum::diagonal(n, lambda));
    }
    if out.len() < count {
        return Err(HarnessError::AdmissibilityExhausted { accepted: out.len(), attempts });
    }
    Ok(out)
}

/// Worst margins over a sampled level set. Ordering and sign claims are
/// asserted (scaled to each sample's magnitude); the trace-form gap is only
/// measured, since nothing pins its sign pointwise.
#[derive(Debug, Clone, Copy, Serialize, Default)]
pub struct SuiteReport {
    pub samples: usize,
    /// min over samples of lambda_{n-1} - |lambda_n|.
    pub worst_order_margin: Option<f64>,
    /// max over samples of sum 1/lambda_i (negative bottom eigenvalue only).
    pub worst_recip_sum: Option<f64>,
    /// min over samples of lambda_n + f / tan(delta) (supercritical only).
    pub worst_lower_margin: Option<f64>,
    /// min over samples of the mean-zero quadratic, scaled.
    pub worst_mean_zero: Option<f64>,
    /// min over samples of sum F^{ii} lambda_i (critical phase only).
    pub worst_wy: Option<f64>,
    /// min over samples of sum F^{ii} - sum F^{ii} lambda_i, measured only.
    pub worst_trace_gap: Option<f64>,
}

const PROPERTY_TOL: f64 = 1e-12;

fn fold_min(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.map_or(v, |w| w.min(v)));
}

pub fn run_lemma_suites(
    n: usize,
    theta: f64,
    f: f64,
    count: usize,
    seed: u64,
) -> Result<SuiteReport, HarnessError> {
    let samples = sample_level_set(n, theta, f, count, seed)?;
    let mut report = SuiteReport { samples: samples.len(), ..SuiteReport::default() };
    if samples.is_empty() {
        return Ok(report);
    }
    let ph = phase_classify(n, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for sp in &samples {
        let props = lemma_spectrum_props(sp, f, &ph)?;
        fold_min(&mut report.worst_order_margin, props.order_margin);
        if !props.ordered_positive {
            return Err(HarnessError::PropertyFailed {
                name: "eigenvalue ordering",
                margin: props.order_margin,
            });
        }
        if let Some(s) = props.recip_sum {
            report.worst_recip_sum =
                Some(report.worst_recip_sum.map_or(s, |w| w.max(s)));
            if !props.recip_ok {
                return Err(HarnessError::PropertyFailed {
                    name: "reciprocal sum",
                    margin: s,
                });
            }
        }
        if let Some(m) = props.lower_margin {
            fold_min(&mut report.worst_lower_margin, m);
            if !props.lower_ok {
                return Err(HarnessError::PropertyFailed {
                    name: "eigenvalue lower bound",
                    margin: m,
                });
            }
        }
        if sp.lambda[n - 2] > 0.0 {
            let mut x = [0.0f64; 3];
            let mut mean = 0.0;
            for xa in x.iter_mut().take(n) {
                *xa = rng.random_range(-1.0..1.0);
                mean += *xa;
            }
            mean /= n as f64;
            for xa in x.iter_mut().take(n) {
                *xa -= mean;
            }
            let q = mean_zero_quadratic(sp, x)?;
            let scale_q: f64 =
                1.0 + (0..n).map(|j| (sp.lambda[j] * x[j] * x[j]).abs()).sum::<f64>();
            let margin = q / scale_q;
            fold_min(&mut report.worst_mean_zero, margin);
            if margin < -PROPERTY_TOL {
                return Err(HarnessError::PropertyFailed {
                    name: "mean-zero quadratic",
                    margin,
                });
            }
        }
        let wy = wy_value(sp, f)?;
        if ph.class == PhaseClass::Critical {
            fold_min(&mut report.worst_wy, wy);
            if wy < -PROPERTY_TOL {
                return Err(HarnessError::PropertyFailed { name: "trace form sign", margin: wy });
            }
        }
        let trace_f: f64 = (0..n).map(|j| f / (f * f + sp.lambda[j] * sp.lambda[j])).sum();
        fold_min(&mut report.worst_trace_gap, trace_f - wy);
    }
    Ok(report)
}

/// Largest residual of the differentiated operator identity
/// sum_i (f u_{iip} - lambda_i f_p) / (f^2 + lambda_i^2) over deep-interior
/// nodes and coordinate directions p, with the second-order factors taken in
/// each node's eigenframe and the outer derivative by central differences.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityReport {
    pub max_residual: f64,
    pub nodes: usize,
}

pub fn identity_residual(p: &DiscreteProblem, u: &[f64]) -> Result<IdentityReport, HarnessError> {
    let g = &p.grid;
    let ni = g.n_interior;
    let n = g.body.dim();
    let mut worst = 0.0f64;
    let mut used = 0usize;
    // Each probe differentiates neighbor Hessians, so the neighbors' own
    // stencils must stay clear of ghost nodes or their closure error leaks
    // into the quotient at O(1).
    let clear = |j: usize| g.stencil_of(j).iter().all(|&k| k < ni);
    'nodes: for i in 0..ni {
        let st = g.stencil_of(i);
        let mut nb = [[0usize; 2]; 3];
        for a in 0..n {
            let (jp, jm) = (st[1 + 2 * a], st[2 + 2 * a]);
            if jp >= ni || jm >= ni || !clear(jp) || !clear(jm) {
                continue 'nodes;
            }
            nb[a] = [jp, jm];
        }
        used += 1;
        let sp = eig_sym(n, &g.hessian_at(u, i).a)?;
        let f = p.f_interior[i];
        for a in 0..n {
            let hp = g.hessian_at(u, nb[a][0]);
            let hm = g.hessian_at(u, nb[a][1]);
            let fp = (p.f_interior[nb[a][0]] - p.f_interior[nb[a][1]]) / (2.0 * g.h);
            let mut res = 0.0;
            for j in 0..n {
                let vj = sp.frame[j];
                let uiip = (hp.quad(vj) - hm.quad(vj)) / (2.0 * g.h);
                let lj = sp.lambda[j];
                res += (f * uiip - lj * fp) / (f * f + lj * lj);
            }
            worst = worst.max(res.abs());
        }
    }
    Ok(IdentityReport { max_residual: worst, nodes: used })
}
