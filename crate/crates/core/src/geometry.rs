//! Convex domains, signed distance with foot-point data, and the boundary
//! barrier built from the distance function.
//!
//! All bodies are strictly convex, contain the origin, and use the convention
//! that the signed distance is positive inside. The deformation toward the
//! unit ball is exact on support functions, so every intermediate domain is
//! again one of the representable body kinds.

use crate::la::{axpy, dot, eig2, norm, scale, sub, tangent_basis, SymMat, V3, ZERO_V};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("body is not strictly convex: {0}")]
    NonConvex(String),
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("boundary projection did not converge: {0}")]
    ProjectionDiverged(String),
    #[error("point at distance {d:.6} is outside the collar [0, {mu:.6}]")]
    OutsideCollar { d: f64, mu: f64 },
}

/// Strictly convex body containing the origin.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub enum ConvexBody {
    Ball {
        dim: usize,
        radius: f64,
    },
    Ellipsoid {
        dim: usize,
        axes: V3,
    },
    /// 2-D body given by a truncated Fourier support function
    /// `s(t) = c[0] + sum_k (c[2k-1] cos kt + c[2k] sin kt)`.
    Support2d {
        coeffs: Vec<f64>,
    },
    /// Minkowski combination `scale * inner + pad * B_1`, represented through
    /// the support function `scale * s_inner + pad`.
    Offset {
        scale: f64,
        pad: f64,
        inner: Box<ConvexBody>,
    },
}

/// Distance data at a point: signed distance (positive inside), nearest
/// boundary point, outward normal there, and the principal curvatures and
/// directions of the boundary at the foot. `regular` is false on the medial
/// axis, where the foot is not unique and the derivative fields are not
/// meaningful.
#[derive(Clone, Debug)]
pub struct DistanceData {
    pub d: f64,
    pub foot: V3,
    pub nu: V3,
    pub kappa: [f64; 2],
    pub dirs: [V3; 2],
    pub grad_d: V3,
    pub hess_d: SymMat,
    pub regular: bool,
}

/// Barrier `h = -d + d^2` on the collar, with its derivatives and the
/// pointwise eigenvalue range of the Hessian.
#[derive(Clone, Debug)]
pub struct BarrierH {
    pub h: f64,
    pub grad: V3,
    pub hess: SymMat,
    pub eig_lo: f64,
    pub eig_hi: f64,
}

struct RawProj {
    d: f64,
    foot: V3,
    nu: V3,
    kappa: [f64; 2],
    dirs: [V3; 2],
    regular: bool,
}

pub fn make_ball(dim: usize, radius: f64) -> Result<ConvexBody, GeometryError> {
    if dim != 2 && dim != 3 {
        return Err(GeometryError::BadDimension(dim));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(GeometryError::NonConvex(format!("ball radius {radius}")));
    }
    Ok(ConvexBody::Ball { dim, radius })
}

pub fn make_ellipsoid(axes: &[f64]) -> Result<ConvexBody, GeometryError> {
    let dim = axes.len();
    if dim != 2 && dim != 3 {
        return Err(GeometryError::BadDimension(dim));
    }
    let mut a = [1.0; 3];
    for (i, &ax) in axes.iter().enumerate() {
        if !(ax > 0.0) || !ax.is_finite() {
            return Err(GeometryError::NonConvex(format!("ellipsoid axis {ax}")));
        }
        a[i] = ax;
    }
    Ok(ConvexBody::Ellipsoid { dim, axes: a })
}

/// Strict convexity and interior origin are checked by sampling the support
/// function: both `s` and the curvature radius `s + s''` must stay positive.
pub fn make_support2d(coeffs: &[f64]) -> Result<ConvexBody, GeometryError> {
    if coeffs.is_empty() {
        return Err(GeometryError::NonConvex("empty support coefficients".into()));
    }
    let body = ConvexBody::Support2d { coeffs: coeffs.to_vec() };
    let samples = 1440;
    for k in 0..samples {
        let t = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
        let (s, _, s2) = support2d_eval(coeffs, t);
        if s < 1e-6 {
            return Err(GeometryError::NonConvex(format!(
                "support function reaches {s:.3e} at angle {t:.3} (s can be <= 0)"
            )));
        }
        if s + s2 < 1e-6 {
            return Err(GeometryError::NonConvex(format!(
                "curvature radius s + s'' reaches {:.3e} at angle {t:.3}",
                s + s2
            )));
        }
    }
    Ok(body)
}

fn support2d_eval(c: &[f64], t: f64) -> (f64, f64, f64) {
    let (mut s, mut s1, mut s2) = (c[0], 0.0, 0.0);
    let mut k = 1usize;
    let mut idx = 1usize;
    while idx < c.len() {
        let (kc, ks) = ((k as f64 * t).cos(), (k as f64 * t).sin());
        let kf = k as f64;
        let a = c[idx];
        let b = if idx + 1 < c.len() { c[idx + 1] } else { 0.0 };
        s += a * kc + b * ks;
        s1 += kf * (-a * ks + b * kc);
        s2 += kf * kf * (-a * kc - b * ks);
        idx += 2;
        k += 1;
    }
    (s, s1, s2)
}

/// Deformation `t * body + (1 - t) * B_1`, exact on support functions.
/// `t = 0` is the unit ball and `t = 1` returns the body unchanged.
pub fn homotopy_domain(body: &ConvexBody, t: f64) -> ConvexBody {
    assert!((0.0..=1.0).contains(&t), "deformation parameter {t} outside [0, 1]");
    if t == 1.0 {
        return body.clone();
    }
    if t == 0.0 {
        return ConvexBody::Ball { dim: body.dim(), radius: 1.0 };
    }
    match body {
        ConvexBody::Ball { dim, radius } => {
            let r = if (radius - 1.0).abs() < 1e-15 {
                1.0
            } else {
                t * radius + (1.0 - t)
            };
            ConvexBody::Ball { dim: *dim, radius: r }
        }
        ConvexBody::Support2d { coeffs } => {
            let mut c: Vec<f64> = coeffs.iter().map(|v| t * v).collect();
            c[0] += 1.0 - t;
            ConvexBody::Support2d { coeffs: c }
        }
        ConvexBody::Ellipsoid { .. } => ConvexBody::Offset {
            scale: t,
            pad: 1.0 - t,
            inner: Box::new(body.clone()),
        },
        ConvexBody::Offset { scale, pad, inner } => ConvexBody::Offset {
            scale: t * scale,
            pad: t * pad + (1.0 - t),
            inner: inner.clone(),
        },
    }
}

impl ConvexBody {
    pub fn dim(&self) -> usize {
        match self {
            ConvexBody::Ball { dim, .. } | ConvexBody::Ellipsoid { dim, .. } => *dim,
            ConvexBody::Support2d { .. } => 2,
            ConvexBody::Offset { inner, .. } => inner.dim(),
        }
    }

    /// Support function on unit directions.
    pub fn support(&self, u: V3) -> f64 {
        match self {
            ConvexBody::Ball { radius, .. } => *radius,
            ConvexBody::Ellipsoid { dim, axes } => {
                let mut s = 0.0;
                for i in 0..*dim {
                    s += axes[i] * axes[i] * u[i] * u[i];
                }
                s.sqrt()
            }
            ConvexBody::Support2d { coeffs } => support2d_eval(coeffs, u[1].atan2(u[0])).0,
            ConvexBody::Offset { scale, pad, inner } => scale * inner.support(u) + pad,
        }
    }

    /// Half-widths of the axis-aligned bounding box.
    pub fn extent(&self) -> V3 {
        let n = self.dim();
        let mut e = ZERO_V;
        for i in 0..n {
            let mut u = ZERO_V;
            u[i] = 1.0;
            let plus = self.support(u);
            u[i] = -1.0;
            e[i] = plus.max(self.support(u));
        }
        e
    }

    /// Radius of the largest origin-centered inscribed ball.
    pub fn inradius(&self) -> f64 {
        match self {
            ConvexBody::Ball { radius, .. } => *radius,
            ConvexBody::Ellipsoid { dim, axes } => {
                axes[..*dim].iter().cloned().fold(f64::INFINITY, f64::min)
            }
            ConvexBody::Support2d { coeffs } => {
                let samples = 1440;
                (0..samples)
                    .map(|k| {
                        support2d_eval(coeffs, 2.0 * std::f64::consts::PI * k as f64 / samples as f64).0
                    })
                    .fold(f64::INFINITY, f64::min)
            }
            ConvexBody::Offset { scale, pad, inner } => scale * inner.inradius() + pad,
        }
    }

    /// Range of boundary principal curvatures.
    pub fn curvature_range(&self) -> (f64, f64) {
        match self {
            ConvexBody::Ball { radius, .. } => (1.0 / radius, 1.0 / radius),
            ConvexBody::Ellipsoid { dim, axes } => {
                let a = &axes[..*dim];
                let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
                let amax = a.iter().cloned().fold(0.0f64, f64::max);
                (amin / (amax * amax), amax / (amin * amin))
            }
            ConvexBody::Support2d { coeffs } => {
                let samples = 1440;
                let (mut rho_min, mut rho_max) = (f64::INFINITY, 0.0f64);
                for k in 0..samples {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
                    let (s, _, s2) = support2d_eval(coeffs, t);
                    rho_min = rho_min.min(s + s2);
                    rho_max = rho_max.max(s + s2);
                }
                (1.0 / rho_max, 1.0 / rho_min)
            }
            ConvexBody::Offset { scale, pad, inner } => {
                // kappa -> kappa / (scale + pad * kappa) is monotone increasing.
                let (lo, hi) = inner.curvature_range();
                (lo / (scale + pad * lo), hi / (scale + pad * hi))
            }
        }
    }

    pub fn is_unit_ball(&self) -> bool {
        matches!(self, ConvexBody::Ball { radius, .. } if (radius - 1.0).abs() < 1e-12)
    }

    /// Signed distance and foot-point data; positive inside.
    pub fn signed_distance(&self, x: V3) -> Result<DistanceData, GeometryError> {
        let ext = self.extent();
        for i in 0..self.dim() {
            if x[i].abs() > 2.0 * ext[i].max(1.0) {
                return Err(GeometryError::ProjectionDiverged(format!(
                    "query point {x:?} outside twice the body extent"
                )));
            }
        }
        let raw = self.project(x)?;
        Ok(finish_distance(self.dim(), raw))
    }

    fn project(&self, x: V3) -> Result<RawProj, GeometryError> {
        match self {
            ConvexBody::Ball { dim, radius } => Ok(project_ball(*dim, *radius, x)),
            ConvexBody::Ellipsoid { dim, axes } => project_ellipsoid(*dim, *axes, x),
            ConvexBody::Support2d { coeffs } => project_support2d(coeffs, x),
            ConvexBody::Offset { scale: sc, pad, inner } => {
                let inner_raw = inner.project(scale(x, 1.0 / *sc))?;
                Ok(offset_proj(inner_raw, *sc, *pad))
            }
        }
    }
}

fn offset_proj(inner: RawProj, s: f64, pad: f64) -> RawProj {
    let mut kappa = [0.0; 2];
    for i in 0..2 {
        kappa[i] = inner.kappa[i] / (s + pad * inner.kappa[i]);
    }
    RawProj {
        d: s * inner.d + pad,
        foot: axpy(scale(inner.foot, s), pad, inner.nu),
        nu: inner.nu,
        kappa,
        dirs: inner.dirs,
        regular: inner.regular,
    }
}

fn finish_distance(n: usize, raw: RawProj) -> DistanceData {
    let grad_d = scale(raw.nu, -1.0);
    let mut hess_d = SymMat::zero(n);
    let mut regular = raw.regular;
    for i in 0..n - 1 {
        let denom = 1.0 - raw.kappa[i] * raw.d;
        if denom <= 1e-9 {
            regular = false;
        } else {
            hess_d.add_outer(raw.dirs[i], -raw.kappa[i] / denom);
        }
    }
    DistanceData {
        d: raw.d,
        foot: raw.foot,
        nu: raw.nu,
        kappa: raw.kappa,
        dirs: raw.dirs,
        grad_d,
        hess_d,
        regular,
    }
}

fn project_ball(n: usize, radius: f64, x: V3) -> RawProj {
    let r = norm(x);
    let (foot, nu, regular) = if r < 1e-14 {
        // center: every boundary point is nearest; pick a fixed axis
        let mut f = ZERO_V;
        f[0] = radius;
        (f, [1.0, 0.0, 0.0], false)
    } else {
        let nu = scale(x, 1.0 / r);
        (scale(nu, radius), nu, true)
    };
    RawProj {
        d: radius - r,
        foot,
        nu,
        kappa: [1.0 / radius; 2],
        dirs: tangent_basis(n, nu),
        regular,
    }
}

/// Decreasing rational equation for the ellipsoid projection multiplier:
/// the foot is `y_i = a_i^2 x_i / (a_i^2 + m)` with `sum (y_i/a_i)^2 = 1`.
fn ellipsoid_multiplier(a: &[f64], x: &[f64]) -> Result<f64, GeometryError> {
    let g = |m: f64| -> f64 {
        let mut acc = -1.0;
        for (ai, xi) in a.iter().zip(x) {
            let t = ai * xi / (ai * ai + m);
            acc += t * t;
        }
        acc
    };
    let m_min = a.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    let mut lo = -m_min + 1e-300;
    // expand to the right until g < 0
    let mut hi = m_min.max(1.0);
    for _ in 0..200 {
        if g(hi) < 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if g(hi) >= 0.0 {
        return Err(GeometryError::ProjectionDiverged("multiplier bracket".into()));
    }
    // guard the left end: move lo right until finite and positive
    let mut step = (hi - lo) * 0.25;
    while g(lo + step) < 0.0 {
        step *= 0.25;
        if step < 1e-280 {
            break;
        }
    }
    lo += 0.0; // lo keeps g = +inf conceptually
    let mut m = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gm = g(m);
        if gm > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
        // Newton step with bisection fallback
        let mut dg = 0.0;
        for (ai, xi) in a.iter().zip(x) {
            let den = ai * ai + m;
            dg += -2.0 * (ai * xi) * (ai * xi) / (den * den * den);
        }
        let newton = m - gm / dg;
        m = if dg < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if gm.abs() < 1e-15 && (hi - lo) < 1e-13 * (1.0 + m.abs()) {
            break;
        }
    }
    Ok(m)
}

fn ellipsoid_curvature(n: usize, axes: V3, y: V3) -> ([f64; 2], [V3; 2], V3) {
    // level function g = sum y_i^2 / a_i^2; normal along its gradient
    let mut gr = ZERO_V;
    for i in 0..n {
        gr[i] = 2.0 * y[i] / (axes[i] * axes[i]);
    }
    let gn = norm(gr);
    let nu = scale(gr, 1.0 / gn);
    let basis = tangent_basis(n, nu);
    let hdiag: V3 = [
        2.0 / (axes[0] * axes[0]),
        2.0 / (axes[1] * axes[1]),
        2.0 / (axes[2] * axes[2]),
    ];
    let hq = |u: V3, v: V3| -> f64 {
        (0..n).map(|i| hdiag[i] * u[i] * v[i]).sum::<f64>() / gn
    };
    if n == 2 {
        ([hq(basis[0], basis[0]), 0.0], basis, nu)
    } else {
        let (p, q, r) = (hq(basis[0], basis[0]), hq(basis[0], basis[1]), hq(basis[1], basis[1]));
        let (l, v) = eig2(p, q, r);
        let d0 = axpy(scale(basis[0], v[0][0]), v[0][1], basis[1]);
        let d1 = axpy(scale(basis[0], v[1][0]), v[1][1], basis[1]);
        ([l[0], l[1]], [d0, d1], nu)
    }
}

fn project_ellipsoid(n: usize, axes: V3, x: V3) -> Result<RawProj, GeometryError> {
    let mut inside_g = -1.0;
    for i in 0..n {
        inside_g += x[i] * x[i] / (axes[i] * axes[i]);
    }

    // candidate feet: the generic multiplier branch over the nonzero
    // components, plus one branch per distinct zero-component axis
    let mut nz: Vec<usize> = Vec::new();
    let mut zero: Vec<usize> = Vec::new();
    for i in 0..n {
        if x[i] == 0.0 {
            zero.push(i);
        } else {
            nz.push(i);
        }
    }

    let mut best: Option<(f64, V3, bool)> = None; // (dist, foot, tie)
    let consider = |dist: f64, foot: V3, tie: bool, best: &mut Option<(f64, V3, bool)>| {
        match *best {
            None => *best = Some((dist, foot, tie)),
            Some((bd, bf, bt)) => {
                let tol = 1e-13 * (1.0 + bd);
                if dist < bd - tol {
                    *best = Some((dist, foot, tie));
                } else if dist <= bd + tol && norm(sub(foot, bf)) > 1e-9 {
                    // tie between distinct feet: medial-axis point
                    *best = Some((bd.min(dist), bf, true));
                } else {
                    let _ = bt;
                }
            }
        }
    };

    if zero.is_empty() {
        let a: Vec<f64> = (0..n).map(|i| axes[i]).collect();
        let xv: Vec<f64> = (0..n).map(|i| x[i]).collect();
        let m = ellipsoid_multiplier(&a, &xv)?;
        let mut y = ZERO_V;
        for i in 0..n {
            y[i] = axes[i] * axes[i] * x[i] / (axes[i] * axes[i] + m);
        }
        consider(norm(sub(x, y)), y, false, &mut best);
    } else if nz.is_empty() {
        // center: nearest vertex along the shortest axis
        let mut k = 0;
        for i in 1..n {
            if axes[i] < axes[k] {
                k = i;
            }
        }
        let mut y = ZERO_V;
        y[k] = axes[k];
        consider(axes[k], y, true, &mut best);
    } else {
        // reduced problem: zero components stay zero
        let a: Vec<f64> = nz.iter().map(|&i| axes[i]).collect();
        let xv: Vec<f64> = nz.iter().map(|&i| x[i]).collect();
        let m = ellipsoid_multiplier(&a, &xv)?;
        let mut y = ZERO_V;
        for &i in &nz {
            y[i] = axes[i] * axes[i] * x[i] / (axes[i] * axes[i] + m);
        }
        consider(norm(sub(x, y)), y, false, &mut best);

        // off-axis branches with multiplier pinned at -a_i^2
        let mut seen: Vec<f64> = Vec::new();
        for &iz in &zero {
            let v = axes[iz] * axes[iz];
            if seen.iter().any(|&s| (s - v).abs() < 1e-15) {
                continue;
            }
            seen.push(v);
            if nz.iter().any(|&j| (axes[j] * axes[j] - v).abs() < 1e-15) {
                continue;
            }
            let mut y = ZERO_V;
            let mut rem = 1.0;
            for &j in &nz {
                y[j] = axes[j] * axes[j] * x[j] / (axes[j] * axes[j] - v);
                rem -= (y[j] / axes[j]) * (y[j] / axes[j]);
            }
            if rem >= 0.0 {
                y[iz] = axes[iz] * rem.sqrt();
                consider(norm(sub(x, y)), y, true, &mut best);
            }
        }
    }

    let (dist, foot, on_branch) = best.unwrap();
    let (kappa, dirs, nu) = ellipsoid_curvature(n, axes, foot);
    let d = if inside_g <= 0.0 { dist } else { -dist };
    Ok(RawProj {
        d,
        foot,
        nu,
        kappa,
        dirs,
        regular: !on_branch,
    })
}

fn project_support2d(coeffs: &[f64], x: V3) -> Result<RawProj, GeometryError> {
    let boundary = |t: f64| -> (V3, f64, f64) {
        let (s, s1, s2) = support2d_eval(coeffs, t);
        let (c, sn) = (t.cos(), t.sin());
        ([s * c - s1 * sn, s * sn + s1 * c, 0.0], s, s2)
    };
    // residual whose root is a foot angle: <x, u_perp(t)> - s'(t)
    let res = |t: f64| -> f64 {
        let (_, s1, _) = support2d_eval(coeffs, t);
        -x[0] * t.sin() + x[1] * t.cos() - s1
    };

    let refine = |t_lo: f64, t_hi: f64| -> Result<f64, GeometryError> {
        let (mut lo, mut hi) = (t_lo, t_hi);
        let (mut flo, fhi) = (res(lo), res(hi));
        if flo.abs() < 1e-15 {
            return Ok(lo);
        }
        if fhi.abs() < 1e-15 {
            return Ok(hi);
        }
        if flo * fhi > 0.0 {
            return Err(GeometryError::ProjectionDiverged("foot bracket lost".into()));
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..100 {
            let f = res(t);
            if f.abs() <= 1e-13 * (1.0 + norm(x)) {
                return Ok(t);
            }
            if f * flo > 0.0 {
                lo = t;
                flo = f;
            } else {
                hi = t;
            }
            let (s, _, s2) = support2d_eval(coeffs, t);
            let df = -(x[0] * t.cos() + x[1] * t.sin()) - (s2 - s) - s; // -(x.u) - s''
            let newton = t - f / df;
            t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Err(GeometryError::ProjectionDiverged(format!("support foot at {x:?}")))
    };

    let samples = 256;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut dist2: Vec<f64> = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = two_pi * k as f64 / samples as f64;
        let (y, _, _) = boundary(t);
        let dxy = sub(x, y);
        dist2.push(dot(dxy, dxy));
    }
    let kbest = (0..samples).min_by(|&a, &b| dist2[a].partial_cmp(&dist2[b]).unwrap()).unwrap();

    let step = two_pi / samples as f64;
    let t0 = kbest as f64 * step;
    let t_star = refine(t0 - step, t0 + step)?;
    let (y, _, _) = boundary(t_star);
    let mut d = -(dot(sub(x, y), [t_star.cos(), t_star.sin(), 0.0]));
    let mut foot = y;
    let mut theta = t_star;
    let mut regular = true;

    // a second, angularly distant near-minimum marks a medial-axis point
    let mut k2: Option<usize> = None;
    for k in 0..samples {
        let sep = (k as i64 - kbest as i64).rem_euclid(samples as i64).min(
            (kbest as i64 - k as i64).rem_euclid(samples as i64),
        );
        if sep > samples as i64 / 8 && dist2[k] < dist2[kbest] * 1.05 + 1e-12 {
            match k2 {
                Some(prev) if dist2[k] >= dist2[prev] => {}
                _ => k2 = Some(k),
            }
        }
    }
    if let Some(k) = k2 {
        let t1 = k as f64 * step;
        if let Ok(t_alt) = refine(t1 - step, t1 + step) {
            let (y2, _, _) = boundary(t_alt);
            let d2 = -(dot(sub(x, y2), [t_alt.cos(), t_alt.sin(), 0.0]));
            if (d2 - d).abs() < 1e-9 * (1.0 + d.abs()) && norm(sub(y2, foot)) > 1e-6 {
                regular = false;
            } else if d2.abs() < d.abs() - 1e-15 {
                d = d2;
                foot = y2;
                theta = t_alt;
            }
        }
    }

    let nu = [theta.cos(), theta.sin(), 0.0];
    let (s_f, _, s2_f) = support2d_eval(coeffs, theta);
    let rho = s_f + s2_f;
    let kappa = 1.0 / rho;
    if 1.0 - kappa * d <= 1e-9 {
        regular = false;
    }
    Ok(RawProj {
        d,
        foot,
        nu,
        kappa: [kappa, 0.0],
        dirs: tangent_basis(2, nu),
        regular,
    })
}

/// Barrier `h = -d + d^2` with `Dh = nu` on the boundary.
///
/// In the principal frame the Hessian is diagonal with the tangential entries
/// `(1 - 2d) k_i / (1 - k_i d)` and the normal entry `2`.
pub fn barrier_h(body: &ConvexBody, x: V3, mu: f64) -> Result<BarrierH, GeometryError> {
    let dd = body.signed_distance(x)?;
    if dd.d < -1e-12 || dd.d > mu + 1e-12 || !dd.regular {
        return Err(GeometryError::OutsideCollar { d: dd.d, mu });
    }
    let n = body.dim();
    let d = dd.d;
    let grad = scale(dd.grad_d, -1.0 + 2.0 * d);
    let mut hess = dd.hess_d.scaled(-1.0 + 2.0 * d);
    hess.add_outer(dd.grad_d, 2.0);
    let (mut lo, mut hi) = (2.0f64, 2.0f64);
    for i in 0..n - 1 {
        let e = (1.0 - 2.0 * d) * dd.kappa[i] / (1.0 - dd.kappa[i] * d);
        lo = lo.min(e);
        hi = hi.max(e);
    }
    Ok(BarrierH {
        h: -d + d * d,
        grad,
        hess,
        eig_lo: lo,
        eig_hi: hi,
    })
}

/// Uniform eigenvalue bounds `kappa0 I <= D^2 h <= K0 I` over the collar
/// `0 <= d <= mu`, from the corner values of the monotone pointwise formula.
pub fn collar_bounds(body: &ConvexBody, mu: f64) -> (f64, f64) {
    let (kmin, kmax) = body.curvature_range();
    let (mut lo, mut hi) = (2.0f64, 2.0f64);
    for k in [kmin, kmax] {
        for d in [0.0, mu] {
            let e = (1.0 - 2.0 * d) * k / (1.0 - k * d);
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    (lo, hi)
}

/// Default collar width: a fifth of the smallest inradius along the
/// deformation family, capped below the smallest curvature radius so the
/// distance function stays smooth on the collar.
pub fn default_collar(body: &ConvexBody) -> f64 {
    let r = body.inradius().min(1.0);
    let kmax = body.curvature_range().1.max(1.0);
    (0.2 * r).min(0.8 / kmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::la::normalize;
    use approx::assert_relative_eq;

    #[test]
    fn ball_distance_fields() {
        let b = make_ball(2, 1.0).unwrap();
        let dd = b.signed_distance([0.5, 0.0, 0.0]).unwrap();
        assert_relative_eq!(dd.d, 0.5, max_relative = 1e-14);
        assert_eq!(dd.grad_d[0], -1.0);
        assert_eq!(dd.grad_d[1], 0.0);
        // D^2 d = diag(0, -2) at r = 1/2
        assert_relative_eq!(dd.hess_d.a[1][1], -2.0, max_relative = 1e-14);
        assert!(dd.hess_d.a[0][0].abs() < 1e-14);
        assert!(dd.regular);

        let center = b.signed_distance([0.0; 3]).unwrap();
        assert_relative_eq!(center.d, 1.0, max_relative = 1e-14);
        assert!(!center.regular);
    }

    #[test]
    fn ball_outside_distance_negative() {
        let b = make_ball(3, 1.0).unwrap();
        let dd = b.signed_distance([1.2, 0.0, 0.0]).unwrap();
        assert_relative_eq!(dd.d, -0.2, max_relative = 1e-12);
        assert_relative_eq!(dd.foot[0], 1.0, max_relative = 1e-12);
        assert_eq!(dd.nu[0], 1.0);
    }

    #[test]
    fn barrier_on_ball_collar() {
        let b = make_ball(2, 1.0).unwrap();
        let bh = barrier_h(&b, [0.9, 0.0, 0.0], 0.2).unwrap();
        assert_relative_eq!(bh.h, -0.1 + 0.01, max_relative = 1e-12);
        // Dh = (1 - 2d) * nu
        assert_relative_eq!(bh.grad[0], 0.8, max_relative = 1e-12);
        // eigenvalues {(1 - 2d) k/(1 - kd), 2} = {0.888..., 2}
        assert_relative_eq!(bh.eig_lo, 0.8 / 0.9, max_relative = 1e-12);
        assert_relative_eq!(bh.eig_hi, 2.0, max_relative = 1e-12);
        // boundary point: Dh = nu exactly
        let bd = barrier_h(&b, [1.0, 0.0, 0.0], 0.2).unwrap();
        assert_relative_eq!(bd.grad[0], 1.0, max_relative = 1e-12);
        assert!(bd.h.abs() < 1e-14);

        assert!(matches!(
            barrier_h(&b, [0.5, 0.0, 0.0], 0.2),
            Err(GeometryError::OutsideCollar { .. })
        ));
    }

    #[test]
    fn ellipse_curvature_range() {
        let e = make_ellipsoid(&[1.2, 0.8]).unwrap();
        let (lo, hi) = e.curvature_range();
        assert_relative_eq!(lo, 0.8 / 1.44, max_relative = 1e-12);
        assert_relative_eq!(hi, 1.2 / 0.64, max_relative = 1e-12);
    }

    #[test]
    fn ellipse_projection_properties() {
        let e = make_ellipsoid(&[1.2, 0.8]).unwrap();
        let pts = [
            [0.5, 0.3, 0.0],
            [-0.9, 0.1, 0.0],
            [0.3, -0.75, 0.0],
            [1.3, 0.4, 0.0],
            [0.5, 0.0, 0.0],  // on the major axis, inside the evolute
            [0.0, 0.5, 0.0],  // on the minor axis
            [1.19, 0.0, 0.0], // on the major axis, past the evolute
        ];
        for x in pts {
            let dd = e.signed_distance(x).unwrap();
            // foot on the boundary
            let g = dd.foot[0] * dd.foot[0] / 1.44 + dd.foot[1] * dd.foot[1] / 0.64;
            assert!((g - 1.0).abs() < 1e-11, "foot residual {g} at {x:?}");
            // |x - foot| = |d| and x = foot - d nu
            assert_relative_eq!(norm(sub(x, dd.foot)), dd.d.abs(), epsilon = 1e-11);
            let back = axpy(dd.foot, -dd.d, dd.nu);
            assert!(norm(sub(back, x)) < 1e-10, "normal alignment at {x:?}");
        }
        // major-axis point inside the evolute has two feet
        assert!(!e.signed_distance([0.5, 0.0, 0.0]).unwrap().regular);
        // past the evolute cusp (2/3) the near vertex is the unique foot
        assert!(e.signed_distance([1.19, 0.0, 0.0]).unwrap().regular);
        // curvature at the vertices
        let dd = e.signed_distance([1.19, 0.0, 0.0]).unwrap();
        assert_relative_eq!(dd.kappa[0], 1.2 / 0.64, max_relative = 1e-9);
    }

    #[test]
    fn ellipsoid_3d_projection() {
        let e = make_ellipsoid(&[1.2, 0.9, 0.7]).unwrap();
        for x in [[0.4, 0.3, 0.2], [-0.2, 0.65, -0.1], [0.9, -0.2, 0.55], [0.3, 0.0, 0.1]] {
            let dd = e.signed_distance(x).unwrap();
            let g: f64 = (0..3)
                .map(|i| dd.foot[i] * dd.foot[i] / [1.44, 0.81, 0.49][i])
                .sum();
            assert!((g - 1.0).abs() < 1e-11);
            assert!(norm(sub(axpy(dd.foot, -dd.d, dd.nu), x)) < 1e-10);
            // principal directions orthonormal and tangent
            assert!(dot(dd.dirs[0], dd.nu).abs() < 1e-12);
            assert!(dot(dd.dirs[1], dd.nu).abs() < 1e-12);
            assert!(dot(dd.dirs[0], dd.dirs[1]).abs() < 1e-12);
        }
        let (lo, hi) = e.curvature_range();
        assert_relative_eq!(lo, 0.7 / 1.44, max_relative = 1e-12);
        assert_relative_eq!(hi, 1.2 / 0.49, max_relative = 1e-12);
    }

    #[test]
    fn support_convexity_checks() {
        assert!(make_support2d(&[1.0, 0.5]).is_ok());
        assert!(matches!(
            make_support2d(&[1.0, 1.1]),
            Err(GeometryError::NonConvex(_))
        ));
        // curvature failure: large second harmonic
        assert!(matches!(
            make_support2d(&[1.0, 0.0, 0.0, 0.4]),
            Err(GeometryError::NonConvex(_))
        ));
    }

    #[test]
    fn support_circle_matches_ball() {
        let c = make_support2d(&[1.0]).unwrap();
        let b = make_ball(2, 1.0).unwrap();
        for x in [[0.3, 0.4, 0.0], [-0.7, 0.2, 0.0], [1.05, -0.3, 0.0]] {
            let ds = c.signed_distance(x).unwrap();
            let db = b.signed_distance(x).unwrap();
            assert_relative_eq!(ds.d, db.d, epsilon = 1e-11);
            assert!(norm(sub(ds.foot, db.foot)) < 1e-10);
            assert_relative_eq!(ds.kappa[0], 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn support_offset_body_projection() {
        // s = 1 + 0.2 cos t: strictly convex egg shape
        let c = make_support2d(&[1.0, 0.2]).unwrap();
        for x in [[0.5, 0.2, 0.0], [-0.6, -0.1, 0.0], [0.0, 0.8, 0.0]] {
            let dd = c.signed_distance(x).unwrap();
            // foot lies on the boundary curve: support residual zero
            let t = dd.nu[1].atan2(dd.nu[0]);
            let (s, s1, _) = support2d_eval(&[1.0, 0.2], t);
            let y = [s * t.cos() - s1 * t.sin(), s * t.sin() + s1 * t.cos(), 0.0];
            assert!(norm(sub(y, dd.foot)) < 1e-9);
            assert!(norm(sub(axpy(dd.foot, -dd.d, dd.nu), x)) < 1e-9);
        }
    }

    #[test]
    fn homotopy_endpoints_and_blend() {
        let e = make_ellipsoid(&[1.2, 0.8]).unwrap();
        assert_eq!(homotopy_domain(&e, 1.0), e);
        assert!(homotopy_domain(&e, 0.0).is_unit_ball());

        let mid = homotopy_domain(&e, 0.5);
        // support function blends exactly
        let u = normalize([0.6, 0.8, 0.0]);
        assert_relative_eq!(mid.support(u), 0.5 * e.support(u) + 0.5, max_relative = 1e-13);

        // distance agrees with a dense boundary sampling of the offset body
        let x = [0.4, 0.2, 0.0];
        let dd = mid.signed_distance(x).unwrap();
        let mut dmin = f64::INFINITY;
        let m = 400_000;
        for k in 0..m {
            let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            // boundary of 0.5*E + 0.5*B1 via its support parametrization
            let u = [t.cos(), t.sin(), 0.0];
            let s = 0.5 * (1.44 * u[0] * u[0] + 0.64 * u[1] * u[1]).sqrt() + 0.5;
            let s1 = -0.5 * (1.44 - 0.64) * u[0] * u[1]
                / (1.44 * u[0] * u[0] + 0.64 * u[1] * u[1]).sqrt();
            let y = [s * u[0] - s1 * u[1], s * u[1] + s1 * u[0], 0.0];
            dmin = dmin.min(norm(sub(x, y)));
        }
        assert_relative_eq!(dd.d, dmin, epsilon = 1e-8);
    }

    #[test]
    fn homotopy_ball_stays_unit() {
        let b = make_ball(2, 1.0).unwrap();
        for t in [0.1, 0.3, 0.7] {
            assert!(homotopy_domain(&b, t).is_unit_ball());
        }
    }

    #[test]
    fn collar_bounds_bracket_pointwise_values() {
        let e = make_ellipsoid(&[1.2, 0.8]).unwrap();
        let mu = default_collar(&e);
        let (k0, big_k0) = collar_bounds(&e, mu);
        assert!(k0 > 0.0);
        for &x in &[[1.1, 0.1, 0.0], [0.0, 0.75, 0.0], [0.6, 0.5, 0.0]] {
            if let Ok(bh) = barrier_h(&e, x, mu) {
                assert!(bh.eig_lo >= k0 - 1e-10);
                assert!(bh.eig_hi <= big_k0 + 1e-10);
                let g = norm(bh.grad);
                assert!((0.5..=2.0).contains(&g));
            }
        }
    }

    #[test]
    fn far_point_rejected() {
        let b = make_ball(2, 1.0).unwrap();
        assert!(matches!(
            b.signed_distance([5.0, 0.0, 0.0]),
            Err(GeometryError::ProjectionDiverged(_))
        ));
    }

    #[test]
    fn bad_dimension_rejected() {
        assert!(matches!(make_ball(4, 1.0), Err(GeometryError::BadDimension(4))));
        assert!(matches!(make_ellipsoid(&[1.0]), Err(GeometryError::BadDimension(1))));
    }
}
