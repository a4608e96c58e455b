//! Spectral algebra of the phase operator `F(M, f) = sum_i arctan(lambda_i(M) / f)`.
//!
//! Everything downstream (interior residuals, Newton linearizations, the
//! structural level-set checks) is built from the quantities computed here.
//! Eigenvalues are always kept sorted in descending order.

use crate::la::{dot, SymMat, V3, ZERO_V};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Relative eigenvalue gap below which the curvature pair coefficient
/// switches to its diagonal limit.
pub const DEGENERATE_GAP: f64 = 1e-7;

/// Absolute tolerance for symmetry, mean-zero and phase-classification checks.
pub const STRUCT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not symmetric within tolerance (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("f must be positive, got {0}")]
    NonpositiveF(f64),
    #[error("phase constraint violated: {0}")]
    PhaseViolated(String),
    #[error("vector is not mean-zero (|sum| = {0:.3e})")]
    NotMeanZero(f64),
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
}

/// Eigenvalues of a symmetric matrix, descending, with the matching
/// orthonormal frame. `frame[j]` is the unit eigenvector for `lambda[j]`,
/// signed so its first component above 1e-12 in magnitude is positive.
#[derive(Clone, Copy, Debug)]
pub struct Spectrum {
    pub n: usize,
    pub lambda: V3,
    pub frame: [V3; 3],
}

impl Spectrum {
    /// Eigenvalue-only spectrum in the coordinate frame.
    pub fn diagonal(n: usize, mut lambda: V3) -> Spectrum {
        lambda[..n].sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut frame = [ZERO_V; 3];
        for (j, f) in frame.iter_mut().enumerate() {
            f[j] = 1.0;
        }
        Spectrum { n, lambda, frame }
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda[self.n - 1]
    }

    /// `Q diag(d) Q^T` for coefficients `d` given in the eigenframe.
    pub fn congruent(&self, d: V3) -> SymMat {
        let mut m = SymMat::zero(self.n);
        for j in 0..self.n {
            m.add_outer(self.frame[j], d[j]);
        }
        m
    }
}

fn signed(mut v: V3) -> V3 {
    for &c in v.iter() {
        if c.abs() > 1e-12 {
            if c < 0.0 {
                v = [-v[0], -v[1], -v[2]];
            }
            break;
        }
    }
    v
}

/// Cyclic Jacobi sweeps; `a` is destroyed, returns accumulated rotations as columns.
fn jacobi3(a: &mut [[f64; 3]; 3]) -> [V3; 3] {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs()).max(1e-300);
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = if tau >= 0.0 {
                1.0 / (tau + (1.0 + tau * tau).sqrt())
            } else {
                -1.0 / (-tau + (1.0 + tau * tau).sqrt())
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for vk in v.iter_mut() {
                let (vp, vq) = (vk[p], vk[q]);
                vk[p] = c * vp - s * vq;
                vk[q] = s * vp + c * vq;
            }
        }
    }
    // v currently holds rotation rows; transpose to get eigenvector columns.
    [
        [v[0][0], v[1][0], v[2][0]],
        [v[0][1], v[1][1], v[2][1]],
        [v[0][2], v[1][2], v[2][2]],
    ]
}

/// Eigendecomposition. Symmetrizes inputs whose asymmetry is within
/// `STRUCT_TOL` relative to the largest entry and rejects anything worse.
pub fn eig_sym(n: usize, m: &[[f64; 3]; 3]) -> Result<Spectrum, SpectralError> {
    if n != 2 && n != 3 {
        return Err(SpectralError::BadDimension(n));
    }
    let mut scale: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(m[i][j].abs());
            asym = asym.max((m[i][j] - m[j][i]).abs());
        }
    }
    if asym > STRUCT_TOL * scale.max(1.0) {
        return Err(SpectralError::NotSymmetric(asym));
    }
    let mut s = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }

    let mut lambda = ZERO_V;
    let mut frame = [ZERO_V; 3];
    if n == 2 {
        let (l, v) = crate::la::eig2(s[0][0], s[0][1], s[1][1]);
        lambda[0] = l[0];
        lambda[1] = l[1];
        frame[0] = signed([v[0][0], v[0][1], 0.0]);
        frame[1] = signed([v[1][0], v[1][1], 0.0]);
    } else {
        let cols = jacobi3(&mut s);
        let mut order = [0usize, 1, 2];
        let diag = [s[0][0], s[1][1], s[2][2]];
        order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
        for (slot, &j) in order.iter().enumerate() {
            lambda[slot] = diag[j];
            frame[slot] = signed(cols[j]);
        }
    }
    Ok(Spectrum { n, lambda, frame })
}

fn check_f(f: f64) -> Result<(), SpectralError> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(SpectralError::NonpositiveF(f));
    }
    Ok(())
}

/// `sum_i arctan(lambda_i / f)`
pub fn theta_value(sp: &Spectrum, f: f64) -> Result<f64, SpectralError> {
    check_f(f)?;
    let mut t = 0.0;
    for i in 0..sp.n {
        t += (sp.lambda[i] / f).atan();
    }
    Ok(t)
}

/// Linearization and curvature data of the phase operator at a spectrum.
#[derive(Clone, Copy, Debug)]
pub struct OperatorEval {
    pub n: usize,
    pub value: f64,
    /// `f / (f^2 + lambda_i^2)`, the eigenframe gradient coefficients.
    pub grad_eig: V3,
    /// Sum of the gradient coefficients.
    pub trace_f: f64,
    /// Gradient rotated back to ambient coordinates.
    pub grad_ambient: SymMat,
    /// `-2 f lambda_i / (f^2 + lambda_i^2)^2`
    pub hess_diag: V3,
    /// Off-diagonal pair coefficients; `hess_pair[i][j]` weights the
    /// `S_ij S_ji` entry of a perturbation expressed in the eigenframe.
    pub hess_pair: [[f64; 3]; 3],
}

impl OperatorEval {
    /// Second-order form `S : D^2 F : S` for `s` given in the eigenframe.
    pub fn second_form(&self, s: &SymMat) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += self.hess_diag[i] * s.a[i][i] * s.a[i][i];
            for j in 0..self.n {
                if j != i {
                    acc += self.hess_pair[i][j] * s.a[i][j] * s.a[j][i];
                }
            }
        }
        acc
    }
}

pub fn operator_eval(sp: &Spectrum, f: f64) -> Result<OperatorEval, SpectralError> {
    check_f(f)?;
    let n = sp.n;
    let mut grad_eig = ZERO_V;
    let mut hess_diag = ZERO_V;
    let mut value = 0.0;
    for i in 0..n {
        let li = sp.lambda[i];
        let den = f * f + li * li;
        grad_eig[i] = f / den;
        hess_diag[i] = -2.0 * f * li / (den * den);
        value += (li / f).atan();
    }
    let mut hess_pair = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (li, lj) = (sp.lambda[i], sp.lambda[j]);
            if (li - lj).abs() < DEGENERATE_GAP * (1.0 + li.abs() + lj.abs()) {
                hess_pair[i][j] = hess_diag[i];
            } else {
                hess_pair[i][j] = -f * (li + lj) / ((f * f + li * li) * (f * f + lj * lj));
            }
        }
    }
    Ok(OperatorEval {
        n,
        value,
        grad_eig,
        trace_f: grad_eig[0] + grad_eig[1] + grad_eig[2],
        grad_ambient: sp.congruent(grad_eig),
        hess_diag,
        hess_pair,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseClass {
    Critical,
    Supercritical,
    Invalid,
}

/// Target phase together with its excess over the critical level `(n-2) pi/2`.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct PhaseSpec {
    pub n: usize,
    pub theta: f64,
    pub delta: f64,
    pub class: PhaseClass,
}

pub fn phase_classify(n: usize, theta: f64) -> Result<PhaseSpec, SpectralError> {
    if n != 2 && n != 3 {
        return Err(SpectralError::BadDimension(n));
    }
    let critical = (n as f64 - 2.0) * FRAC_PI_2;
    let delta = theta - critical;
    let class = if !theta.is_finite() || delta < -STRUCT_TOL || theta >= n as f64 * FRAC_PI_2 {
        PhaseClass::Invalid
    } else if delta.abs() <= STRUCT_TOL {
        PhaseClass::Critical
    } else {
        PhaseClass::Supercritical
    };
    Ok(PhaseSpec { n, theta, delta, class })
}

/// Structural facts about a spectrum on or above the critical level set.
#[derive(Clone, Copy, Debug)]
pub struct LemmaProps {
    /// `lambda_{n-1} > 0` and `|lambda_n| <= lambda_{n-1}`.
    pub ordered_positive: bool,
    /// Slack `lambda_{n-1} - |lambda_n|`.
    pub order_margin: f64,
    /// `sum 1/lambda_i` when the smallest eigenvalue is negative.
    pub recip_sum: Option<f64>,
    pub recip_ok: bool,
    /// Slack `lambda_n + f cot(delta)` for supercritical phases.
    pub lower_margin: Option<f64>,
    pub lower_ok: bool,
}

pub fn lemma_spectrum_props(
    sp: &Spectrum,
    f: f64,
    ph: &PhaseSpec,
) -> Result<LemmaProps, SpectralError> {
    let theta = theta_value(sp, f)?;
    let critical = (sp.n as f64 - 2.0) * FRAC_PI_2;
    if theta < critical - STRUCT_TOL {
        return Err(SpectralError::PhaseViolated(format!(
            "sample phase {theta} below critical {critical}"
        )));
    }
    let n = sp.n;
    let l_last = sp.lambda[n - 1];
    let l_prev = sp.lambda[n - 2];
    let order_margin = l_prev - l_last.abs();
    let ordered_positive = l_prev > 0.0 && order_margin >= 0.0;

    let (recip_sum, recip_ok) = if l_last < 0.0 {
        let s: f64 = sp.lambda[..n].iter().map(|l| 1.0 / l).sum();
        (Some(s), s <= STRUCT_TOL)
    } else {
        (None, true)
    };

    let (lower_margin, lower_ok) = if ph.delta > STRUCT_TOL {
        let bound = -f / ph.delta.tan();
        let m = l_last - bound;
        (Some(m), m >= -STRUCT_TOL)
    } else {
        (None, true)
    };

    Ok(LemmaProps {
        ordered_positive,
        order_margin,
        recip_sum,
        recip_ok,
        lower_margin,
        lower_ok,
    })
}

/// `sum_i F^{ii} lambda_i`
pub fn wy_value(sp: &Spectrum, f: f64) -> Result<f64, SpectralError> {
    check_f(f)?;
    let mut s = 0.0;
    for i in 0..sp.n {
        let li = sp.lambda[i];
        s += f * li / (f * f + li * li);
    }
    Ok(s)
}

/// `sum_i lambda_i x_i^2` for mean-zero `x` against an admissible spectrum.
///
/// Admissibility here is the structural form that makes the sign claim hold:
/// the top `n-1` eigenvalues are positive and a negative bottom eigenvalue
/// forces a nonpositive reciprocal sum.
pub fn mean_zero_quadratic(sp: &Spectrum, x: V3) -> Result<f64, SpectralError> {
    let n = sp.n;
    let nx = dot(x, x).sqrt();
    let mean: f64 = x[..n].iter().sum();
    if mean.abs() > STRUCT_TOL * nx.max(1e-300) {
        return Err(SpectralError::NotMeanZero(mean.abs()));
    }
    let l_last = sp.lambda[n - 1];
    if sp.lambda[n - 2] <= 0.0 {
        return Err(SpectralError::PhaseViolated(
            "second-smallest eigenvalue is not positive".into(),
        ));
    }
    if l_last < 0.0 {
        let recip: f64 = sp.lambda[..n].iter().map(|l| 1.0 / l).sum();
        if recip > STRUCT_TOL {
            return Err(SpectralError::PhaseViolated(format!(
                "reciprocal sum {recip} is positive"
            )));
        }
    }
    let mut q = 0.0;
    for i in 0..n {
        q += sp.lambda[i] * x[i] * x[i];
    }
    Ok(q)
}
