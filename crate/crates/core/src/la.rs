//! Fixed-size vector and symmetric-matrix helpers for dimensions 2 and 3.
//!
//! Points are stored as `[f64; 3]` with trailing components zero in 2-D, so
//! the ambient dimension travels with the structures that own the data.

pub type V3 = [f64; 3];

pub const ZERO_V: V3 = [0.0; 3];

pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `a + s * b`
pub fn axpy(a: V3, s: f64, b: V3) -> V3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub fn normalize(a: V3) -> V3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

pub fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Symmetric matrix; only the leading `n`-by-`n` block is meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    pub n: usize,
    pub a: [[f64; 3]; 3],
}

impl SymMat {
    pub fn zero(n: usize) -> Self {
        SymMat { n, a: [[0.0; 3]; 3] }
    }

    pub fn diag(n: usize, d: V3) -> Self {
        let mut m = SymMat::zero(n);
        for i in 0..n {
            m.a[i][i] = d[i];
        }
        m
    }

    pub fn mul_vec(&self, v: V3) -> V3 {
        let mut out = ZERO_V;
        for i in 0..self.n {
            for j in 0..self.n {
                out[i] += self.a[i][j] * v[j];
            }
        }
        out
    }

    /// `v^T A v`
    pub fn quad(&self, v: V3) -> f64 {
        dot(v, self.mul_vec(v))
    }

    pub fn trace(&self) -> f64 {
        let mut t = 0.0;
        for i in 0..self.n {
            t += self.a[i][i];
        }
        t
    }

    /// `self += s * v v^T`
    pub fn add_outer(&mut self, v: V3, s: f64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i][j] += s * v[i] * v[j];
            }
        }
    }

    pub fn add_scaled(&mut self, other: &SymMat, s: f64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i][j] += s * other.a[i][j];
            }
        }
    }

    pub fn scaled(&self, s: f64) -> SymMat {
        let mut m = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] *= s;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self.a[i][j].abs());
            }
        }
        m
    }
}

/// Closed-form eigenpairs of `[[p, q], [q, r]]`, eigenvalues descending,
/// eigenvectors as rows.
pub fn eig2(p: f64, q: f64, r: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mean = 0.5 * (p + r);
    let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    let (l1, l2) = (mean + disc, mean - disc);
    let v1 = if q.abs() > 1e-300 {
        // (q, l1 - p) and (l1 - r, q) are parallel; take the better conditioned one.
        let (a, b) = if (l1 - p).abs() > (l1 - r).abs() {
            (q, l1 - p)
        } else {
            (l1 - r, q)
        };
        let s = (a * a + b * b).sqrt();
        [a / s, b / s]
    } else if p >= r {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([l1, l2], [v1, [-v1[1], v1[0]]])
}

/// Deterministic orthonormal basis of the plane orthogonal to unit vector `nu`.
///
/// In 2-D the single tangent is the counterclockwise rotation of `nu`.
pub fn tangent_basis(n: usize, nu: V3) -> [V3; 2] {
    if n == 2 {
        return [[-nu[1], nu[0], 0.0], ZERO_V];
    }
    // Pick the coordinate axis least aligned with nu, project and normalize.
    let mut k = 0;
    for i in 1..3 {
        if nu[i].abs() < nu[k].abs() {
            k = i;
        }
    }
    let mut e = ZERO_V;
    e[k] = 1.0;
    let t1 = normalize(axpy(e, -dot(e, nu), nu));
    let t2 = cross(nu, t1);
    [t1, t2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tangent_basis_is_orthonormal() {
        let nu = normalize([0.3, -0.4, 0.85]);
        let [t1, t2] = tangent_basis(3, nu);
        assert!(dot(t1, nu).abs() < 1e-14);
        assert!(dot(t2, nu).abs() < 1e-14);
        assert!(dot(t1, t2).abs() < 1e-14);
        assert!((norm(t1) - 1.0).abs() < 1e-14);
        assert!((norm(t2) - 1.0).abs() < 1e-14);

        let nu2 = normalize([0.6, -0.8, 0.0]);
        let [t1, _] = tangent_basis(2, nu2);
        assert!(dot(t1, nu2).abs() < 1e-14);
        assert!((norm(t1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmat_quad_and_outer() {
        let mut m = SymMat::diag(3, [1.0, 2.0, 3.0]);
        m.add_outer([1.0, 1.0, 0.0], 0.5);
        assert_eq!(m.a[0][1], 0.5);
        assert_eq!(m.quad([1.0, 0.0, 0.0]), 1.5);
        assert_eq!(m.trace(), 7.0);
    }
}
