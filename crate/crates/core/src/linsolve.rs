//! Sparse direct solves for the Newton linear systems.
//!
//! The Jacobian sparsity pattern is fixed for a given grid (stencils and
//! probe cells are precomputed), so the symbolic factorization is computed
//! once and reused across Newton iterations and warm-started re-solves on
//! the same grid.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinSolveError {
    #[error("sparse assembly failed: {0}")]
    Assemble(String),
    #[error("LU factorization failed: {0}")]
    Factor(String),
    #[error("linear solve produced non-finite values")]
    NonFinite,
}

pub type Trip = Triplet<usize, usize, f64>;

pub struct SparseSystem {
    pub n: usize,
    symbolic: Option<(u64, SymbolicLu<usize>)>,
}

fn pattern_sig(mat: &SparseColMat<usize, f64>) -> u64 {
    let mut h = DefaultHasher::new();
    mat.symbolic().col_ptr().hash(&mut h);
    mat.symbolic().row_idx().hash(&mut h);
    h.finish()
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        static SEQ: std::sync::Once = std::sync::Once::new();
        SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        SparseSystem { n, symbolic: None }
    }

    /// Solve A x = b from triplet data (duplicates are summed).
    pub fn solve(&mut self, trips: &[Trip], b: &[f64]) -> Result<Vec<f64>, LinSolveError> {
        assert_eq!(b.len(), self.n);
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, trips)
            .map_err(|e| LinSolveError::Assemble(format!("{e:?}")))?;
        let sig = pattern_sig(&mat);
        if self.symbolic.as_ref().map(|(s, _)| *s) != Some(sig) {
            let sym = SymbolicLu::try_new(mat.symbolic())
                .map_err(|e| LinSolveError::Factor(format!("{e:?}")))?;
            self.symbolic = Some((sig, sym));
        }
        let sym = self.symbolic.as_ref().unwrap().1.clone();
        // faer panics on an exactly singular pivot instead of returning Err
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            Lu::try_new_with_symbolic(sym, mat.as_ref())
        }))
        .map_err(|_| LinSolveError::Factor("singular pivot".into()))?
        .map_err(|e| LinSolveError::Factor(format!("{e:?}")))?;
        let rhs = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LinSolveError::NonFinite);
        }
        Ok(out)
    }
}
