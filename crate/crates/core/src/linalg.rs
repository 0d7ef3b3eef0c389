//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every pseudo-inverse and rank decision.
pub const PINV_RCOND: f64 = 1e-12;

pub fn ensure_finite_matrix(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_finite_slice(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Singular value decomposition with the rank decided by [`PINV_RCOND`].
///
/// Singular values are sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
    pub rank: usize,
    pub cutoff: f64,
}

impl TruncatedSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        ensure_finite_matrix(m, "matrix passed to SVD")?;
        let svd = SVD::new(m.clone(), true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Numerical("SVD did not produce singular vectors".into())),
        };
        let singular_values = svd.singular_values;
        if singular_values.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical("SVD produced non-finite singular values".into()));
        }
        let s_max = singular_values.iter().cloned().fold(0.0, f64::max);
        let cutoff = PINV_RCOND * s_max;
        let rank = singular_values.iter().filter(|&&s| s > cutoff && s > 0.0).count();
        Ok(Self {
            u,
            singular_values,
            v_t,
            rank,
            cutoff,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.iter().cloned().fold(0.0, f64::max)
    }

    /// Moore–Penrose pseudo-inverse `V S⁺ Uᵀ` over the retained spectrum.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let (m, n) = (self.u.nrows(), self.v_t.ncols());
        let mut out = DMatrix::zeros(n, m);
        for k in 0..self.rank {
            let inv = 1.0 / self.singular_values[k];
            let v_k = self.v_t.row(k).transpose();
            let u_k = self.u.column(k);
            out.ger(inv, &v_k, &u_k.into_owned(), 1.0);
        }
        out
    }

    /// Minimum-norm least-squares solution of `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.v_t.ncols());
        for k in 0..self.rank {
            let coef = self.u.column(k).dot(b) / self.singular_values[k];
            x.axpy(coef, &self.v_t.row(k).transpose(), 1.0);
        }
        x
    }

    /// `Σ_k σ_k u_k v_kᵀ` over the first `keep` singular triplets.
    pub fn reconstruct(&self, keep: usize) -> DMatrix<f64> {
        let (m, n) = (self.u.nrows(), self.v_t.ncols());
        let mut out = DMatrix::zeros(m, n);
        for k in 0..keep.min(self.singular_values.len()) {
            let u_k = self.u.column(k).into_owned();
            let v_k = self.v_t.row(k).transpose();
            out.ger(self.singular_values[k], &u_k, &v_k, 1.0);
        }
        out
    }
}

/// Solves a symmetric positive-definite system, falling back to the
/// pseudo-inverse when Cholesky fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = match a.clone().cholesky() {
        Some(chol) => chol.solve(b),
        None => TruncatedSvd::new(a)?.solve(b),
    };
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical("linear solve produced non-finite values".into()))
    }
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
