//! Independent reference solvers used by the integration and acceptance tests.
//!
//! These deliberately avoid the library's own routes: the center comes from
//! a dense KKT system, and band edges from a one-dimensional Lagrangian dual.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Minimizer of `xᵀQx` subject to `x[..t0] = b`, from the bordered system
/// `[2Q Eᵀ; E 0] [x; μ] = [0; b]`.
pub fn kkt_center(q: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let t = q.nrows();
    let t0 = b.len();
    let mut kkt = DMatrix::zeros(t + t0, t + t0);
    kkt.view_mut((0, 0), (t, t)).copy_from(&(q * 2.0));
    for i in 0..t0 {
        kkt[(t + i, i)] = 1.0;
        kkt[(i, t + i)] = 1.0;
    }
    let mut rhs = DVector::zeros(t + t0);
    rhs.rows_mut(t, t0).copy_from(b);
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, t).into_owned()
}

/// `max x[t]` over `{x : xᵀQx ≤ h, x[..t0] = b}`, evaluated through the
/// Lagrangian dual `min_{μ>0} D(μ)` with a golden-section search on `ln μ`.
pub fn coordinate_max(q: &DMatrix<f64>, h: f64, b: &DVector<f64>, t: usize) -> f64 {
    let t_total = q.nrows();
    let t0 = b.len();
    let nf = t_total - t0;
    let q_ff = q.view((t0, t0), (nf, nf)).into_owned();
    let q_fp = q.view((t0, 0), (nf, t0)).into_owned();
    let q_pp = q.view((0, 0), (t0, t0)).into_owned();
    let lu = q_ff.clone().lu();
    let cross = &q_fp * b;
    let base = b.dot(&(&q_pp * b));
    let mut e = DVector::zeros(nf);
    e[t - t0] = 1.0;

    let dual = |log_mu: f64| -> f64 {
        let mu = log_mu.exp();
        let rhs = &e / (2.0 * mu) - &cross;
        let f = lu.solve(&rhs).expect("post block of Q is nonsingular");
        let g = base + 2.0 * f.dot(&cross) + f.dot(&(&q_ff * &f));
        f[t - t0] - mu * (g - h)
    };

    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (dual(x1), dual(x2));
    for _ in 0..300 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = dual(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = dual(x2);
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    f1.min(f2)
}

/// `min x[t]` over the same set, as `−max(−x[t])` via the reflected set.
pub fn coordinate_min(q: &DMatrix<f64>, h: f64, b: &DVector<f64>, t: usize) -> f64 {
    -coordinate_max(q, h, &(-b), t)
}
